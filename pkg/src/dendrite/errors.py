"""Exception types shared across the package.

The CLI maps these onto exit codes: bad input or parse problems exit 2,
numerical failures exit 3.
"""


class DendriteError(Exception):
    """Base class for all errors raised by this package."""


class TreeStructureError(DendriteError):
    """The combinatorial skeleton is not a valid rooted tree."""


class PointError(DendriteError):
    """A point reference does not name a point of the tree."""


class ParseError(DendriteError):
    """A tree-spec file is malformed.

    Carries the 1-based line (and column when known) of the offending token.
    """

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc = f" ({loc})"
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class MeasureError(DendriteError):
    """A speed measure is invalid or unsupported for the requested operation."""


class SolverError(DendriteError):
    """A numerical computation failed to reach its accuracy contract."""
