"""The line-based tree-spec file format.

A file is UTF-8 text. '#' starts a comment that runs to the end of the
line; tokens are whitespace-separated. The first meaningful line must be
the header ``rtree v1``. After it, in any order:

    vertex <id> [atom <float>] [open]
    edge <id_u> <id_v> <length> [density <float>]
    root <id>

Vertices must be declared before they are referenced. Edges default to
density 1 (the length measure); ``serialize`` omits that default and zero
atoms, writes floats with 17 significant digits, and emits vertices, edges,
and the root in tree order, so serialize(parse(text)) is a fixed point:
canonical output re-parses to the same tree and measure byte for byte.

``gen`` stamps self-similar truncations with a machine-readable comment
(see ``generator_comment``); ``read_generator`` recovers it so downstream
commands can classify the infinite object rather than its truncation.
"""

from __future__ import annotations

import re

import numpy as np

from .classify import GeneratorSpec
from .errors import ParseError
from .measure import SpeedMeasure
from .tree import TreeSpec

HEADER = "rtree v1"

_TOKEN = re.compile(r"\S+")
_GEN = re.compile(
    r"^#\s*generator:\s*kary\s+k=(\d+)\s+c=([0-9.eE+-]+)\s+depth=(\d+)\s+first=([0-9.eE+-]+)\s*$"
)


def _tokens(line: str):
    """(token, 1-based column) pairs, comment stripped."""
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    return [(m.group(0), m.start() + 1) for m in _TOKEN.finditer(line)]


def _float(tok: str, what: str, ln: int, col: int) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"{what} must be a number, got {tok!r}", ln, col) from None
    if not np.isfinite(x):
        raise ParseError(f"{what} must be finite, got {tok!r}", ln, col)
    return x


def parse_string(text: str) -> tuple[TreeSpec, SpeedMeasure]:
    vertices: list[str] = []
    seen: dict[str, int] = {}
    atoms: dict[str, float] = {}
    open_leaves: list[str] = []
    edges: list[tuple[str, str, float]] = []
    densities: list[float] = []
    root: str | None = None
    header_done = False

    for ln, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw)
        if not toks:
            continue
        if not header_done:
            if [t for t, _ in toks] != HEADER.split():
                raise ParseError(f"expected header {HEADER!r}", ln, toks[0][1])
            header_done = True
            continue
        kw, kcol = toks[0]
        args = toks[1:]
        if kw == "vertex":
            if not args:
                raise ParseError("vertex needs an id", ln, kcol)
            vid, vcol = args[0]
            if vid in seen:
                raise ParseError(f"duplicate vertex {vid!r}", ln, vcol)
            seen[vid] = ln
            vertices.append(vid)
            i = 1
            while i < len(args):
                opt, ocol = args[i]
                if opt == "atom":
                    if vid in atoms:
                        raise ParseError(f"duplicate atom for {vid!r}", ln, ocol)
                    if i + 1 >= len(args):
                        raise ParseError("atom needs a value", ln, ocol)
                    val = _float(args[i + 1][0], "atom", ln, args[i + 1][1])
                    if val < 0:
                        raise ParseError(f"atom must be nonnegative, got {val}", ln, args[i + 1][1])
                    atoms[vid] = val
                    i += 2
                elif opt == "open":
                    if vid in open_leaves:
                        raise ParseError(f"duplicate open for {vid!r}", ln, ocol)
                    open_leaves.append(vid)
                    i += 1
                else:
                    raise ParseError(f"unknown vertex option {opt!r}", ln, ocol)
        elif kw == "edge":
            if len(args) < 3:
                raise ParseError("edge needs two vertex ids and a length", ln, kcol)
            (u, ucol), (v, vcol), (ltok, lcol) = args[0], args[1], args[2]
            if u not in seen:
                raise ParseError(f"unknown vertex {u!r}", ln, ucol)
            if v not in seen:
                raise ParseError(f"unknown vertex {v!r}", ln, vcol)
            length = _float(ltok, "length", ln, lcol)
            if length <= 0:
                raise ParseError(f"length must be positive, got {length}", ln, lcol)
            dens = 1.0
            rest = args[3:]
            if rest:
                if rest[0][0] != "density" or len(rest) != 2:
                    raise ParseError("edge options: density <float>", ln, rest[0][1])
                dens = _float(rest[1][0], "density", ln, rest[1][1])
                if dens < 0:
                    raise ParseError(f"density must be nonnegative, got {dens}", ln, rest[1][1])
            edges.append((u, v, length))
            densities.append(dens)
        elif kw == "root":
            if len(args) != 1:
                raise ParseError("root needs exactly one id", ln, kcol)
            rid, rcol = args[0]
            if root is not None:
                raise ParseError("duplicate root line", ln, kcol)
            if rid not in seen:
                raise ParseError(f"unknown vertex {rid!r}", ln, rcol)
            root = rid
        else:
            raise ParseError(f"unknown keyword {kw!r}", ln, kcol)

    if not header_done:
        raise ParseError(f"empty input: expected header {HEADER!r}", 1)
    if root is None:
        raise ParseError("missing root line", None)
    t = TreeSpec(vertices, edges, root, open_leaves)
    nu = SpeedMeasure(t, np.array(densities), {v: a for v, a in atoms.items() if a != 0.0})
    return t, nu


def parse_tree_file(path) -> tuple[TreeSpec, SpeedMeasure]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return parse_string(text)


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def serialize(t: TreeSpec, nu: SpeedMeasure, comments: tuple[str, ...] = ()) -> str:
    """Canonical text for a tree and its measure; a fixed point of parse."""
    if nu.tree is not t:
        raise ParseError("measure lives on a different tree")
    lines = [HEADER]
    for c in comments:
        lines.append(f"# {c}")
    for i, vid in enumerate(t.vertices):
        parts = ["vertex", vid]
        if nu.vertex_atom[i] != 0.0:
            parts += ["atom", _g17(nu.vertex_atom[i])]
        if vid in t.open_leaves:
            parts.append("open")
        lines.append(" ".join(parts))
    for ei, e in enumerate(t.edges):
        parts = ["edge", e.u, e.v, _g17(e.length)]
        if nu.edge_density[ei] != 1.0:
            parts += ["density", _g17(nu.edge_density[ei])]
        lines.append(" ".join(parts))
    lines.append(f"root {t.root}")
    return "\n".join(lines) + "\n"


def write_tree_file(path, t: TreeSpec, nu: SpeedMeasure, comments: tuple[str, ...] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(t, nu, comments))


def generator_comment(g: GeneratorSpec, depth: int) -> str:
    return f"generator: kary k={g.k} c={_g17(g.c)} depth={depth} first={_g17(g.first_edge)}"


def read_generator(text: str) -> tuple[GeneratorSpec, int] | None:
    """Recover the self-similar generator a file was truncated from, if stamped."""
    for raw in text.splitlines():
        m = _GEN.match(raw.strip())
        if m:
            k, c, depth, first = m.groups()
            return GeneratorSpec(int(k), float(c), float(first)), int(depth)
    return None
