"""Recurrence and transience classification.

Finite trees are decided by the compactness dichotomy: every leaf closed
means the motion is positive recurrent, an open leaf makes it transient.
Self-similar unbounded trees described by a :class:`GeneratorSpec` (k
children per branch point, level-m edges of length first_edge * c^m) are
decided by the geometry of their end space: dimension log(k)/log(c) above
one forces transience, dimension at most one with finite length measure on
the ends forces recurrence. The effective-resistance recursion

    R_m = first_edge * c^m + R_{m+1} / k

is the numeric decider: its limit is finite exactly in the transient cases,
and the verdicts are cross-checked against it.

The unbounded recurrent cases cannot be positive recurrent (infinite total
length), but the criteria used here do not separate null recurrence from
recurrence in general, so the verdict string keeps that honest. There is
also a genuine gap at dimension exactly one with infinite end-space length
measure; it cannot occur for these homogeneous generators, but the
``undetermined`` verdict is reserved for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SolverError, TreeStructureError
from .measure import SpeedMeasure
from .tree import TreeSpec

POSITIVE_RECURRENT = "positive_recurrent"
RECURRENT = "null_recurrent_or_recurrent"
TRANSIENT = "transient"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class GeneratorSpec:
    """Homogeneous k-ary generator: level-m edges have length first_edge * c^m."""

    k: int
    c: float
    first_edge: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise TreeStructureError(f"branching number must be an integer >= 1, got {self.k!r}")
        if not (isinstance(self.c, (int, float, np.floating)) and math.isfinite(self.c) and self.c > 0):
            raise TreeStructureError(f"length ratio must be a positive real, got {self.c!r}")
        if not (math.isfinite(self.first_edge) and self.first_edge > 0):
            raise TreeStructureError(f"first edge length must be positive, got {self.first_edge!r}")

    @property
    def bounded(self) -> bool:
        return self.c < 1.0


@dataclass(frozen=True)
class Classification:
    verdict: str
    compact: bool
    resistance_limit: float | None = None
    hausdorff_dimension: float | None = None
    note: str = ""

    def evidence(self) -> dict:
        out: dict = {"compact": self.compact}
        if self.resistance_limit is not None:
            out["resistance_limit"] = self.resistance_limit
        if self.hausdorff_dimension is not None:
            out["hausdorff_dimension"] = self.hausdorff_dimension
        return out


def classify_finite(t: TreeSpec, nu: SpeedMeasure | None = None) -> Classification:
    """Compactness dichotomy for a finitely-represented bounded tree.

    The verdict does not depend on the speed measure; ``nu`` is accepted so
    call sites can pass their full problem description.
    """
    if t.is_compact:
        return Classification(POSITIVE_RECURRENT, True, note="all leaves closed")
    missing = ", ".join(sorted(t.open_leaves))
    return Classification(TRANSIENT, False, note=f"open leaves: {missing}")


def resistance_limit(
    g: GeneratorSpec,
    max_levels: int = 10**4,
    tol: float = 1e-12,
    ceiling: float = 1e12,
) -> float:
    """Limit of the root-to-depth effective resistance, or inf.

    Level m contributes first_edge * (c/k)^m in series-parallel. The
    increments are tested for monotone growth (divergence) and for
    geometric decay (convergence, with the exact geometric tail); partial
    sums crossing the ceiling also count as divergence.
    """
    first, ratio = g.first_edge, g.c / g.k
    if ratio >= 1.0 - 1e-15:
        return math.inf
    total = 0.0
    inc = first
    for _ in range(max_levels):
        total += inc
        nxt = inc * ratio
        if nxt <= tol * max(1.0, total):
            return total + nxt / (1.0 - ratio)
        if total > ceiling:
            return math.inf
        inc = nxt
    # geometric with ratio < 1 always lands in the tolerance branch above
    raise SolverError("resistance recursion did not settle")


def classify_generator(g: GeneratorSpec) -> Classification:
    """Verdict for the infinite homogeneous tree grown from ``g``."""
    res = resistance_limit(g)
    dim = end_space_dimension(g) if g.c > 1.0 else None
    if g.c < 1.0:
        verdict = TRANSIENT
        note = "bounded but incomplete"
        if g.k * g.c < 1.0:
            note += "; the completion is compact and carries a positive recurrent motion (finite total length)"
        else:
            note += "; the completion is compact but has infinite total length"
    elif g.c >= g.k:
        verdict = RECURRENT
        note = "critical length ratio" if g.c == g.k else "end space of dimension below one"
        if g.k == 1:
            note = "single ray"
    else:
        verdict = TRANSIENT
        note = "end space of dimension above one"
    finite_res = math.isfinite(res)
    if finite_res != (verdict == TRANSIENT):
        raise SolverError(
            f"resistance recursion ({res}) contradicts the geometric rule ({verdict}) for {g}"
        )
    return Classification(verdict, compact=False, resistance_limit=res, hausdorff_dimension=dim, note=note)


def classify_random_walk(g: GeneratorSpec | TreeSpec) -> Classification:
    """Verdict for the nearest-neighbor walk on the discrete skeleton.

    The walk on the weighted skeleton and the continuum motion share their
    escape behavior, so finite trees are positive recurrent chains and
    generators follow the end-space rule. Directions of escape must carry
    infinite total resistance, which fails when c < 1.
    """
    if isinstance(g, TreeSpec):
        return Classification(POSITIVE_RECURRENT, g.is_compact, note="finite state chain")
    if g.c < 1.0:
        raise TreeStructureError(
            "the walk correspondence needs every escape direction to have infinite length (c >= 1)"
        )
    out = classify_generator(g)
    return Classification(out.verdict, out.compact, out.resistance_limit, out.hausdorff_dimension,
                          note="discrete skeleton: " + out.note)


def end_space_dimension(g: GeneratorSpec) -> float:
    """Hausdorff dimension log(k)/log(c) of the end space metric."""
    if g.c <= 1.0:
        raise TreeStructureError("the end space at infinity needs c > 1")
    return math.log(g.k) / math.log(g.c)


def branch_radius(g: GeneratorSpec, m: int) -> float:
    """Distance from the root to a level-m branch point (m >= 1)."""
    if g.c == 1.0:
        return g.first_edge * m
    return g.first_edge * (g.c**m - 1.0) / (g.c - 1.0)


def end_ball_counts(g: GeneratorSpec, depths) -> list[tuple[float, int]]:
    """(radius, cover count) pairs for the end space at branch scales.

    Two ends split at the level-m branch point where their choices first
    differ, at end-space distance 1 / branch_radius(m). Ends agreeing on
    their first m-1 choices therefore form one closed ball of radius
    1 / branch_radius(m), and there are k^(m-1) of them; the space is
    ultrametric, so these counts are exact minimal cover sizes.
    """
    out = []
    for m in depths:
        rad = branch_radius(g, m)
        if rad <= 1.0:
            raise TreeStructureError(
                f"depth {m} sits inside the unit ball (radius {rad:.3g}); use deeper truncations"
            )
        out.append((1.0 / rad, g.k ** (m - 1)))
    return out


def box_counting_dimension(g: GeneratorSpec, depth_lo: int = 8, depth_hi: int = 14) -> float:
    """Least-squares slope of log(count) against log(1/radius)."""
    if g.c <= 1.0:
        raise TreeStructureError("the end space at infinity needs c > 1")
    if not 1 <= depth_lo < depth_hi:
        raise TreeStructureError(f"need 1 <= depth_lo < depth_hi, got {depth_lo}, {depth_hi}")
    if g.k == 1:
        return 0.0
    pairs = end_ball_counts(g, range(depth_lo, depth_hi + 1))
    x = np.array([-math.log(rad) for rad, _ in pairs])
    y = np.array([math.log(count) for _, count in pairs])
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def kary_tree(g: GeneratorSpec, depth: int, closed: bool = False) -> TreeSpec:
    """Truncation of the generator's tree at ``depth`` branch levels.

    The root hangs by the first edge from the level-1 branch point "b";
    deeper vertices append their child index, e.g. "b.2.0". Truncation
    leaves are open unless ``closed`` is set, since they stand in for the
    amputated rest of the tree.
    """
    if depth < 1:
        raise TreeStructureError(f"depth must be >= 1, got {depth}")
    n_leaves = g.k**depth
    if n_leaves * 2 > 5 * 10**6:
        raise TreeStructureError(f"truncation would have about {2 * n_leaves} vertices; refusing")
    vertices = ["r", "b"]
    edges = [("r", "b", g.first_edge)]
    frontier = ["b"]
    for level in range(1, depth + 1):
        length = g.first_edge * g.c**level
        nxt = []
        for vid in frontier:
            for j in range(g.k):
                child = f"{vid}.{j}"
                vertices.append(child)
                edges.append((vid, child, length))
                nxt.append(child)
        frontier = nxt
    open_leaves = () if closed else tuple(frontier)
    return TreeSpec(vertices, edges, "r", open_leaves=open_leaves)
