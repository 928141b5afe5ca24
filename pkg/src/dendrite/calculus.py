"""Edgewise-linear functions, gradients, and the Dirichlet form.

A function is stored by its vertex values and interpolated linearly along
edges. Its gradient is the constant slope per edge, taken in the direction
pointing away from the root; the gradient therefore depends on the choice of
root, while the energy does not.

The fundamental identity connecting the two is

    f(y) - f(x) = -I([x^y, x], grad f) + I([x^y, y], grad f)

where x^y is the meet and I(arc, g) integrates the edgewise-constant g over
the arc against length. ``oriented_integral`` computes the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import PointError
from .tree import Mesh, PointRef, TreeSpec


@dataclass
class PiecewiseLinearFn:
    """A continuous function on the tree, linear along every edge."""

    tree: TreeSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.tree.n_vertices,):
            raise PointError(
                f"need one value per vertex ({self.tree.n_vertices}), got shape {self.values.shape}"
            )

    @classmethod
    def from_dict(cls, tree: TreeSpec, mapping: Mapping[str, float], default: float = 0.0):
        vals = np.full(tree.n_vertices, float(default))
        for vid, x in mapping.items():
            vals[tree.index(vid)] = float(x)
        return cls(tree, vals)

    @classmethod
    def constant(cls, tree: TreeSpec, c: float):
        return cls(tree, np.full(tree.n_vertices, float(c)))

    def at(self, vid: str) -> float:
        return float(self.values[self.tree.index(vid)])

    def evaluate(self, p: PointRef) -> float:
        p = self.tree._check(p)
        if p.vertex is not None:
            return self.at(p.vertex)
        e = self.tree.edges[p.edge]
        fu = self.values[self.tree.index(e.u)]
        fv = self.values[self.tree.index(e.v)]
        return float(fu + (fv - fu) * (p.offset / e.length))

    def on_mesh(self, mesh: Mesh) -> "PiecewiseLinearFn":
        """The same function expressed on a subdivision of its tree."""
        if mesh.base is not self.tree:
            raise PointError("mesh does not refine this function's tree")
        vals = np.empty(mesh.tree.n_vertices)
        for i, vid in enumerate(mesh.tree.vertices):
            vals[i] = self.evaluate(mesh.base_point(mesh.tree.point(vid)))
        return PiecewiseLinearFn(mesh.tree, vals)


@dataclass
class EdgeGradient:
    """Edgewise-constant values, read in the direction away from the root."""

    tree: TreeSpec
    slopes: np.ndarray

    def __post_init__(self):
        self.slopes = np.asarray(self.slopes, dtype=np.float64)
        if self.slopes.shape != (self.tree.n_edges,):
            raise PointError(
                f"need one slope per edge ({self.tree.n_edges}), got shape {self.slopes.shape}"
            )


def gradient(f: PiecewiseLinearFn) -> EdgeGradient:
    """Per-edge slope of f, oriented away from the root."""
    t = f.tree
    slopes = np.empty(t.n_edges)
    for ei, e in enumerate(t.edges):
        child = t._edge_child[ei]
        parent = t.index(e.u) if child != t.index(e.u) else t.index(e.v)
        slopes[ei] = (f.values[child] - f.values[parent]) / e.length
    return EdgeGradient(t, slopes)


def _edge_values(t: TreeSpec, g) -> np.ndarray:
    if isinstance(g, EdgeGradient):
        if g.tree is not t:
            raise PointError("gradient belongs to a different tree")
        return g.slopes
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (t.n_edges,):
        raise PointError(f"need one value per edge ({t.n_edges}), got shape {g.shape}")
    return g


def arc_integral(t: TreeSpec, g, x: PointRef, y: PointRef) -> float:
    """Integral of the edgewise-constant g over the arc [x, y] against length."""
    vals = _edge_values(t, g)
    return float(sum(abs(s1 - s0) * vals[ei] for ei, s0, s1 in t._segments(x, y)))


def oriented_integral(t: TreeSpec, g, x: PointRef, y: PointRef) -> float:
    """Integral of g from x to y, signed through the meet of x and y."""
    m = t.meet(x, y)
    return -arc_integral(t, g, m, x) + arc_integral(t, g, m, y)


def energy(f: PiecewiseLinearFn, g: PiecewiseLinearFn | None = None) -> float:
    """The Dirichlet form: half the length integral of the two slopes' product."""
    if g is None:
        g = f
    if f.tree is not g.tree:
        raise PointError("energy needs both functions on the same tree")
    sf = gradient(f).slopes
    sg = gradient(g).slopes
    lengths = np.fromiter((e.length for e in f.tree.edges), dtype=np.float64, count=f.tree.n_edges)
    return float(0.5 * np.dot(sf * sg, lengths))
