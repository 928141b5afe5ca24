"""Capacities, harmonic minimizers, Green kernels, and hitting laws.

The discrete quadratic form on a tree assigns every edge the conductance
1/(2 * length); together with the half-edge lumped mass this makes the form
of an edgewise-linear function equal to its continuum Dirichlet energy, so
quantities that are exact for edgewise-linear minimizers (two-point
capacities, hitting probabilities, the killed Green kernel) come out exact
at any mesh resolution.

Closed forms used throughout reduce to distance arithmetic through the
median identity r(c(x,a,b), b) = (r(x,b) + r(a,b) - r(x,a)) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import PiecewiseLinearFn
from .errors import MeasureError, PointError, SolverError
from .measure import SpeedMeasure
from .tree import Mesh, PointRef, TreeSpec

_DENSE_LIMIT = 800


class FormMatrix:
    """Sparse quadratic form Q + alpha * diag(mass) on a tree's vertices."""

    def __init__(self, tree: TreeSpec, nu: SpeedMeasure, alpha: float = 0.0):
        if nu.tree is not tree:
            raise MeasureError("measure lives on a different tree")
        if alpha < 0 or not np.isfinite(alpha):
            raise SolverError(f"alpha must be a nonnegative real, got {alpha}")
        self.tree = tree
        self.alpha = float(alpha)
        n = tree.n_vertices
        self.conductance = np.fromiter(
            (1.0 / (2.0 * e.length) for e in tree.edges), dtype=np.float64, count=tree.n_edges
        )
        rows, cols, vals = [], [], []
        for ei, e in enumerate(tree.edges):
            i, j = tree.index(e.u), tree.index(e.v)
            c = self.conductance[ei]
            rows += [i, j, i, j]
            cols += [j, i, i, j]
            vals += [-c, -c, c, c]
        self.Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        self.mass = nu.lump().mass
        self._A = self.Q + self.alpha * sp.diags(self.mass) if alpha else self.Q
        self._dense = None

    def quad(self, u: np.ndarray) -> float:
        """The form value E(u, u) + alpha * (u, u)_mass."""
        return float(u @ (self.Q @ u) + self.alpha * np.dot(self.mass, u * u))

    def _dense_matrix(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self._A.toarray()
        return self._dense

    def dirichlet_solve(self, fixed: Mapping[int, float], rhs: np.ndarray | None = None) -> np.ndarray:
        """Solve (Q + alpha M) u = rhs with the given entries of u pinned.

        Minimizes the form plus linear term over the free entries; with
        alpha == 0 at least one entry must be pinned or the system is
        singular.
        """
        n = self.tree.n_vertices
        if self.alpha == 0.0 and not fixed:
            raise SolverError("the unkilled form is singular: pin at least one vertex")
        u = np.zeros(n)
        for i, val in fixed.items():
            u[i] = val
        free = np.setdiff1d(np.arange(n), np.fromiter(fixed.keys(), dtype=np.int64, count=len(fixed)))
        if len(free) == 0:
            return u
        b = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=np.float64).copy()
        b = b[free]
        if fixed:
            cols = self._A[free][:, list(fixed)]
            b = b - cols @ np.fromiter(fixed.values(), dtype=np.float64, count=len(fixed))
        if n <= _DENSE_LIMIT:
            A_ff = self._dense_matrix()[np.ix_(free, free)]
            try:
                u_f = np.linalg.solve(A_ff, b)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"dirichlet system is singular: {exc}") from exc
            resid = np.linalg.norm(A_ff @ u_f - b)
        else:
            A_ff = self._A[free][:, free].tocsc()
            u_f = spla.spsolve(A_ff, b)
            resid = np.linalg.norm(A_ff @ u_f - b)
        scale = np.linalg.norm(b) + np.linalg.norm(u_f) + 1.0
        if not np.all(np.isfinite(u_f)) or resid > 1e-8 * scale:
            raise SolverError(f"dirichlet solve residual {resid:.3e} exceeds tolerance")
        u[free] = u_f
        return u


def assemble_form(t: TreeSpec, nu: SpeedMeasure, alpha: float = 0.0) -> FormMatrix:
    return FormMatrix(t, nu, alpha)


@dataclass
class HarmonicSolution:
    """Minimizer of the form among functions that are 0 on A and 1 on B."""

    fn: PiecewiseLinearFn
    energy_value: float
    mesh: Mesh


def _pin(t: TreeSpec, points: Iterable[PointRef]) -> Mesh:
    return t.split_at(points)


def _vertex_ids(mesh: Mesh, points: Sequence[PointRef]) -> list[int]:
    out = []
    for p in points:
        q = mesh.map_point(p)
        if q.vertex is None:
            raise PointError(f"{p} did not land on a mesh vertex")
        out.append(mesh.tree.index(q.vertex))
    return out


def harmonic(
    t: TreeSpec,
    nu: SpeedMeasure,
    A: Sequence[PointRef],
    B: Sequence[PointRef],
    alpha: float = 0.0,
) -> HarmonicSolution:
    """Solve the two-set variational problem: 0 on A, 1 on B, minimal form."""
    A, B = list(A), list(B)
    if not B:
        raise PointError("B must be nonempty")
    if not A and alpha == 0.0:
        raise PointError("A may be empty only for alpha > 0")
    mesh = _pin(t, [*A, *B])
    nu_m = nu.refine(mesh)
    form = FormMatrix(mesh.tree, nu_m, alpha)
    a_idx = _vertex_ids(mesh, A)
    b_idx = _vertex_ids(mesh, B)
    if set(a_idx) & set(b_idx):
        raise PointError("A and B must be disjoint")
    fixed = {i: 0.0 for i in a_idx}
    fixed.update({i: 1.0 for i in b_idx})
    u = form.dirichlet_solve(fixed)
    return HarmonicSolution(PiecewiseLinearFn(mesh.tree, u), form.quad(u), mesh)


def capacity(
    t: TreeSpec,
    nu: SpeedMeasure,
    A: Sequence[PointRef],
    B: Sequence[PointRef],
    alpha: float = 0.0,
) -> float:
    """The form value of the harmonic minimizer (0 on A, 1 on B)."""
    return harmonic(t, nu, A, B, alpha).energy_value


def green_two_point(t: TreeSpec, x: PointRef, b: PointRef, y: PointRef) -> float:
    """Green kernel of the diffusion killed at b, charge at x, evaluated at y.

    Equals twice the distance from b to the median of (y, x, b).
    """
    d_xb = t.distance(x, b)
    if d_xb == 0.0:
        raise PointError("green_two_point needs x distinct from b")
    return d_xb + t.distance(y, b) - t.distance(x, y)


@dataclass
class GreenKernel:
    """Variational Green function against a finite atomic charge."""

    fn: PiecewiseLinearFn
    mesh: Mesh


def green_general(
    t: TreeSpec,
    nu: SpeedMeasure,
    A: Sequence[PointRef],
    kappa: Sequence[tuple[PointRef, float]],
    alpha: float = 0.0,
) -> GreenKernel:
    """Minimize E_alpha(g, g) - 2 * integral of g against kappa, with g = 0 on A."""
    A = list(A)
    kappa = list(kappa)
    if not A and alpha == 0.0:
        raise PointError("A may be empty only for alpha > 0")
    if not kappa:
        raise PointError("kappa must charge at least one point")
    for _, w in kappa:
        if not np.isfinite(w) or w < 0:
            raise PointError(f"kappa masses must be nonnegative, got {w}")
    mesh = _pin(t, [*A, *(p for p, _ in kappa)])
    nu_m = nu.refine(mesh)
    form = FormMatrix(mesh.tree, nu_m, alpha)
    a_idx = _vertex_ids(mesh, A)
    rhs = np.zeros(mesh.tree.n_vertices)
    ids = _vertex_ids(mesh, [p for p, _ in kappa])
    for i, (_, w) in zip(ids, kappa):
        rhs[i] += w
    u = form.dirichlet_solve({i: 0.0 for i in a_idx}, rhs)
    return GreenKernel(PiecewiseLinearFn(mesh.tree, u), mesh)


def hitting_probability(t: TreeSpec, x: PointRef, a: PointRef, b: PointRef) -> float:
    """Probability that the diffusion started at x reaches a before b."""
    d_ab = t.distance(a, b)
    if d_ab == 0.0:
        raise PointError("hitting_probability needs a distinct from b")
    num = 0.5 * (t.distance(x, b) + d_ab - t.distance(x, a))
    return float(min(max(num / d_ab, 0.0), 1.0))


def star_exit_distribution(t: TreeSpec, x: PointRef, targets: Sequence[PointRef]) -> np.ndarray:
    """First-exit law over targets whose arcs from x are disjoint off x.

    The weight of each target is the reciprocal of its distance from x.
    """
    targets = list(targets)
    if not targets:
        raise PointError("need at least one target")
    d = np.array([t.distance(x, p) for p in targets])
    if np.any(d == 0.0):
        raise PointError("targets must be distinct from x")
    scale = max(1.0, float(d.max()))
    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            through = d[i] + d[j]
            if abs(t.distance(targets[i], targets[j]) - through) > 1e-9 * scale:
                raise PointError(
                    f"targets {i} and {j} are not separated through x: their arc avoids it"
                )
    w = 1.0 / d
    return w / w.sum()


def distance_function(t: TreeSpec, a: PointRef) -> PiecewiseLinearFn:
    """r(a, .) as an edgewise-linear function; a must be a vertex."""
    if a.vertex is None:
        raise PointError("split the tree at a first: r(a, .) kinks at interior points")
    vals = [t.distance(a, t.point(v)) for v in t.vertices]
    return PiecewiseLinearFn(t, vals)


def hitting_function(t: TreeSpec, a: PointRef, b: PointRef) -> PiecewiseLinearFn:
    """x -> r(c(x,a,b), b), the unnormalized hitting kernel; a, b vertices."""
    if a.vertex is None or b.vertex is None:
        raise PointError("split the tree at a and b first: the kernel kinks there")
    d_ab = t.distance(a, b)
    vals = [
        0.5 * (t.distance(t.point(v), b) + d_ab - t.distance(t.point(v), a))
        for v in t.vertices
    ]
    return PiecewiseLinearFn(t, vals)


def expected_occupation(
    t: TreeSpec,
    nu: SpeedMeasure,
    x: PointRef,
    b: PointRef,
    f: PiecewiseLinearFn | None = None,
) -> float:
    """Expected integral of f along the diffusion from x until it hits b.

    Closed form: twice the nu-integral of r(c(., x, b), b) * f. Requires a
    compact tree (no open leaves), where the diffusion is recurrent and the
    occupation is finite.
    """
    if t.open_leaves:
        raise MeasureError("occupation requires a compact tree: open leaves present")
    if nu.tree is not t:
        raise MeasureError("measure lives on a different tree")
    if f is not None and f.tree is not t:
        raise MeasureError("f lives on a different tree")
    if t.distance(x, b) == 0.0:
        return 0.0
    mesh = _pin(t, [x, b])
    t2 = mesh.tree
    nu2 = nu.refine(mesh)
    f2 = f.on_mesh(mesh) if f is not None else PiecewiseLinearFn.constant(t2, 1.0)
    xm, bm = mesh.map_point(x), mesh.map_point(b)
    g = hitting_function(t2, xm, bm)
    acc = float(np.dot(nu2.vertex_atom, g.values * f2.values))
    for ei, e in enumerate(t2.edges):
        i, j = t2.index(e.u), t2.index(e.v)
        gu, gv = g.values[i], g.values[j]
        fu, fv = f2.values[i], f2.values[j]
        gm, fm = 0.5 * (gu + gv), 0.5 * (fu + fv)
        # Simpson: exact for the product of two linear factors
        acc += nu2.edge_density[ei] * e.length * (gu * fu + 4.0 * gm * fm + gv * fv) / 6.0
    return 2.0 * acc


def effective_resistance_to_depth(gen, n: int) -> float:
    """Resistance from the root of a self-similar tree to its depth-n cut.

    ``gen`` carries branching number k, length ratio c, and the first edge
    length; level-m edges have length first_edge * c**m and every branch
    vertex has k children, so the recursion is R_m = len_m + R_{m+1} / k.
    """
    if n < 1:
        raise PointError(f"depth must be at least 1, got {n}")
    R = 0.0
    for m in range(n - 1, -1, -1):
        R = gen.first_edge * gen.c**m + R / gen.k
    return R
