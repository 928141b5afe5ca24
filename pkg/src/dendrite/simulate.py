"""Monte Carlo simulation of the diffusion via its embedded chain.

``build_chain`` discretizes the motion on a mesh: from vertex x the chain
jumps to neighbor y with probability proportional to 1/r(x, y), after an
exponential holding time with rate (sum of conductances 1/(2 r))/mass(x).
With this normalization the chain's expected hitting and occupation
functionals solve the same linear system as the discrete form, so they are
exact for the mesh and converge to the continuum values as h -> 0. The path
law itself is only asymptotically correct; tests assert moments, not paths.

Randomness is a counter-based 64-bit stream (SplitMix64). Walk i draws its
key as fin(seed XOR fin(i)), where fin is the SplitMix64 finalizer, and its
j-th variate as fin(key + j * GOLDEN) scaled to [0, 1). Every walk owns a
substream, and aggregation is an ordered fold over fixed-size batches, so
results are bit-identical for any worker count. Thread count comes from the
DENDRITE_THREADS environment variable (default 1); the kernel releases the
GIL, so threads scale.

Walk statuses: 0 the walk reached the stop set, 1 it was absorbed at an
open leaf (killed), 2 it exhausted max_steps (censored), 3 it ran to the
time horizon.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .calculus import PiecewiseLinearFn
from .errors import MeasureError, PointError, SolverError, TreeStructureError
from .measure import SpeedMeasure
from .potential import expected_occupation
from .tree import Mesh, PointRef, TreeSpec

HIT, KILLED, CENSORED, HORIZON = 0, 1, 2, 3

BATCH = 4096
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U53 = 1.0 / 9007199254740992.0  # 2^-53


@dataclass(frozen=True)
class HitSet:
    """Stop when the walk reaches any of these points (mesh vertices)."""

    points: tuple[PointRef, ...]

    def __init__(self, points):
        object.__setattr__(self, "points", tuple(points))
        if not self.points:
            raise PointError("the stop set must be nonempty")


@dataclass(frozen=True)
class TimeHorizon:
    """Stop when the walk's clock reaches this time."""

    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise PointError(f"the horizon must be a nonnegative real, got {self.t}")


@dataclass(frozen=True)
class WalkConfig:
    mesh_h: float
    n_walks: int
    seed: int
    stop: HitSet | TimeHorizon
    clock: str = "exponential"
    max_steps: int = 10**9

    def __post_init__(self):
        if not (math.isfinite(self.mesh_h) and self.mesh_h > 0):
            raise PointError(f"mesh_h must be positive, got {self.mesh_h}")
        if self.n_walks < 1:
            raise PointError(f"n_walks must be >= 1, got {self.n_walks}")
        if self.clock not in ("exponential", "jump_count_only"):
            raise PointError(f"unknown clock {self.clock!r}")
        if self.max_steps < 1:
            raise PointError(f"max_steps must be >= 1, got {self.max_steps}")
        if not isinstance(self.stop, (HitSet, TimeHorizon)):
            raise PointError("stop must be a HitSet or a TimeHorizon")


class Chain:
    """Immutable description of the embedded chain on a mesh.

    CSR-style arrays: neighbors of vertex i are nbr[indptr[i]:indptr[i+1]]
    with cumulative jump probabilities cumprob over the same slice.
    mean_hold[i] is the expected holding time, kill[i] marks absorbing open
    leaves.
    """

    def __init__(self, mesh: Mesh, nu: SpeedMeasure):
        t = mesh.tree
        n = t.n_vertices
        lumped = nu.lump().mass
        kill = np.zeros(n, dtype=np.bool_)
        for vid in t.open_leaves:
            kill[t.index(vid)] = True
        counts = np.zeros(n, dtype=np.int64)
        for e in t.edges:
            counts[t.index(e.u)] += 1
            counts[t.index(e.v)] += 1
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        nbr = np.zeros(indptr[-1], dtype=np.int64)
        cond = np.zeros(indptr[-1], dtype=np.float64)
        cursor = indptr[:-1].copy()
        for e in t.edges:
            iu, iv = t.index(e.u), t.index(e.v)
            c = 1.0 / (2.0 * e.length)
            nbr[cursor[iu]] = iv
            cond[cursor[iu]] = c
            cursor[iu] += 1
            nbr[cursor[iv]] = iu
            cond[cursor[iv]] = c
            cursor[iv] += 1
        rate_num = np.zeros(n)
        for i in range(n):
            rate_num[i] = cond[indptr[i]:indptr[i + 1]].sum()
        mean_hold = np.zeros(n)
        for i in range(n):
            if kill[i]:
                continue
            if lumped[i] <= 0.0:
                raise MeasureError(
                    f"zero lumped mass at mesh vertex {t.vertices[i]!r}: the chain cannot hold there"
                )
            mean_hold[i] = lumped[i] / rate_num[i]
        cumprob = np.zeros_like(cond)
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            if hi > lo:
                cumprob[lo:hi] = np.cumsum(cond[lo:hi]) / rate_num[i]
                cumprob[hi - 1] = 1.0
        self.mesh = mesh
        self.tree = t
        self.nu = nu
        self.mass = lumped
        self.indptr = indptr
        self.nbr = nbr
        self.cumprob = cumprob
        self.mean_hold = mean_hold
        self.kill = kill

    def vertex_of(self, p: PointRef) -> int:
        """Mesh vertex index of a point of the base tree."""
        q = self.mesh.map_point(p)
        if q.vertex is None:
            raise PointError(
                f"{p} is not a mesh vertex; pass it via build_chain(..., pins=...) so the mesh contains it"
            )
        return self.tree.index(q.vertex)

    def jump_probabilities(self, vid: str) -> dict[str, float]:
        i = self.tree.index(vid)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        probs = np.diff(self.cumprob[lo:hi], prepend=0.0)
        return {self.tree.vertices[self.nbr[p]]: float(probs[p - lo]) for p in range(lo, hi)}


def build_chain(t: TreeSpec, nu: SpeedMeasure, h: float, pins: Sequence[PointRef] = ()) -> Chain:
    """Embedded chain on the mesh of width h, with pins forced to be vertices."""
    if t.n_edges == 0:
        raise TreeStructureError("the chain needs at least one edge")
    mesh1 = t.split_at(pins)
    mesh2 = mesh1.tree.subdivide(h)
    nu2 = nu.refine(mesh1).refine(mesh2)
    composite = _CompositeMesh(t, mesh1, mesh2)
    return Chain(composite, nu2)


class _CompositeMesh:
    """Two stacked meshes presented with the Mesh point-mapping interface."""

    def __init__(self, base: TreeSpec, first: Mesh, second: Mesh):
        self.base = base
        self.first = first
        self.second = second
        self.tree = second.tree

    def map_point(self, p: PointRef) -> PointRef:
        return self.second.map_point(self.first.map_point(p))

    def base_point(self, p: PointRef) -> PointRef:
        return self.first.base_point(self.second.base_point(p))


@njit(cache=True, nogil=True)
def _fin(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _walk_batch(
    first_index,
    seed,
    start,
    indptr,
    nbr,
    cumprob,
    mean_hold,
    kill,
    stop,
    horizon,
    max_steps,
    exp_clock,
    f_vals,
    status,
    exit_idx,
    elapsed,
    f_acc,
    occ,
):
    n = status.shape[0]
    for w in range(n):
        key = _fin(seed ^ _fin(first_index + np.uint64(w)))
        ctr = key
        state = start
        t_acc = 0.0
        facc = 0.0
        st = np.int8(CENSORED)
        ex = np.int64(-1)
        steps = 0
        while True:
            if horizon < 0.0 and stop[state]:
                st = np.int8(HIT)
                ex = np.int64(state)
                break
            if kill[state]:
                st = np.int8(KILLED)
                ex = np.int64(state)
                break
            if steps >= max_steps:
                st = np.int8(CENSORED)
                break
            ctr += GOLDEN
            u = float(_fin(ctr) >> np.uint64(11)) * _U53
            if exp_clock:
                dt = -math.log(1.0 - u) * mean_hold[state]
            else:
                dt = 1.0
            if horizon >= 0.0 and t_acc + dt >= horizon:
                rem = horizon - t_acc
                occ[state] += rem
                facc += rem * f_vals[state]
                t_acc = horizon
                st = np.int8(HORIZON)
                break
            occ[state] += dt
            facc += dt * f_vals[state]
            t_acc += dt
            ctr += GOLDEN
            uj = float(_fin(ctr) >> np.uint64(11)) * _U53
            lo = indptr[state]
            hi = indptr[state + 1]
            nxt = hi - 1
            for p in range(lo, hi):
                if uj < cumprob[p]:
                    nxt = p
                    break
            state = nbr[nxt]
            steps += 1
        status[w] = st
        exit_idx[w] = ex
        elapsed[w] = t_acc
        f_acc[w] = facc


@dataclass
class WalkResult:
    """One trajectory: where it ended, how long it ran, where it sat."""

    status: int
    exit_point: PointRef | None
    elapsed_time: float
    occupation: dict[str, float]


@dataclass
class WalkStats:
    """Aggregate of all walks; per-walk scalars plus summed occupation."""

    chain: Chain
    start: int
    statuses: np.ndarray
    exit_idx: np.ndarray
    elapsed: np.ndarray
    f_acc: np.ndarray | None
    occupation: np.ndarray

    @property
    def n_walks(self) -> int:
        return len(self.statuses)

    def count(self, status: int) -> int:
        return int(np.count_nonzero(self.statuses == status))

    @property
    def n_hit(self) -> int:
        return self.count(HIT)

    @property
    def n_killed(self) -> int:
        return self.count(KILLED)

    @property
    def n_censored(self) -> int:
        return self.count(CENSORED)

    @property
    def n_horizon(self) -> int:
        return self.count(HORIZON)

    def exit_counts(self) -> dict[str, int]:
        """How many hit walks ended at each stop vertex."""
        out: dict[str, int] = {}
        for i in self.exit_idx[self.statuses == HIT]:
            vid = self.chain.tree.vertices[i]
            out[vid] = out.get(vid, 0) + 1
        return out

    def hit_elapsed(self) -> np.ndarray:
        return self.elapsed[self.statuses == HIT]


def _threads() -> int:
    raw = os.environ.get("DENDRITE_THREADS", "1")
    try:
        k = int(raw)
    except ValueError as exc:
        raise SolverError(f"DENDRITE_THREADS must be an integer, got {raw!r}") from exc
    if k < 1:
        raise SolverError(f"DENDRITE_THREADS must be >= 1, got {k}")
    return k


def _f_values(chain: Chain, f) -> np.ndarray:
    t = chain.tree
    if f is None:
        return np.ones(t.n_vertices)
    if isinstance(f, PiecewiseLinearFn):
        vals = np.empty(t.n_vertices)
        for i, vid in enumerate(t.vertices):
            vals[i] = f.evaluate(chain.mesh.base_point(t.point(vid)))
        return vals
    if callable(f):
        vals = np.empty(t.n_vertices)
        for i, vid in enumerate(t.vertices):
            vals[i] = float(f(chain.mesh.base_point(t.point(vid))))
        return vals
    vals = np.asarray(f, dtype=np.float64)
    if vals.shape != (t.n_vertices,):
        raise PointError(f"need one f value per mesh vertex, got shape {vals.shape}")
    return vals


def run_walks(chain: Chain, cfg: WalkConfig, start: PointRef, f=None) -> WalkStats:
    """Simulate cfg.n_walks independent trajectories from ``start``.

    Results are deterministic in (seed, cfg, start) regardless of the
    worker count: every walk owns a counter-derived substream and the
    occupation fold runs in batch order.
    """
    n = cfg.n_walks
    nv = chain.tree.n_vertices
    start_idx = chain.vertex_of(start)
    stop_mask = np.zeros(nv, dtype=np.bool_)
    horizon = -1.0
    if isinstance(cfg.stop, HitSet):
        for p in cfg.stop.points:
            stop_mask[chain.vertex_of(p)] = True
    else:
        horizon = float(cfg.stop.t)
    seed = np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF)
    f_vals = _f_values(chain, f)
    statuses = np.empty(n, dtype=np.int8)
    exit_idx = np.empty(n, dtype=np.int64)
    elapsed = np.empty(n, dtype=np.float64)
    f_acc = np.empty(n, dtype=np.float64)
    n_batches = (n + BATCH - 1) // BATCH
    if n_batches * nv > 6 * 10**7:
        raise SolverError(
            f"{n_batches} batches on {nv} mesh vertices need too much occupation buffer; "
            "coarsen the mesh or run fewer walks"
        )
    occ_bufs = np.zeros((n_batches, nv), dtype=np.float64)

    def job(b: int):
        lo = b * BATCH
        hi = min(n, lo + BATCH)
        _walk_batch(
            np.uint64(lo),
            seed,
            start_idx,
            chain.indptr,
            chain.nbr,
            chain.cumprob,
            chain.mean_hold,
            chain.kill,
            stop_mask,
            horizon,
            cfg.max_steps,
            cfg.clock == "exponential",
            f_vals,
            statuses[lo:hi],
            exit_idx[lo:hi],
            elapsed[lo:hi],
            f_acc[lo:hi],
            occ_bufs[b],
        )

    workers = _threads()
    if workers == 1 or n_batches == 1:
        for b in range(n_batches):
            job(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, range(n_batches)))
    occupation = np.zeros(nv)
    for b in range(n_batches):
        occupation += occ_bufs[b]
    return WalkStats(chain, start_idx, statuses, exit_idx, elapsed,
                     f_acc if f is not None else None, occupation)


def run_single_walk(chain: Chain, cfg: WalkConfig, start: PointRef, walk_index: int = 0) -> WalkResult:
    """One trajectory with its full per-vertex occupation record.

    walk_index selects the same substream the walk would use inside a
    batch run, so single walks reproduce batch members exactly.
    """
    nv = chain.tree.n_vertices
    start_idx = chain.vertex_of(start)
    stop_mask = np.zeros(nv, dtype=np.bool_)
    horizon = -1.0
    if isinstance(cfg.stop, HitSet):
        for p in cfg.stop.points:
            stop_mask[chain.vertex_of(p)] = True
    else:
        horizon = float(cfg.stop.t)
    status = np.empty(1, dtype=np.int8)
    exit_idx = np.empty(1, dtype=np.int64)
    elapsed = np.empty(1, dtype=np.float64)
    f_acc = np.empty(1, dtype=np.float64)
    occ = np.zeros(nv)
    _walk_batch(
        np.uint64(walk_index),
        np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF),
        start_idx,
        chain.indptr,
        chain.nbr,
        chain.cumprob,
        chain.mean_hold,
        chain.kill,
        stop_mask,
        horizon,
        cfg.max_steps,
        cfg.clock == "exponential",
        np.ones(nv),
        status,
        exit_idx,
        elapsed,
        f_acc,
        occ,
    )
    t = chain.tree
    exit_point = None
    if exit_idx[0] >= 0:
        exit_point = chain.mesh.base_point(t.point(t.vertices[exit_idx[0]]))
    occupation = {t.vertices[i]: float(occ[i]) for i in range(nv) if occ[i] != 0.0}
    return WalkResult(int(status[0]), exit_point, float(elapsed[0]), occupation)


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_used: int
    n_killed: int = 0

    def __str__(self):
        return f"{self.value:.6g} +- {self.std_error:.3g} (n={self.n_used})"


def _hit_estimate(stats: WalkStats, samples: np.ndarray) -> Estimate:
    if stats.n_censored > 0:
        raise SolverError(
            f"{stats.n_censored} of {stats.n_walks} walks were censored at max_steps; "
            "raise max_steps or coarsen the mesh"
        )
    sel = stats.statuses == HIT
    vals = samples[sel]
    if len(vals) == 0:
        raise SolverError("no walk reached the target; the estimator has no samples")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return Estimate(mean, se, len(vals), stats.n_killed)


def estimate_hitting_time(chain: Chain, cfg: WalkConfig, start: PointRef, target: PointRef) -> Estimate:
    """Sample mean and standard error of the time to reach ``target``."""
    cfg = replace(cfg, stop=HitSet((target,)))
    stats = run_walks(chain, cfg, start)
    return _hit_estimate(stats, stats.elapsed)


def estimate_occupation(chain: Chain, cfg: WalkConfig, start: PointRef, target: PointRef, f) -> Estimate:
    """Monte Carlo estimate of the f-weighted occupation until ``target``."""
    cfg = replace(cfg, stop=HitSet((target,)))
    stats = run_walks(chain, cfg, start, f=f)
    return _hit_estimate(stats, stats.f_acc)


def mean_hitting_exact(chain: Chain, targets: Sequence[PointRef], f=None,
                       clock: str = "exponential") -> np.ndarray:
    """Expected f-weighted occupation until the target set, per mesh vertex.

    Solves the chain's linear system directly; this is the exact value the
    Monte Carlo estimator converges to on this mesh. Requires a chain
    without killing (open leaves would make the expectation improper).
    With the jump_count_only clock every step contributes f(state) once.
    """
    if chain.kill.any():
        raise SolverError("exact mean hitting needs a chain without open leaves")
    if clock not in ("exponential", "jump_count_only"):
        raise PointError(f"unknown clock {clock!r}")
    t = chain.tree
    n = t.n_vertices
    tset = sorted({chain.vertex_of(p) for p in targets})
    if not tset:
        raise PointError("the target set must be nonempty")
    f_vals = _f_values(chain, f)
    rows, cols, vals = [], [], []
    for i in range(n):
        lo, hi = chain.indptr[i], chain.indptr[i + 1]
        probs = np.diff(chain.cumprob[lo:hi], prepend=0.0)
        for p in range(lo, hi):
            rows.append(i)
            cols.append(chain.nbr[p])
            vals.append(probs[p - lo])
    P = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    free = np.setdiff1d(np.arange(n), np.array(tset))
    if free.size == 0:
        return np.zeros(n)
    A = sp.eye(n, format="csr")[free][:, free] - P[free][:, free]
    weight = chain.mean_hold if clock == "exponential" else np.ones(n)
    b = (weight * f_vals)[free]
    u = np.zeros(n)
    u[free] = spla.spsolve(A.tocsc(), b)
    resid = A @ u[free] - b
    if np.linalg.norm(resid) > 1e-8 * max(1.0, np.linalg.norm(b)):
        raise SolverError("chain linear system solve failed the residual check")
    return u


@dataclass(frozen=True)
class HittingBoundReport:
    value: float
    bound: float
    satisfied: bool


def bound_check_mean_hitting(t: TreeSpec, nu: SpeedMeasure, x: PointRef, b: PointRef) -> HittingBoundReport:
    """Check the mean hitting time against the compact-tree bound 2 nu(T) r(x, b)."""
    value = expected_occupation(t, nu, x, b)
    bound = 2.0 * nu.total_mass() * t.distance(x, b)
    return HittingBoundReport(value, bound, value <= bound * (1.0 + 1e-12))
