"""End-to-end acceptance battery.

Ten independent checks, each pinning a computed quantity to an oracle that
does not share code with it: closed-form identities, ODE solutions, linear
solves, binomial confidence bands, and bit-level reproducibility. Every
check is deterministic (fixed seeds) and sized to finish within its stated
budget on one desktop core. The CLI ``selftest`` subcommand and the test
suite both run these functions.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .classify import (
    RECURRENT,
    TRANSIENT,
    GeneratorSpec,
    box_counting_dimension,
    classify_generator,
)
from .calculus import PiecewiseLinearFn, gradient, oriented_integral
from .measure import SpeedMeasure
from .potential import (
    capacity,
    distance_function,
    effective_resistance_to_depth,
    green_general,
    green_two_point,
    harmonic,
    hitting_function,
    hitting_probability,
)
from .simulate import HitSet, WalkConfig, build_chain, estimate_hitting_time, run_walks
from .spectral import eigenvalue_bounds, mixing_bound, principal_eigenvalue, tv_distance_curve
from .tree import TreeSpec


@dataclass
class CriterionResult:
    number: int
    name: str
    ok: bool
    detail: str
    seconds: float
    budget: float

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"criterion {self.number:2d} {status} [{self.seconds:6.2f}s/{self.budget:.0f}s] {self.name}: {self.detail}"


def _random_tree(rng: np.random.Generator, n: int, lo: float = 0.2, hi: float = 2.0) -> TreeSpec:
    names = [f"n{i}" for i in range(n)]
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((names[j], names[i], float(rng.uniform(lo, hi))))
    return TreeSpec(names, edges, names[int(rng.integers(0, n))])


def _dyadic_tree(rng: np.random.Generator, n: int) -> TreeSpec:
    names = [f"n{i}" for i in range(n)]
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((names[j], names[i], float(rng.integers(1, 17)) / 8.0))
    return TreeSpec(names, edges, names[int(rng.integers(0, n))])


def _random_measure(rng: np.random.Generator, t: TreeSpec) -> SpeedMeasure:
    dens = rng.uniform(0.5, 2.0, size=t.n_edges)
    atoms = np.where(rng.random(t.n_vertices) < 0.3, rng.uniform(0.1, 1.0, size=t.n_vertices), 0.0)
    return SpeedMeasure(t, dens, atoms)


def _y_tree() -> TreeSpec:
    return TreeSpec(
        ["v0", "v1", "v2", "v3"],
        [("v0", "v1", 1.0), ("v1", "v2", 2.0), ("v1", "v3", 3.0)],
        "v0",
    )


def criterion_1() -> CriterionResult:
    """Variational two-point capacity equals 1/(2 r(a,b))."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7001)
    worst, pairs = 0.0, 0
    sizes = [50] + [int(rng.integers(2, 21)) for _ in range(49)]
    for n in sizes:
        t = _random_tree(rng, n)
        nu = SpeedMeasure.length_measure(t)
        for i in range(t.n_vertices):
            for j in range(i + 1, t.n_vertices):
                a, b = t.point(t.vertices[i]), t.point(t.vertices[j])
                got = capacity(t, nu, [a], [b])
                want = 1.0 / (2.0 * t.distance(a, b))
                worst = max(worst, abs(got - want))
                pairs += 1
    ok = worst <= 1e-9
    return CriterionResult(
        1, "two-point capacity", ok,
        f"max |capacity - 1/(2r)| = {worst:.2e} over {pairs} pairs on 50 trees",
        time.perf_counter() - t0, 5.0)


def criterion_2() -> CriterionResult:
    """Discrete Green function matches the median-distance formula; symmetric."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7002)
    worst, worst_sym, checked = 0.0, 0.0, 0
    trees = [_y_tree()] + [_random_tree(rng, int(rng.integers(3, 25))) for _ in range(19)]
    for t in trees:
        nu = SpeedMeasure.length_measure(t)
        ix, ib = rng.choice(t.n_vertices, size=2, replace=False)
        x, b = t.point(t.vertices[ix]), t.point(t.vertices[ib])
        g = green_general(t, nu, [b], [(x, 1.0)])
        for vid in g.mesh.tree.vertices:
            y = g.mesh.base_point(g.mesh.tree.point(vid))
            worst = max(worst, abs(g.fn.at(vid) - green_two_point(t, x, b, y)))
            checked += 1
        others = [v for v in t.vertices if v not in (t.vertices[ix], t.vertices[ib])]
        if others:
            y = t.point(others[int(rng.integers(0, len(others)))])
            gy = green_general(t, nu, [b], [(y, 1.0)])
            fwd = g.fn.evaluate(g.mesh.map_point(y))
            rev = gy.fn.evaluate(gy.mesh.map_point(x))
            worst_sym = max(worst_sym, abs(fwd - rev))
    ok = worst <= 1e-9 and worst_sym <= 1e-9
    return CriterionResult(
        2, "Green kernel", ok,
        f"max formula gap {worst:.2e} over {checked} mesh vertices; max asymmetry {worst_sym:.2e}",
        time.perf_counter() - t0, 5.0)


def criterion_3() -> CriterionResult:
    """Hitting probability: formula = harmonic solve = Monte Carlo."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    n_walks = 10**5
    instances = []
    y = _y_tree()
    instances.append((y, y.point("v1"), y.point("v2"), y.point("v3")))
    for _ in range(10):
        t = _random_tree(rng, int(rng.integers(4, 9)))
        ids = rng.choice(t.n_vertices, size=3, replace=False)
        instances.append((t, *(t.point(t.vertices[i]) for i in ids)))
    worst_solve, worst_mc, worst_sig = 0.0, 0.0, 0.0
    for t, x, a, b in instances:
        nu = SpeedMeasure.length_measure(t)
        p = hitting_probability(t, x, a, b)
        hs = harmonic(t, nu, [b], [a])
        worst_solve = max(worst_solve, abs(hs.fn.evaluate(hs.mesh.map_point(x)) - p))
        ch = build_chain(t, nu, t.diameter() / 100.0, pins=[x, a, b])
        cfg = WalkConfig(mesh_h=1.0, n_walks=n_walks, seed=31, stop=HitSet((a, b)),
                         clock="jump_count_only")
        stats = run_walks(ch, cfg, x)
        a_id = ch.tree.vertices[ch.vertex_of(a)]
        emp = stats.exit_counts().get(a_id, 0) / n_walks
        sigma = math.sqrt(p * (1.0 - p) / n_walks)
        gap = abs(emp - p)
        worst_mc = max(worst_mc, gap)
        worst_sig = max(worst_sig, gap - 4.0 * sigma)
    ok = worst_solve <= 1e-9 and worst_mc <= 0.02 and worst_sig <= 0.0
    return CriterionResult(
        3, "hitting probabilities", ok,
        f"formula vs harmonic {worst_solve:.2e}; MC gap {worst_mc:.4f} (<=0.02), "
        f"max overshoot of 4 sigma {worst_sig:+.2e}",
        time.perf_counter() - t0, 60.0)


def criterion_4() -> CriterionResult:
    """Mean hitting times against the ODE and linear-solve oracles."""
    t0 = time.perf_counter()
    ti = TreeSpec(["x0", "x1"], [("x0", "x1", 1.0)], "x0")
    nui = SpeedMeasure.length_measure(ti)
    ch = build_chain(ti, nui, 0.01)
    cfg = WalkConfig(mesh_h=0.01, n_walks=2 * 10**4, seed=41, stop=HitSet((ti.point("x0"),)))
    est_i = estimate_hitting_time(ch, cfg, ti.point("x1"), ti.point("x0"))
    err_i = abs(est_i.value - 1.0)

    ty = _y_tree()
    nuy = SpeedMeasure.atoms(ty, 1.0)
    chy = build_chain(ty, nuy, 10.0)
    cfgy = WalkConfig(mesh_h=10.0, n_walks=2 * 10**4, seed=43, stop=HitSet((ty.point("v3"),)))
    est_y = estimate_hitting_time(chy, cfgy, ty.point("v2"), ty.point("v3"))
    err_y = abs(est_y.value - 22.0)
    ok = err_i <= 0.03 * 1.0 and err_y <= 0.03 * 22.0
    return CriterionResult(
        4, "occupation and hitting time", ok,
        f"interval {est_i.value:.4f} vs 1 (err {err_i:.4f}); star {est_y.value:.3f} vs 22 (err {err_y:.3f})",
        time.perf_counter() - t0, 120.0)


def criterion_5() -> CriterionResult:
    """Principal eigenvalue: ODE value on the interval; bounds sandwich elsewhere."""
    t0 = time.perf_counter()
    ti = TreeSpec(["x0", "x1"], [("x0", "x1", 1.0)], "x0")
    lam = principal_eigenvalue(ti, SpeedMeasure.length_measure(ti), [ti.point("x0")], h=1e-3).eigenvalue
    want = math.pi**2 / 8.0
    err = abs(lam - want) / want
    rng = np.random.default_rng(7005)
    sandwich_ok, margin = True, math.inf
    for _ in range(20):
        t = _random_tree(rng, int(rng.integers(3, 13)))
        nu = _random_measure(rng, t)
        b = t.point(t.vertices[int(rng.integers(0, t.n_vertices))])
        lam_b = principal_eigenvalue(t, nu, [b], h=t.diameter() / 64.0).eigenvalue
        lo, hi = eigenvalue_bounds(t, nu, b)
        sandwich_ok = sandwich_ok and (lo <= lam_b <= hi)
        margin = min(margin, lam_b - lo, hi - lam_b)
    ok = err <= 0.01 and sandwich_ok
    return CriterionResult(
        5, "eigenvalues", ok,
        f"interval rel err {err:.2e} (<=1%); 20-tree sandwich {'held' if sandwich_ok else 'FAILED'}"
        f" (min margin {margin:.2e})",
        time.perf_counter() - t0, 30.0)


def criterion_6() -> CriterionResult:
    """Total variation decay stays below the certified mixing bound."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7006)
    times = np.linspace(0.0, 8.0, 17)
    worst = -math.inf
    for _ in range(5):
        t = _random_tree(rng, int(rng.integers(4, 10)))
        nu = _random_measure(rng, t)
        total = nu.total_mass()
        # initial laws absolutely continuous in nu: one edge, stationary, random tilt
        d_edge = np.zeros(t.n_edges)
        d_edge[0] = 1.0 / t.edges[0].length
        tilt_d = nu.edge_density * rng.uniform(0.5, 2.0, size=t.n_edges)
        tilt_a = nu.vertex_atom * rng.uniform(0.5, 2.0, size=t.n_vertices)
        tilt_total = SpeedMeasure(t, tilt_d, tilt_a).total_mass()
        starts = [
            SpeedMeasure(t, d_edge),
            SpeedMeasure(t, nu.edge_density / total, nu.vertex_atom / total),
            SpeedMeasure(t, tilt_d / tilt_total, tilt_a / tilt_total),
        ]
        for nup in starts:
            tv = tv_distance_curve(t, nu, nup, times, max_vertices=300)
            bd = mixing_bound(t, nu, nup, times)
            worst = max(worst, float(np.max(tv - bd)))
    ok = worst <= 1e-12
    return CriterionResult(
        6, "mixing bound", ok,
        f"max (tv - bound) = {worst:.2e} over 5 trees x 3 initial laws x {len(times)} times",
        time.perf_counter() - t0, 60.0)


def criterion_7() -> CriterionResult:
    """Self-similar verdicts follow the length-ratio rule; resistance limit checks out."""
    t0 = time.perf_counter()
    verdict_ok = True
    got = []
    for k, c in ((2, 1), (2, 2), (2, 3), (3, 2), (3, 3), (3, 4)):
        cls = classify_generator(GeneratorSpec(k, float(c)))
        want = RECURRENT if c >= k else TRANSIENT
        verdict_ok = verdict_ok and cls.verdict == want
        got.append(f"({k},{c})={'R' if cls.verdict == RECURRENT else 'T'}")
    r60 = effective_resistance_to_depth(GeneratorSpec(2, 1.0), 60)
    res_err = abs(r60 - 2.0)
    ok = verdict_ok and res_err <= 1e-6
    return CriterionResult(
        7, "k-ary classification", ok,
        f"{' '.join(got)}; R_60(2,1) = {r60:.9f} (err {res_err:.1e})",
        time.perf_counter() - t0, 5.0)


def criterion_8() -> CriterionResult:
    """Box-counting dimension of the end space matches log k / log c."""
    t0 = time.perf_counter()
    worst = 0.0
    for k in (2, 3, 4):
        for c in (1.5, 2.0, 3.0):
            want = math.log(k) / math.log(c)
            got = box_counting_dimension(GeneratorSpec(k, c), 10, 12)
            worst = max(worst, abs(got - want))
    ok = worst <= 0.05
    return CriterionResult(
        8, "end-space dimension", ok,
        f"max |box - log_c k| = {worst:.4f} over 9 generators (depth 12)",
        time.perf_counter() - t0, 30.0)


def criterion_9() -> CriterionResult:
    """Edgewise gradients are exact; the gradient integral recovers increments."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(7009)
    grads_exact = True
    for _ in range(10):
        t = _dyadic_tree(rng, int(rng.integers(3, 15)))
        ia, ib = rng.choice(t.n_vertices, size=2, replace=False)
        a, b = t.point(t.vertices[ia]), t.point(t.vertices[ib])
        d_ab = t.distance(a, b)
        sd = gradient(distance_function(t, a)).slopes
        sh = gradient(hitting_function(t, a, b)).slopes
        for ei, e in enumerate(t.edges):
            # slopes read parent -> child (away from the root)
            child = t.vertices[t._edge_child[ei]]
            parent = e.u if child != e.u else e.v
            cp, pp = t.point(child), t.point(parent)
            grads_exact = grads_exact and sd[ei] == (
                1.0 if t.distance(a, cp) > t.distance(a, pp) else -1.0
            )
            on_c = t.distance(a, cp) + t.distance(cp, b) == d_ab
            on_p = t.distance(a, pp) + t.distance(pp, b) == d_ab
            if on_c and on_p:
                want = -1.0 if t.distance(cp, b) < t.distance(pp, b) else 1.0
            else:
                want = 0.0
            grads_exact = grads_exact and sh[ei] == want
    worst = 0.0
    for _ in range(10):
        t = _random_tree(rng, 12)
        f = PiecewiseLinearFn(t, rng.normal(size=t.n_vertices))
        g = gradient(f)
        for _ in range(10):
            iu, iv = rng.integers(0, t.n_vertices, size=2)
            x, y = t.point(t.vertices[iu]), t.point(t.vertices[iv])
            lhs = f.evaluate(y) - f.evaluate(x)
            worst = max(worst, abs(oriented_integral(t, g, x, y) - lhs))
    ok = grads_exact and worst <= 1e-9
    return CriterionResult(
        9, "gradient calculus", ok,
        f"closed-form slopes {'exact' if grads_exact else 'WRONG'}; "
        f"max identity residual {worst:.2e} over 100 pairs",
        time.perf_counter() - t0, 5.0)


def criterion_10() -> CriterionResult:
    """Simulation aggregates are bit-identical for 1, 2, and 8 worker threads."""
    t0 = time.perf_counter()
    t = TreeSpec(["a", "b"], [("a", "b", 1.0)], "a")
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, 0.1)
    cfg = WalkConfig(mesh_h=0.1, n_walks=9000, seed=42, stop=HitSet((t.point("a"),)))
    fvals = np.arange(ch.tree.n_vertices, dtype=float)
    digests = []
    before = os.environ.get("DENDRITE_THREADS")
    try:
        for workers in ("1", "2", "8"):
            os.environ["DENDRITE_THREADS"] = workers
            st = run_walks(ch, cfg, t.point("b"), f=fvals)
            h = hashlib.sha256()
            for arr in (st.statuses, st.exit_idx, st.elapsed, st.f_acc, st.occupation):
                h.update(np.ascontiguousarray(arr).tobytes())
            digests.append(h.hexdigest())
    finally:
        if before is None:
            os.environ.pop("DENDRITE_THREADS", None)
        else:
            os.environ["DENDRITE_THREADS"] = before
    ok = len(set(digests)) == 1
    return CriterionResult(
        10, "thread determinism", ok,
        f"sha256 {'agree: ' + digests[0][:16] if ok else 'DIFFER: ' + ', '.join(d[:8] for d in digests)}",
        time.perf_counter() - t0, 60.0)


ALL_CRITERIA = (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
)


def run(numbers=None, report=None) -> list[CriterionResult]:
    """Run the battery (or the listed criterion numbers) in order."""
    picked = sorted(set(numbers)) if numbers else range(1, 11)
    results = []
    for n in picked:
        if not 1 <= n <= 10:
            raise ValueError(f"no criterion {n}")
        res = ALL_CRITERIA[n - 1]()
        results.append(res)
        if report is not None:
            report(res.line())
    return results
