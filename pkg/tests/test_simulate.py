import math
import os
import subprocess
import sys

import numpy as np
import pytest

from dendrite.calculus import PiecewiseLinearFn
from dendrite.errors import MeasureError, PointError, SolverError, TreeStructureError
from dendrite.measure import SpeedMeasure
from dendrite.potential import expected_occupation, hitting_probability
from dendrite.simulate import (
    CENSORED,
    HIT,
    HORIZON,
    KILLED,
    HitSet,
    TimeHorizon,
    WalkConfig,
    bound_check_mean_hitting,
    build_chain,
    estimate_hitting_time,
    estimate_occupation,
    mean_hitting_exact,
    run_single_walk,
    run_walks,
)
from dendrite.tree import TreeSpec

from support import interval_tree, random_measure, random_tree, y_tree


def test_y_tree_jump_probabilities():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)  # coarser than every edge: mesh == original tree
    probs = ch.jump_probabilities("v1")
    assert abs(probs["v0"] - 6 / 11) < 1e-15
    assert abs(probs["v2"] - 3 / 11) < 1e-15
    assert abs(probs["v3"] - 2 / 11) < 1e-15
    for vid in t.vertices:
        assert abs(sum(ch.jump_probabilities(vid).values()) - 1.0) < 1e-12


def test_interior_holding_rate():
    # uniform mesh, Lebesgue measure: interior rate (2/(2h))/h = 1/h^2
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    h = 0.125
    ch = build_chain(t, nu, h)
    for i, vid in enumerate(ch.tree.vertices):
        if vid in ("x0", "x1"):
            continue
        assert abs(ch.mean_hold[i] - h * h) < 1e-15


def test_zero_mass_vertex_rejected():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    # subdividing creates mesh vertices carrying no mass under a purely atomic measure
    with pytest.raises(MeasureError):
        build_chain(t, nu, h=0.5)


def test_chain_needs_an_edge():
    t = TreeSpec(["only"], [], "only")
    with pytest.raises(TreeStructureError):
        build_chain(t, SpeedMeasure.atoms(t, 1.0), h=1.0)


def test_off_mesh_start_needs_pin():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    p = t.point_on_edge(0, 1 / 3)
    ch = build_chain(t, nu, h=0.5)
    with pytest.raises(PointError):
        ch.vertex_of(p)
    ch2 = build_chain(t, nu, h=0.5, pins=[p])
    i = ch2.vertex_of(p)
    assert ch2.mass[i] > 0.0


# the chain's expected f-weighted occupation solves the same linear system as
# the continuum formula, so it is exact at every mesh vertex, not just in the limit
def test_chain_first_moments_match_formula():
    rng = np.random.default_rng(2024)
    for _ in range(5):
        t = random_tree(rng, int(rng.integers(4, 9)))
        nu = random_measure(rng, t)
        diam = t.diameter()
        ch = build_chain(t, nu, h=diam / 7)
        b = t.point(t.vertices[int(rng.integers(0, t.n_vertices))])
        u = mean_hitting_exact(ch, [b])
        for i, vid in enumerate(ch.tree.vertices):
            base = ch.mesh.base_point(ch.tree.point(vid))
            want = expected_occupation(t, nu, base, b)
            assert abs(u[i] - want) < 1e-9 * max(1.0, want)


def test_constant_f_exact_at_every_mesh_width():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    one = t.point("x1")
    for h in (0.25, 0.1, 0.037):  # includes a width that does not divide the edge
        ch = build_chain(t, nu, h)
        u = mean_hitting_exact(ch, [t.point("x0")])
        assert abs(u[ch.vertex_of(one)] - 1.0) < 1e-12


def test_weighted_occupation_second_order_in_h():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    f = PiecewiseLinearFn(t, np.array([0.0, 1.0]))
    exact = expected_occupation(t, nu, t.point("x1"), t.point("x0"), f)
    assert abs(exact - 2.0 / 3.0) < 1e-12
    hs = (0.2, 0.1, 0.05, 0.025)
    errs = []
    for h in hs:
        ch = build_chain(t, nu, h)
        u = mean_hitting_exact(ch, [t.point("x0")], f=f)
        errs.append(abs(u[ch.vertex_of(t.point("x1"))] - exact))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 1.8


def test_interval_hitting_time_mc():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, 0.05)
    cfg = WalkConfig(mesh_h=0.05, n_walks=4000, seed=11, stop=HitSet((t.point("x0"),)))
    est = estimate_hitting_time(ch, cfg, t.point("x1"), t.point("x0"))
    # ODE oracle: u = 2x - x^2 gives u(1) = 1, and the chain mean is exact here
    assert est.n_used == 4000
    assert abs(est.value - 1.0) <= 4.0 * est.std_error


def test_y_tree_atomic_hitting_time():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    u = mean_hitting_exact(ch, [t.point("v3")])
    assert abs(u[ch.vertex_of(t.point("v2"))] - 22.0) < 1e-9
    cfg = WalkConfig(mesh_h=10.0, n_walks=2000, seed=7, stop=HitSet((t.point("v3"),)))
    est = estimate_hitting_time(ch, cfg, t.point("v2"), t.point("v3"))
    assert abs(est.value - 22.0) <= 4.0 * est.std_error


def test_indicator_occupation_mc():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    zero = t.point("x0")

    def f(p):
        return 1.0 if t.distance(p, zero) <= 0.5 else 0.0

    # closed form: 2 * int_0^{1/2} y dy = 1/4
    ch = build_chain(t, nu, 0.005)
    chain_exact = mean_hitting_exact(ch, [zero], f=f)[ch.vertex_of(t.point("x1"))]
    cfg = WalkConfig(mesh_h=0.005, n_walks=4000, seed=5, stop=HitSet((zero,)))
    est = estimate_occupation(ch, cfg, t.point("x1"), zero, f)
    assert abs(est.value - chain_exact) <= 4.0 * est.std_error
    assert abs(est.value - 0.25) <= 0.03 * 0.25


def test_zero_f_gives_zero():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    cfg = WalkConfig(mesh_h=10.0, n_walks=64, seed=1, stop=HitSet((t.point("v3"),)))
    est = estimate_occupation(ch, cfg, t.point("v2"), t.point("v3"), lambda p: 0.0)
    assert est.value == 0.0 and est.std_error == 0.0


def test_one_step_star_marginal():
    # from the center with all legs in the stop set, each walk records exactly
    # its first jump, so exit frequencies sample the one-step law directly
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    stops = (t.point("v0"), t.point("v2"), t.point("v3"))
    cfg = WalkConfig(mesh_h=10.0, n_walks=10**5, seed=99, stop=HitSet(stops))
    stats = run_walks(ch, cfg, t.point("v1"))
    assert stats.n_hit == 10**5
    counts = stats.exit_counts()
    n = 10**5
    for vid, p in (("v0", 6 / 11), ("v2", 3 / 11), ("v3", 2 / 11)):
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(counts[vid] / n - p) <= 4.0 * sigma


def test_y_tree_exit_split():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    cfg = WalkConfig(mesh_h=10.0, n_walks=10**5, seed=13, stop=HitSet((t.point("v2"), t.point("v3"))))
    stats = run_walks(ch, cfg, t.point("v1"))
    counts = stats.exit_counts()
    n = 10**5
    p2 = hitting_probability(t, t.point("v1"), t.point("v2"), t.point("v3"))
    assert abs(p2 - 3 / 5) < 1e-15
    for vid, p in (("v2", p2), ("v3", 1 - p2)):
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(counts[vid] / n - p) <= 4.0 * sigma


def test_interval_exit_split_from_midpoint():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, 0.25)
    mid = t.point_on_edge(0, 0.5)
    cfg = WalkConfig(mesh_h=0.25, n_walks=10**5, seed=4, stop=HitSet((t.point("x0"), t.point("x1"))))
    stats = run_walks(ch, cfg, mid)
    frac = stats.exit_counts()["x0"] / 10**5
    sigma = math.sqrt(0.25 / 10**5)
    assert abs(frac - 0.5) <= 4.0 * sigma


def test_jump_count_clock():
    # two-cell path, reflecting far end: expected jumps to cross is 4
    t = TreeSpec(["a", "m", "b"], [("a", "m", 1.0), ("m", "b", 1.0)], "a")
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, h=2.0)
    u = mean_hitting_exact(ch, [t.point("b")], clock="jump_count_only")
    assert abs(u[ch.vertex_of(t.point("a"))] - 4.0) < 1e-12
    cfg = WalkConfig(mesh_h=2.0, n_walks=20000, seed=21, stop=HitSet((t.point("b"),)),
                     clock="jump_count_only")
    est = estimate_hitting_time(ch, cfg, t.point("a"), t.point("b"))
    assert abs(est.value - 4.0) <= 4.0 * est.std_error
    # every elapsed time is a whole number of unit steps
    stats = run_walks(ch, cfg, t.point("a"))
    assert np.all(stats.elapsed == np.round(stats.elapsed))


def _aggregate_digest(threads: str) -> str:
    code = (
        "import numpy as np, hashlib\n"
        "from dendrite.tree import TreeSpec\n"
        "from dendrite.measure import SpeedMeasure\n"
        "from dendrite.simulate import build_chain, run_walks, WalkConfig, HitSet\n"
        "t = TreeSpec(['a','b'], [('a','b',1.0)], 'a')\n"
        "nu = SpeedMeasure.length_measure(t)\n"
        "ch = build_chain(t, nu, h=0.1)\n"
        "cfg = WalkConfig(mesh_h=0.1, n_walks=9000, seed=42, stop=HitSet((t.point('a'),)))\n"
        "st = run_walks(ch, cfg, t.point('b'), f=np.arange(ch.tree.n_vertices, dtype=float))\n"
        "h = hashlib.sha256()\n"
        "for arr in (st.statuses, st.exit_idx, st.elapsed, st.f_acc, st.occupation):\n"
        "    h.update(np.ascontiguousarray(arr).tobytes())\n"
        "print(h.hexdigest())\n"
    )
    env = dict(os.environ, DENDRITE_THREADS=threads)
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env,
                         cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    assert out.returncode == 0, out.stderr
    return out.stdout.strip()


def test_thread_count_does_not_change_results():
    digests = {k: _aggregate_digest(k) for k in ("1", "2", "8")}
    assert digests["1"] == digests["2"] == digests["8"]


def test_time_horizon_walks():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    cfg = WalkConfig(mesh_h=10.0, n_walks=200, seed=3, stop=TimeHorizon(4.0))
    stats = run_walks(ch, cfg, t.point("v1"))
    assert stats.n_horizon == 200
    assert np.allclose(stats.elapsed, 4.0, rtol=0, atol=1e-12)
    # occupation accounts for every unit of simulated time
    assert abs(stats.occupation.sum() - 200 * 4.0) < 1e-8


def test_killed_walks_reported_and_excluded():
    t = TreeSpec(["a", "m", "b"], [("a", "m", 1.0), ("m", "b", 1.0)], "a",
                 open_leaves=["b"])
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, h=0.5)
    cfg = WalkConfig(mesh_h=0.5, n_walks=3000, seed=8, stop=HitSet((t.point("a"),)))
    stats = run_walks(ch, cfg, t.point("m"))
    assert stats.n_killed > 0 and stats.n_hit > 0
    assert stats.n_killed + stats.n_hit == 3000
    est = estimate_hitting_time(ch, cfg, t.point("m"), t.point("a"))
    assert est.n_used == stats.n_hit and est.n_killed == stats.n_killed
    # the exact solver refuses chains that can lose mass
    with pytest.raises(SolverError):
        mean_hitting_exact(ch, [t.point("a")])


def test_censoring_raises_in_estimators():
    t = interval_tree()
    nu = SpeedMeasure.length_measure(t)
    ch = build_chain(t, nu, 0.05)
    cfg = WalkConfig(mesh_h=0.05, n_walks=50, seed=2, stop=HitSet((t.point("x0"),)),
                     max_steps=10)
    stats = run_walks(ch, cfg, t.point("x1"))
    assert stats.n_censored == 50
    with pytest.raises(SolverError):
        estimate_hitting_time(ch, cfg, t.point("x1"), t.point("x0"))


def test_start_in_stop_set():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    cfg = WalkConfig(mesh_h=10.0, n_walks=32, seed=6, stop=HitSet((t.point("v2"),)))
    stats = run_walks(ch, cfg, t.point("v2"))
    assert stats.n_hit == 32
    assert np.all(stats.elapsed == 0.0)
    est = estimate_hitting_time(ch, cfg, t.point("v2"), t.point("v2"))
    assert est.value == 0.0


def test_single_walk_matches_batch_member():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    ch = build_chain(t, nu, h=10.0)
    cfg = WalkConfig(mesh_h=10.0, n_walks=40, seed=77, stop=HitSet((t.point("v3"),)))
    stats = run_walks(ch, cfg, t.point("v2"))
    for w in (0, 17, 39):
        r = run_single_walk(ch, cfg, t.point("v2"), walk_index=w)
        assert r.status == stats.statuses[w]
        assert r.elapsed_time == stats.elapsed[w]
        assert abs(sum(r.occupation.values()) - r.elapsed_time) < 1e-9 * max(1.0, r.elapsed_time)
        assert r.exit_point is not None and t.distance(r.exit_point, t.point("v3")) == 0.0


def test_walk_config_validation():
    t = interval_tree()
    stop = HitSet((t.point("x0"),))
    with pytest.raises(PointError):
        WalkConfig(mesh_h=0.0, n_walks=1, seed=0, stop=stop)
    with pytest.raises(PointError):
        WalkConfig(mesh_h=0.1, n_walks=0, seed=0, stop=stop)
    with pytest.raises(PointError):
        WalkConfig(mesh_h=0.1, n_walks=1, seed=0, stop=stop, clock="brownian")
    with pytest.raises(PointError):
        WalkConfig(mesh_h=0.1, n_walks=1, seed=0, stop=())
    with pytest.raises(PointError):
        HitSet(())
    with pytest.raises(PointError):
        TimeHorizon(-1.0)


def test_hitting_bound_examples():
    t = y_tree()
    nu = SpeedMeasure.atoms(t, 1.0)
    rep = bound_check_mean_hitting(t, nu, t.point("v2"), t.point("v3"))
    assert rep.satisfied and abs(rep.value - 22.0) < 1e-9 and abs(rep.bound - 40.0) < 1e-12
    ti = interval_tree()
    rep2 = bound_check_mean_hitting(ti, SpeedMeasure.length_measure(ti), ti.point("x1"), ti.point("x0"))
    assert rep2.satisfied and abs(rep2.value - 1.0) < 1e-12 and abs(rep2.bound - 2.0) < 1e-12


def test_hitting_bound_random_instances():
    rng = np.random.default_rng(515)
    for _ in range(50):
        t = random_tree(rng, int(rng.integers(2, 30)))
        nu = random_measure(rng, t)
        ids = rng.choice(t.n_vertices, size=2, replace=False)
        x, b = t.point(t.vertices[ids[0]]), t.point(t.vertices[ids[1]])
        assert bound_check_mean_hitting(t, nu, x, b).satisfied
