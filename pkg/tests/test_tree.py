import math

import numpy as np
import pytest

from dendrite.errors import PointError, TreeStructureError
from dendrite.tree import Mesh, PointRef, TreeSpec

from support import all_pairs_dijkstra, point_distance_oracle, random_point, random_tree, y_tree


def test_vertex_distances_match_dijkstra():
    rng = np.random.default_rng(11)
    for _ in range(20):
        t = random_tree(rng, int(rng.integers(2, 40)))
        d = all_pairs_dijkstra(t)
        for i in range(t.n_vertices):
            for j in range(t.n_vertices):
                got = t.distance(t.point(t.vertices[i]), t.point(t.vertices[j]))
                assert got == pytest.approx(d[i, j], abs=1e-9)


def test_point_distances_match_augmented_graph_oracle():
    rng = np.random.default_rng(12)
    for _ in range(15):
        t = random_tree(rng, int(rng.integers(2, 25)))
        for _ in range(25):
            p, q = random_point(rng, t), random_point(rng, t)
            assert t.distance(p, q) == pytest.approx(point_distance_oracle(t, p, q), abs=1e-9)
            assert t.distance(p, q) == t.distance(q, p)
        p = random_point(rng, t)
        assert t.distance(p, p) == 0.0


def test_four_point_condition():
    rng = np.random.default_rng(13)
    for _ in range(10):
        t = random_tree(rng, 20)
        for _ in range(40):
            w, x, y, z = (random_point(rng, t) for _ in range(4))
            a = t.distance(w, x) + t.distance(y, z)
            b = t.distance(w, y) + t.distance(x, z)
            c = t.distance(w, z) + t.distance(x, y)
            assert a <= max(b, c) + 1e-9


def test_branch_point_is_median():
    rng = np.random.default_rng(14)
    for _ in range(12):
        t = random_tree(rng, int(rng.integers(3, 20)))
        for _ in range(15):
            a, b, x = (random_point(rng, t) for _ in range(3))
            c = t.branch_point(a, b, x)
            # defining identities: c lies on all three pairwise arcs
            for (p, q) in ((a, b), (a, x), (b, x)):
                assert t.distance(p, c) + t.distance(c, q) == pytest.approx(t.distance(p, q), abs=1e-9)
            # brute force: the median minimizes the summed distance over
            # vertices plus the three query points
            cands = [t.point(v) for v in t.vertices] + [a, b, x]
            scores = [t.distance(a, m) + t.distance(b, m) + t.distance(x, m) for m in cands]
            best = min(scores)
            got = t.distance(a, c) + t.distance(b, c) + t.distance(x, c)
            assert got == pytest.approx(best, abs=1e-9)
            near = [m for m, s in zip(cands, scores) if s <= best + 1e-9]
            assert any(t.distance(c, m) <= 1e-9 for m in near)


def test_branch_point_lands_on_exact_vertex():
    t = y_tree()
    c = t.branch_point(t.point("v0"), t.point("v2"), t.point("v3"))
    assert c == PointRef(vertex="v1")
    # symmetric in all arguments
    c2 = t.branch_point(t.point("v3"), t.point("v0"), t.point("v2"))
    assert c2 == PointRef(vertex="v1")


def test_branch_point_degenerate_arguments():
    t = y_tree()
    a, b = t.point("v2"), t.point("v3")
    assert t.branch_point(a, a, b) == a
    assert t.branch_point(a, b, b) == b
    assert t.branch_point(a, b, a) == a


def test_meet_lies_on_root_arcs():
    rng = np.random.default_rng(15)
    for _ in range(10):
        t = random_tree(rng, 15)
        r = t.point(t.root)
        for _ in range(20):
            x, y = random_point(rng, t), random_point(rng, t)
            m = t.meet(x, y)
            assert t.distance(r, m) + t.distance(m, x) == pytest.approx(t.distance(r, x), abs=1e-9)
            assert t.distance(r, m) + t.distance(m, y) == pytest.approx(t.distance(r, y), abs=1e-9)


def test_point_at_arc():
    rng = np.random.default_rng(16)
    for _ in range(10):
        t = random_tree(rng, 12)
        x, y = random_point(rng, t), random_point(rng, t)
        d = t.distance(x, y)
        for frac in (0.0, 0.3, 0.77, 1.0):
            p = t.point_at_arc(x, y, frac * d)
            assert t.distance(x, p) == pytest.approx(frac * d, abs=1e-9)
            assert t.distance(x, p) + t.distance(p, y) == pytest.approx(d, abs=1e-9)


def test_diameter_matches_all_pairs():
    rng = np.random.default_rng(17)
    for _ in range(15):
        t = random_tree(rng, int(rng.integers(1, 30)))
        d = all_pairs_dijkstra(t) if t.n_edges else np.zeros((1, 1))
        assert t.diameter() == pytest.approx(float(d.max()), abs=1e-9)


def test_subdivide_counts_and_lengths():
    t = y_tree()
    mesh = t.subdivide(0.25)
    assert mesh.tree.n_edges == 24
    assert mesh.tree.n_vertices == 25
    assert all(e.length <= 0.25 + 1e-12 for e in mesh.tree.edges)
    # minimal: ceil(len/h) segments per edge
    assert mesh.tree.n_edges == sum(math.ceil(e.length / 0.25) for e in t.edges)
    # original ids survive
    for v in t.vertices:
        assert v in mesh.tree.vertices
    assert mesh.tree.root == t.root


def test_subdivide_preserves_metric():
    rng = np.random.default_rng(18)
    for _ in range(8):
        t = random_tree(rng, 10)
        mesh = t.subdivide(0.3)
        for _ in range(15):
            p, q = random_point(rng, t), random_point(rng, t)
            assert mesh.tree.distance(mesh.map_point(p), mesh.map_point(q)) == pytest.approx(
                t.distance(p, q), abs=1e-9
            )


def test_mesh_point_round_trip():
    rng = np.random.default_rng(19)
    t = random_tree(rng, 10)
    mesh = t.subdivide(0.4)
    for _ in range(30):
        p = random_point(rng, t)
        back = mesh.base_point(mesh.map_point(p))
        assert t.distance(p, back) <= 1e-9
    for v in mesh.tree.vertices:
        p = mesh.base_point(mesh.tree.point(v))
        assert t.contains(p)


def test_split_at_materializes_points():
    rng = np.random.default_rng(20)
    t = random_tree(rng, 8)
    pts = [random_point(rng, t, vertex_prob=0.0) for _ in range(5)]
    mesh = t.split_at(pts)
    for p in pts:
        assert mesh.map_point(p).is_vertex
    # metric unchanged
    for _ in range(10):
        p, q = random_point(rng, t), random_point(rng, t)
        assert mesh.tree.distance(mesh.map_point(p), mesh.map_point(q)) == pytest.approx(
            t.distance(p, q), abs=1e-9
        )


def test_identity_mesh():
    t = y_tree()
    mesh = Mesh.identity(t)
    assert mesh.tree is t
    p = t.point_on_edge(1, 0.7)
    assert mesh.map_point(p) == p
    assert mesh.base_point(p) == p


def test_apply_potential_quadrature_oracle():
    rng = np.random.default_rng(21)
    for _ in range(6):
        t = random_tree(rng, 8)
        phi = rng.uniform(-0.8, 0.8, size=t.n_edges)
        t2 = t.apply_potential(phi)
        assert t2.vertices == t.vertices
        a, b = (t.point(t.vertices[int(rng.integers(0, t.n_vertices))]) for _ in range(2))
        a2, b2 = t2.point(a.vertex), t2.point(b.vertex)
        # quadrature along the original arc with the midpoint rule
        d = t.distance(a, b)
        K = 4000
        acc = 0.0
        for k in range(K):
            mid = t.point_at_arc(a, b, (k + 0.5) * d / K)
            if mid.vertex is not None:
                # midpoint fell on a vertex: take either side, measure-zero event
                ei = t._adj[t.index(mid.vertex)][0][0]
            else:
                ei = mid.edge
            acc += math.exp(-2.0 * phi[ei]) * d / K
        assert t2.distance(a2, b2) == pytest.approx(acc, rel=5e-3, abs=5e-3)


def test_apply_potential_zero_is_identity():
    t = y_tree()
    t2 = t.apply_potential(np.zeros(t.n_edges))
    assert [e.length for e in t2.edges] == [e.length for e in t.edges]


def test_point_canonicalization():
    t = y_tree()
    assert t.point_on_edge(0, 0.0) == PointRef(vertex="v0")
    assert t.point_on_edge(0, 1.0) == PointRef(vertex="v1")
    assert t.point_on_edge(0, 1.0 - 1e-15) == PointRef(vertex="v1")
    mid = t.point_on_edge(1, 1.0)
    assert not mid.is_vertex and mid.edge == 1 and mid.offset == 1.0
    assert t.locate("v2", "v1", 0.5) == t.point_on_edge(1, 1.5)


def test_validation_errors():
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "a"], [("a", "a", 1.0)], "a")
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "b"], [("a", "b", -1.0)], "a")
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "b"], [("a", "b", 1.0)], "c")
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "b", "c"], [("a", "b", 1.0)], "a")
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "b", "c", "d"], [("a", "b", 1.0), ("c", "d", 1.0), ("a", "b", 2.0)], "a")
    with pytest.raises(TreeStructureError):
        # open marker on an interior vertex
        TreeSpec(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 1.0)], "a", open_leaves=["b"])
    with pytest.raises(TreeStructureError):
        TreeSpec(["a", "b"], [("a", "b", 1.0)], "a", open_leaves=["a"])
    with pytest.raises(PointError):
        y_tree().point("nope")
    with pytest.raises(PointError):
        y_tree().point_on_edge(0, 5.0)


def test_open_leaves_and_compactness():
    t = TreeSpec(["a", "b"], [("a", "b", 1.0)], "a", open_leaves=["b"])
    assert not t.is_compact
    assert t.leaf_kind("b") == "open"
    assert t.subdivide(0.5).tree.open_leaves == frozenset({"b"})
    assert y_tree().is_compact
