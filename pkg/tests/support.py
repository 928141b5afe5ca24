"""Shared helpers for the test suite: fixture trees and random generators."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from dendrite.measure import SpeedMeasure
from dendrite.tree import PointRef, TreeSpec


def random_measure(rng: np.random.Generator, t: TreeSpec, atom_prob: float = 0.3) -> SpeedMeasure:
    """Strictly positive densities with sparse vertex atoms."""
    dens = rng.uniform(0.5, 2.0, size=t.n_edges)
    atoms = np.where(rng.random(t.n_vertices) < atom_prob, rng.uniform(0.1, 1.0, size=t.n_vertices), 0.0)
    return SpeedMeasure(t, dens, atoms)


def y_tree() -> TreeSpec:
    """Three segments of lengths 1, 2, 3 glued at a center, rooted at the tip
    of the short one."""
    return TreeSpec(
        ["v0", "v1", "v2", "v3"],
        [("v0", "v1", 1.0), ("v1", "v2", 2.0), ("v1", "v3", 3.0)],
        "v0",
    )


def interval_tree() -> TreeSpec:
    """The unit segment [0, 1] as a single edge, rooted at 0."""
    return TreeSpec(["x0", "x1"], [("x0", "x1", 1.0)], "x0")


def random_tree(rng: np.random.Generator, n: int, lo: float = 0.2, hi: float = 2.0) -> TreeSpec:
    """Uniform random recursive tree on n vertices with iid edge lengths."""
    names = [f"n{i}" for i in range(n)]
    edges = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((names[j], names[i], float(rng.uniform(lo, hi))))
    root = names[int(rng.integers(0, n))]
    return TreeSpec(names, edges, root)


def random_point(rng: np.random.Generator, t: TreeSpec, vertex_prob: float = 0.4) -> PointRef:
    if t.n_edges == 0 or rng.random() < vertex_prob:
        return t.point(t.vertices[int(rng.integers(0, t.n_vertices))])
    ei = int(rng.integers(0, t.n_edges))
    off = float(rng.uniform(0.0, t.edges[ei].length))
    return t.point_on_edge(ei, off)


def all_pairs_dijkstra(t: TreeSpec) -> np.ndarray:
    """Independent all-pairs vertex distances via scipy's graph machinery."""
    n = t.n_vertices
    rows, cols, vals = [], [], []
    for e in t.edges:
        i, j = t.index(e.u), t.index(e.v)
        rows += [i, j]
        cols += [j, i]
        vals += [e.length, e.length]
    g = coo_matrix((vals, (rows, cols)), shape=(n, n))
    return dijkstra(g)


def point_distance_oracle(t: TreeSpec, p: PointRef, q: PointRef) -> float:
    """Distance between arbitrary points, computed on an augmented graph.

    Builds an (n+2)-node weighted graph where the two points are explicit
    nodes splitting their edges, then runs Dijkstra. Never calls the tree's
    own metric code.
    """
    n = t.n_vertices
    P, Q = n, n + 1
    rows, cols, vals = [], [], []

    def add(i, j, w):
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([w, w])

    special = {}
    if p.vertex is None:
        special.setdefault(p.edge, []).append((P, p.offset))
    if q.vertex is None:
        special.setdefault(q.edge, []).append((Q, q.offset))
    for ei, e in enumerate(t.edges):
        i, j = t.index(e.u), t.index(e.v)
        if ei not in special:
            add(i, j, e.length)
            continue
        marks = sorted(special[ei], key=lambda m: m[1])
        prev, prev_off = i, 0.0
        for node, off in marks:
            add(prev, node, off - prev_off)
            prev, prev_off = node, off
        add(prev, j, e.length - prev_off)
    g = coo_matrix((vals, (rows, cols)), shape=(n + 2, n + 2))
    d = dijkstra(g)
    i = t.index(p.vertex) if p.vertex is not None else P
    j = t.index(q.vertex) if q.vertex is not None else Q
    return float(d[i, j])
