"""Finite representations of rooted real trees.

A real tree is stored by its combinatorial skeleton: named vertices, edges
with positive lengths, a distinguished root vertex, and an open/closed marker
per leaf. The metric space it represents is the union of the edges viewed as
real segments glued at the vertices; an ``open`` leaf is a missing endpoint,
so the adjacent segment is half open there and the space is incomplete.

Points of the space are addressed by :class:`PointRef`: either a vertex by
id, or an interior point of an edge by (edge index, offset from the edge's
first stored endpoint). Offsets that land on an endpoint canonicalize to the
vertex form, so point equality is plain structural equality.

All metric operations (distance, branch points, meets, arcs) are exact up to
floating point rounding of sums of edge lengths.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import PointError, TreeStructureError

# Offsets closer than this (relative to max(1, edge length)) to an edge
# endpoint snap to the vertex, so branch points computed through distance
# arithmetic land on exact vertices instead of 1-ulp interior points.
_SNAP = 1e-12

CLOSED = "closed"
OPEN = "open"


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    length: float


@dataclass(frozen=True)
class PointRef:
    """A point of the tree: a vertex, or an interior point of an edge.

    ``vertex`` is the vertex id (edge == -1, offset == 0.0) or ``None`` for
    the interior form, where ``edge`` indexes ``TreeSpec.edges`` and
    ``offset`` is the arclength distance from that edge's ``u`` endpoint,
    strictly between 0 and the edge length.
    """

    vertex: str | None
    edge: int = -1
    offset: float = 0.0

    @property
    def is_vertex(self) -> bool:
        return self.vertex is not None

    def __repr__(self):
        if self.vertex is not None:
            return f"Point({self.vertex!r})"
        return f"Point(edge={self.edge}, offset={self.offset!r})"


class TreeSpec:
    """A rooted real tree with named vertices and weighted edges."""

    def __init__(
        self,
        vertices: Sequence[str],
        edges: Sequence[tuple[str, str, float]],
        root: str,
        open_leaves: Iterable[str] = (),
    ):
        vertices = tuple(vertices)
        if not vertices:
            raise TreeStructureError("a tree needs at least one vertex")
        for vid in vertices:
            if not isinstance(vid, str) or not vid or any(ch.isspace() for ch in vid) or vid.startswith("#"):
                raise TreeStructureError(f"bad vertex id {vid!r}")
        if len(set(vertices)) != len(vertices):
            raise TreeStructureError("duplicate vertex ids")
        self.vertices = vertices
        self._idx = {vid: i for i, vid in enumerate(vertices)}

        es = []
        for u, v, length in edges:
            if u not in self._idx or v not in self._idx:
                raise TreeStructureError(f"edge ({u},{v}) references unknown vertex")
            if u == v:
                raise TreeStructureError(f"self-loop at {u}")
            length = float(length)
            if not math.isfinite(length) or length <= 0.0:
                raise TreeStructureError(f"edge ({u},{v}) has non-positive length {length}")
            es.append(Edge(u, v, length))
        self.edges = tuple(es)
        n = len(vertices)
        if len(self.edges) != n - 1:
            raise TreeStructureError(f"{n} vertices need {n - 1} edges, got {len(self.edges)}")

        if root not in self._idx:
            raise TreeStructureError(f"root {root!r} is not a vertex")
        self.root = root

        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for ei, e in enumerate(self.edges):
            ui, vi = self._idx[e.u], self._idx[e.v]
            adj[ui].append((ei, vi))
            adj[vi].append((ei, ui))
        self._adj = tuple(tuple(a) for a in adj)
        self.degree = tuple(len(a) for a in adj)

        # root the tree: BFS establishes connectivity and parent arrays
        ridx = self._idx[root]
        parent = np.full(n, -1, dtype=np.int64)
        parent_edge = np.full(n, -1, dtype=np.int64)
        depth = np.zeros(n, dtype=np.int64)
        rootdist = np.zeros(n, dtype=np.float64)
        seen = np.zeros(n, dtype=bool)
        seen[ridx] = True
        order = [ridx]
        head = 0
        while head < len(order):
            i = order[head]
            head += 1
            for ei, j in self._adj[i]:
                if not seen[j]:
                    seen[j] = True
                    parent[j] = i
                    parent_edge[j] = ei
                    depth[j] = depth[i] + 1
                    rootdist[j] = rootdist[i] + self.edges[ei].length
                    order.append(j)
        if not seen.all():
            raise TreeStructureError("tree is not connected")
        self._parent = parent
        self._parent_edge = parent_edge
        self._depth = depth
        self._rootdist = rootdist
        # child endpoint of each edge (the endpoint farther from the root)
        child = np.empty(len(self.edges), dtype=np.int64)
        for ei, e in enumerate(self.edges):
            ui, vi = self._idx[e.u], self._idx[e.v]
            child[ei] = vi if parent[vi] == ui else ui
        self._edge_child = child

        leaves = {vid for vid in vertices if self.degree[self._idx[vid]] == 1}
        open_leaves = frozenset(open_leaves)
        bad = open_leaves - leaves
        if bad:
            raise TreeStructureError(f"open marker on non-leaf vertices: {sorted(bad)}")
        if root in open_leaves:
            raise TreeStructureError("the root cannot be an open leaf")
        self.open_leaves = open_leaves

    # -- basic queries ---------------------------------------------------

    def __repr__(self):
        return f"TreeSpec({len(self.vertices)} vertices, root={self.root!r})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, vid: str) -> int:
        try:
            return self._idx[vid]
        except KeyError:
            raise PointError(f"unknown vertex {vid!r}") from None

    def edge_index(self, u: str, v: str) -> int:
        ui = self.index(u)
        for ei, j in self._adj[ui]:
            if self.vertices[j] == v:
                return ei
        raise PointError(f"no edge between {u!r} and {v!r}")

    def is_leaf(self, vid: str) -> bool:
        return self.degree[self.index(vid)] == 1

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(v for v in self.vertices if self.degree[self._idx[v]] == 1)

    @property
    def is_compact(self) -> bool:
        return not self.open_leaves

    def neighbors(self, vid: str) -> tuple[str, ...]:
        return tuple(self.vertices[j] for _, j in self._adj[self.index(vid)])

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def leaf_kind(self, vid: str) -> str:
        if not self.is_leaf(vid):
            raise PointError(f"{vid!r} is not a leaf")
        return OPEN if vid in self.open_leaves else CLOSED

    # -- points ----------------------------------------------------------

    def point(self, vid: str) -> PointRef:
        self.index(vid)
        return PointRef(vertex=vid)

    def point_on_edge(self, edge: int, offset: float) -> PointRef:
        """Canonical point at ``offset`` from edge ``edge``'s first endpoint."""
        if not 0 <= edge < len(self.edges):
            raise PointError(f"edge index {edge} out of range")
        e = self.edges[edge]
        offset = float(offset)
        if not math.isfinite(offset) or offset < -_SNAP or offset > e.length + _SNAP * max(1.0, e.length):
            raise PointError(f"offset {offset} outside edge of length {e.length}")
        snap = _SNAP * max(1.0, e.length)
        if offset <= snap:
            return PointRef(vertex=e.u)
        if offset >= e.length - snap:
            return PointRef(vertex=e.v)
        return PointRef(vertex=None, edge=edge, offset=offset)

    def locate(self, u: str, v: str, offset: float) -> PointRef:
        """Point at ``offset`` from ``u`` along the edge joining ``u`` and ``v``."""
        ei = self.edge_index(u, v)
        if self.edges[ei].u == u:
            return self.point_on_edge(ei, offset)
        return self.point_on_edge(ei, self.edges[ei].length - offset)

    def contains(self, p: PointRef) -> bool:
        try:
            self._check(p)
            return True
        except PointError:
            return False

    def _check(self, p: PointRef) -> PointRef:
        if p.vertex is not None:
            self.index(p.vertex)
            return p
        if not 0 <= p.edge < len(self.edges):
            raise PointError(f"edge index {p.edge} out of range")
        if not 0.0 < p.offset < self.edges[p.edge].length:
            raise PointError(f"offset {p.offset} not interior to edge {p.edge}")
        return p

    def _anchors(self, p: PointRef) -> tuple[int, int, float, float]:
        """Endpoint decomposition (i, j, to_i, to_j); i == j for a vertex."""
        if p.vertex is not None:
            i = self.index(p.vertex)
            return i, i, 0.0, 0.0
        e = self.edges[p.edge]
        return self._idx[e.u], self._idx[e.v], p.offset, e.length - p.offset

    # -- metric ----------------------------------------------------------

    def _lca(self, i: int, j: int) -> int:
        while self._depth[i] > self._depth[j]:
            i = self._parent[i]
        while self._depth[j] > self._depth[i]:
            j = self._parent[j]
        while i != j:
            i = self._parent[i]
            j = self._parent[j]
        return i

    def vertex_distance(self, i: int, j: int) -> float:
        a = self._lca(i, j)
        return float(self._rootdist[i] + self._rootdist[j] - 2.0 * self._rootdist[a])

    def distance(self, x: PointRef, y: PointRef) -> float:
        """Geodesic distance r(x, y)."""
        x = self._check(x)
        y = self._check(y)
        if x == y:
            return 0.0
        if x.vertex is None and y.vertex is None and x.edge == y.edge:
            return abs(x.offset - y.offset)
        xi, xj, xu, xv = self._anchors(x)
        yi, yj, yu, yv = self._anchors(y)
        best = xu + yu + self.vertex_distance(xi, yi)
        for (a, da) in ((xi, xu), (xj, xv)):
            for (b, db) in ((yi, yu), (yj, yv)):
                d = da + db + self.vertex_distance(a, b)
                if d < best:
                    best = d
        return float(best)

    def _vertex_path(self, i: int, j: int) -> list[tuple[int, float, float]]:
        """Walk segments (edge, start offset, end offset) from vertex i to j."""
        up: list[tuple[int, float, float]] = []
        down: list[tuple[int, float, float]] = []
        a, b = i, j
        while self._depth[a] > self._depth[b]:
            up.append(self._seg_toward_parent(a))
            a = self._parent[a]
        while self._depth[b] > self._depth[a]:
            down.append(self._seg_from_parent(b))
            b = self._parent[b]
        while a != b:
            up.append(self._seg_toward_parent(a))
            a = self._parent[a]
            down.append(self._seg_from_parent(b))
            b = self._parent[b]
        return up + down[::-1]

    def _seg_toward_parent(self, child: int) -> tuple[int, float, float]:
        ei = self._parent_edge[child]
        e = self.edges[ei]
        if self._idx[e.u] == child:
            return (ei, 0.0, e.length)
        return (ei, e.length, 0.0)

    def _seg_from_parent(self, child: int) -> tuple[int, float, float]:
        ei, s0, s1 = self._seg_toward_parent(child)
        return (ei, s1, s0)

    def _segments(self, x: PointRef, y: PointRef) -> list[tuple[int, float, float]]:
        """The arc [x, y] as stored-orientation walk segments, start to end."""
        x = self._check(x)
        y = self._check(y)
        if x == y:
            return []
        if x.vertex is None and y.vertex is None and x.edge == y.edge:
            return [(x.edge, x.offset, y.offset)]
        xi, xj, xu, xv = self._anchors(x)
        yi, yj, yu, yv = self._anchors(y)
        # pick the exit endpoints realizing the geodesic
        if x.vertex is None:
            via_u = xu + min(self.vertex_distance(xi, yi) + yu, self.vertex_distance(xi, yj) + yv)
            via_v = xv + min(self.vertex_distance(xj, yi) + yu, self.vertex_distance(xj, yj) + yv)
            ax = xi if via_u <= via_v else xj
        else:
            ax = xi
        if y.vertex is None:
            ay = yi if yu + self.vertex_distance(ax, yi) <= yv + self.vertex_distance(ax, yj) else yj
        else:
            ay = yi
        segs: list[tuple[int, float, float]] = []
        if x.vertex is None:
            e = self.edges[x.edge]
            target = 0.0 if ax == self._idx[e.u] else e.length
            segs.append((x.edge, x.offset, target))
        segs.extend(self._vertex_path(ax, ay))
        if y.vertex is None:
            e = self.edges[y.edge]
            source = 0.0 if ay == self._idx[e.u] else e.length
            segs.append((y.edge, source, y.offset))
        return [s for s in segs if s[1] != s[2]]

    def arc_length(self, segs: list[tuple[int, float, float]]) -> float:
        return float(sum(abs(s1 - s0) for _, s0, s1 in segs))

    def point_at_arc(self, x: PointRef, y: PointRef, s: float) -> PointRef:
        """The point on the arc [x, y] at distance ``s`` from ``x``."""
        segs = self._segments(x, y)
        total = self.arc_length(segs)
        if s < -_SNAP * max(1.0, total) or s > total * (1.0 + _SNAP) + _SNAP:
            raise PointError(f"arc offset {s} outside [0, {total}]")
        s = min(max(s, 0.0), total)
        if not segs:
            return x
        acc = 0.0
        for k, (ei, s0, s1) in enumerate(segs):
            seg_len = abs(s1 - s0)
            if s <= acc + seg_len or k == len(segs) - 1:
                frac = min(max(s - acc, 0.0), seg_len)
                off = s0 + math.copysign(frac, s1 - s0)
                return self.point_on_edge(ei, off)
            acc += seg_len
        return y

    def branch_point(self, a: PointRef, b: PointRef, x: PointRef) -> PointRef:
        """The median c(a, b, x): the unique point on all three pairwise arcs."""
        d_ab = self.distance(a, b)
        d_ax = self.distance(a, x)
        d_bx = self.distance(b, x)
        da = 0.5 * (d_ab + d_ax - d_bx)
        da = min(max(da, 0.0), d_ab)
        return self.point_at_arc(a, b, da)

    def meet(self, x: PointRef, y: PointRef) -> PointRef:
        """x and y's last common point seen from the root."""
        return self.branch_point(self.point(self.root), x, y)

    def diameter(self) -> float:
        """sup of pairwise distances (attained at vertices)."""
        if self.n_vertices == 1:
            return 0.0
        i = self._farthest_from(self._idx[self.root])[0]
        return self._farthest_from(i)[1]

    def _farthest_from(self, i: int) -> tuple[int, float]:
        dist = np.full(self.n_vertices, -1.0)
        dist[i] = 0.0
        stack = [i]
        while stack:
            a = stack.pop()
            for ei, b in self._adj[a]:
                if dist[b] < 0:
                    dist[b] = dist[a] + self.edges[ei].length
                    stack.append(b)
        j = int(np.argmax(dist))
        return j, float(dist[j])

    # -- derived trees ---------------------------------------------------

    def subdivide(self, h: float) -> "Mesh":
        """Refine every edge into segments of length at most ``h``.

        Segment counts are minimal and segments within an edge have equal
        length, so original vertices keep their ids and positions.
        """
        if not (math.isfinite(h) and h > 0):
            raise PointError(f"mesh width must be positive, got {h}")
        cuts = []
        for e in self.edges:
            n = max(1, math.ceil(e.length / h - 1e-9))
            step = e.length / n
            cuts.append([step * k for k in range(1, n)])
        return self._build_mesh(cuts)

    def split_at(self, points: Iterable[PointRef]) -> "Mesh":
        """Refine so that every listed point is a vertex."""
        cuts: list[list[float]] = [[] for _ in self.edges]
        for p in points:
            p = self._check(p)
            if p.vertex is None:
                cuts[p.edge].append(p.offset)
        merged = []
        for ei, cs in enumerate(cuts):
            cs = sorted(set(cs))
            snap = _SNAP * max(1.0, self.edges[ei].length)
            out: list[float] = []
            for c in cs:
                if not out or c - out[-1] > snap:
                    out.append(c)
            merged.append(out)
        return self._build_mesh(merged)

    def _build_mesh(self, cuts: list[list[float]]) -> "Mesh":
        names = iter(_fresh_names(set(self.vertices)))
        new_vertices = list(self.vertices)
        new_edges: list[tuple[str, str, float]] = []
        edge_parent: list[int] = []
        positions: list[np.ndarray] = []
        vertex_rows: list[list[str]] = []
        edge_rows: list[list[int]] = []
        for ei, e in enumerate(self.edges):
            pos = [0.0, *cuts[ei], e.length]
            row_v = [e.u]
            for _ in cuts[ei]:
                vid = next(names)
                new_vertices.append(vid)
                row_v.append(vid)
            row_v.append(e.v)
            row_e = []
            for k in range(len(pos) - 1):
                row_e.append(len(new_edges))
                new_edges.append((row_v[k], row_v[k + 1], pos[k + 1] - pos[k]))
                edge_parent.append(ei)
            positions.append(np.asarray(pos))
            vertex_rows.append(row_v)
            edge_rows.append(row_e)
        tree = TreeSpec(new_vertices, new_edges, self.root, self.open_leaves)
        return Mesh(self, tree, np.asarray(edge_parent, dtype=np.int64), positions, vertex_rows, edge_rows)

    def apply_potential(self, phi: Sequence[float]) -> "TreeSpec":
        """Rescale edge lengths by exp(-2 phi), phi constant per edge.

        This is the change of metric induced by a piecewise constant
        potential; distances in the result integrate exp(-2 phi) along arcs
        of the original tree.
        """
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (len(self.edges),):
            raise PointError(f"need one potential value per edge, got shape {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise PointError("potential values must be finite")
        edges = [(e.u, e.v, e.length * math.exp(-2.0 * p)) for e, p in zip(self.edges, phi)]
        return TreeSpec(self.vertices, edges, self.root, self.open_leaves)


def _fresh_names(taken: set[str]):
    k = 0
    while True:
        name = f"~{k}"
        if name not in taken:
            yield name
        k += 1


class Mesh:
    """A subdivision of a base tree, with point transfer in both directions."""

    def __init__(self, base, tree, edge_parent, positions, vertex_rows, edge_rows):
        self.base: TreeSpec = base
        self.tree: TreeSpec = tree
        self.edge_parent: np.ndarray = edge_parent
        self._positions = positions    # per base edge: cut positions incl. ends
        self._vertex_rows = vertex_rows  # per base edge: mesh vertex ids along it
        self._edge_rows = edge_rows      # per base edge: mesh edge indices along it
        self._vertex_loc = {}
        for be, row in enumerate(vertex_rows):
            for k, vid in enumerate(row):
                if vid not in base._idx:
                    self._vertex_loc[vid] = (be, float(positions[be][k]))

    @classmethod
    def identity(cls, t: TreeSpec) -> "Mesh":
        positions = [np.asarray([0.0, e.length]) for e in t.edges]
        vertex_rows = [[e.u, e.v] for e in t.edges]
        edge_rows = [[ei] for ei in range(t.n_edges)]
        return cls(t, t, np.arange(t.n_edges, dtype=np.int64), positions, vertex_rows, edge_rows)

    def map_point(self, p: PointRef) -> PointRef:
        """Transfer a point of the base tree onto the mesh tree."""
        p = self.base._check(p)
        if p.vertex is not None:
            return self.tree.point(p.vertex)
        pos = self._positions[p.edge]
        k = bisect_left(pos, p.offset)
        snap = _SNAP * max(1.0, float(pos[-1]))
        if k < len(pos) and abs(pos[k] - p.offset) <= snap:
            return self.tree.point(self._vertex_rows[p.edge][k])
        if k > 0 and abs(pos[k - 1] - p.offset) <= snap:
            return self.tree.point(self._vertex_rows[p.edge][k - 1])
        mesh_edge = self._edge_rows[p.edge][k - 1]
        return self.tree.point_on_edge(mesh_edge, p.offset - float(pos[k - 1]))

    def base_point(self, p: PointRef) -> PointRef:
        """Transfer a point of the mesh tree back onto the base tree."""
        p = self.tree._check(p)
        if p.vertex is not None and p.vertex in self.base._idx:
            return self.base.point(p.vertex)
        if p.vertex is not None:
            try:
                be, off = self._vertex_loc[p.vertex]
            except KeyError:
                raise PointError(f"mesh vertex {p.vertex!r} has no base location") from None
            return self.base.point_on_edge(be, off)
        be = int(self.edge_parent[p.edge])
        row = self._edge_rows[be]
        k = row.index(p.edge)
        return self.base.point_on_edge(be, float(self._positions[be][k]) + p.offset)
