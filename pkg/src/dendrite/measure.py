"""Speed measures on a tree: edgewise-constant densities plus vertex atoms.

The measure of a set is the length integral of the density over it plus the
atoms it contains. ``lump`` collapses a measure onto the vertices of a mesh
by the half-edge rule: each mesh edge sends half its density mass to each
endpoint, and atoms stay where they are. Lumping preserves total mass
exactly, and the lumped masses are the diagonal mass matrix used by the
discrete form, the spectral solvers, and the simulated chain.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .calculus import PiecewiseLinearFn
from .errors import MeasureError
from .tree import Mesh, TreeSpec


class SpeedMeasure:
    """A finite measure with edgewise-constant density and vertex atoms."""

    def __init__(self, tree: TreeSpec, edge_density=None, vertex_atom=None):
        self.tree = tree
        if edge_density is None:
            edge_density = np.ones(tree.n_edges)
        if vertex_atom is None:
            vertex_atom = np.zeros(tree.n_vertices)
        elif isinstance(vertex_atom, Mapping):
            vals = np.zeros(tree.n_vertices)
            for vid, a in vertex_atom.items():
                vals[tree.index(vid)] = float(a)
            vertex_atom = vals
        self.edge_density = np.asarray(edge_density, dtype=np.float64)
        self.vertex_atom = np.asarray(vertex_atom, dtype=np.float64)
        if self.edge_density.shape != (tree.n_edges,):
            raise MeasureError(f"need one density per edge, got shape {self.edge_density.shape}")
        if self.vertex_atom.shape != (tree.n_vertices,):
            raise MeasureError(f"need one atom per vertex, got shape {self.vertex_atom.shape}")
        if not (np.all(np.isfinite(self.edge_density)) and np.all(np.isfinite(self.vertex_atom))):
            raise MeasureError("densities and atoms must be finite")
        if np.any(self.edge_density < 0) or np.any(self.vertex_atom < 0):
            raise MeasureError("densities and atoms must be nonnegative")
        if self.total_mass() <= 0:
            raise MeasureError("the measure must not vanish identically")

    @classmethod
    def length_measure(cls, tree: TreeSpec) -> "SpeedMeasure":
        """Unit density everywhere, no atoms."""
        return cls(tree)

    @classmethod
    def atoms(cls, tree: TreeSpec, atom: Mapping[str, float] | float) -> "SpeedMeasure":
        """Purely atomic measure; ``atom`` is per-vertex or one shared value."""
        vals = np.zeros(tree.n_vertices)
        if isinstance(atom, Mapping):
            for vid, a in atom.items():
                vals[tree.index(vid)] = float(a)
        else:
            vals[:] = float(atom)
        return cls(tree, edge_density=np.zeros(tree.n_edges), vertex_atom=vals)

    def __repr__(self):
        return f"SpeedMeasure(total={self.total_mass():g} on {self.tree!r})"

    def total_mass(self) -> float:
        lengths = np.fromiter((e.length for e in self.tree.edges), dtype=np.float64, count=self.tree.n_edges)
        return float(np.dot(self.edge_density, lengths) + self.vertex_atom.sum())

    def integrate(self, f: PiecewiseLinearFn) -> float:
        """Exact integral of an edgewise-linear function against the measure."""
        if f.tree is not self.tree:
            raise MeasureError("function lives on a different tree")
        t = self.tree
        acc = float(np.dot(self.vertex_atom, f.values))
        for ei, e in enumerate(t.edges):
            fu = f.values[t.index(e.u)]
            fv = f.values[t.index(e.v)]
            acc += self.edge_density[ei] * e.length * 0.5 * (fu + fv)
        return acc

    def refine(self, mesh: Mesh) -> "SpeedMeasure":
        """The same measure expressed on a subdivision of its tree."""
        if mesh.base is not self.tree:
            raise MeasureError("mesh does not refine this measure's tree")
        density = self.edge_density[mesh.edge_parent]
        atoms = np.zeros(mesh.tree.n_vertices)
        for vid, a in zip(self.tree.vertices, self.vertex_atom):
            atoms[mesh.tree.index(vid)] = a
        return SpeedMeasure(mesh.tree, density, atoms)

    def lump(self, mesh: Mesh | None = None) -> "LumpedMeasure":
        """Collapse onto mesh vertices by the half-edge rule."""
        if mesh is not None:
            return self.refine(mesh).lump()
        t = self.tree
        mass = self.vertex_atom.copy()
        for ei, e in enumerate(t.edges):
            half = 0.5 * self.edge_density[ei] * e.length
            mass[t.index(e.u)] += half
            mass[t.index(e.v)] += half
        return LumpedMeasure(t, mass)


class LumpedMeasure:
    """Vertex masses produced by lumping a speed measure onto a mesh."""

    def __init__(self, tree: TreeSpec, mass):
        self.tree = tree
        self.mass = np.asarray(mass, dtype=np.float64)
        if self.mass.shape != (tree.n_vertices,):
            raise MeasureError(f"need one mass per vertex, got shape {self.mass.shape}")
        if np.any(self.mass < 0) or not np.all(np.isfinite(self.mass)):
            raise MeasureError("lumped masses must be finite and nonnegative")

    def total_mass(self) -> float:
        return float(self.mass.sum())
