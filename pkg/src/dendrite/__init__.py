"""Exact potential theory and simulated diffusion on finite real trees.

The package answers two kinds of question about a Brownian-like motion on
a metric tree described by finitely many vertices, edge lengths, and a
speed measure: exact ones (capacities, Green kernels, hitting
probabilities and times, principal eigenvalues, recurrence verdicts),
solved by direct linear algebra on the tree, and sampled ones, answered
by simulating the embedded jump chain on a refined mesh and checked
against the exact values.
"""

from .calculus import EdgeGradient, PiecewiseLinearFn, arc_integral, energy, gradient, oriented_integral
from .classify import (
    POSITIVE_RECURRENT,
    RECURRENT,
    TRANSIENT,
    UNDETERMINED,
    Classification,
    GeneratorSpec,
    box_counting_dimension,
    classify_finite,
    classify_generator,
    classify_random_walk,
    end_space_dimension,
    kary_tree,
    resistance_limit,
)
from .errors import (
    DendriteError,
    MeasureError,
    ParseError,
    PointError,
    SolverError,
    TreeStructureError,
)
from .measure import LumpedMeasure, SpeedMeasure
from .potential import (
    GreenKernel,
    HarmonicSolution,
    capacity,
    distance_function,
    effective_resistance_to_depth,
    expected_occupation,
    green_general,
    green_two_point,
    harmonic,
    hitting_function,
    hitting_probability,
    star_exit_distribution,
)
from .simulate import (
    Chain,
    HittingBoundReport,
    Estimate,
    HitSet,
    TimeHorizon,
    WalkConfig,
    WalkStats,
    bound_check_mean_hitting,
    build_chain,
    estimate_hitting_time,
    estimate_occupation,
    mean_hitting_exact,
    run_single_walk,
    run_walks,
)
from .spectral import (
    SpectralResult,
    auto_mesh_width,
    eigenvalue_bounds,
    mixing_bound,
    mixing_diagnostic_bound,
    principal_eigenvalue,
    spectral_gap,
    tv_distance_curve,
)
from .tree import Edge, Mesh, PointRef, TreeSpec
from .treefile import parse_string, parse_tree_file, serialize, write_tree_file

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Edge", "Mesh", "PointRef", "TreeSpec",
    "LumpedMeasure", "SpeedMeasure",
    "EdgeGradient", "PiecewiseLinearFn", "arc_integral", "energy", "gradient", "oriented_integral",
    "GreenKernel", "HarmonicSolution", "capacity", "distance_function", "effective_resistance_to_depth", "expected_occupation",
    "green_general", "green_two_point", "harmonic", "hitting_function", "hitting_probability",
    "star_exit_distribution",
    "SpectralResult", "auto_mesh_width", "eigenvalue_bounds", "mixing_bound", "mixing_diagnostic_bound",
    "principal_eigenvalue", "spectral_gap", "tv_distance_curve",
    "POSITIVE_RECURRENT", "RECURRENT", "TRANSIENT", "UNDETERMINED",
    "Classification", "GeneratorSpec", "box_counting_dimension", "classify_finite",
    "classify_generator", "classify_random_walk", "end_space_dimension", "kary_tree",
    "resistance_limit",
    "Chain", "Estimate", "HitSet", "HittingBoundReport", "TimeHorizon", "WalkConfig", "WalkStats",
    "bound_check_mean_hitting", "build_chain", "estimate_hitting_time", "estimate_occupation",
    "mean_hitting_exact", "run_single_walk", "run_walks",
    "parse_string", "parse_tree_file", "serialize", "write_tree_file",
    "DendriteError", "MeasureError", "ParseError", "PointError", "SolverError",
    "TreeStructureError",
]
