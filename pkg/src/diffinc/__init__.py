"""Set-valued dynamics toolkit: Filippov systems, broken-line solutions
with explicit accuracy certificates, and finite reachability relations
with monoid and closure diagnostics.
"""

__version__ = "0.1.0"

from .setvalued import (
    Box,
    ConstantSetMap,
    ConvexSet,
    DimensionMismatchError,
    EvaluationError,
    PointCheck,
    SingleValuedMap,
    VertexFieldMap,
    check_point,
    estimate_bound,
    hausdorff_distance,
    hull_contains,
    hull_distance,
    hull_of,
    inflate,
    min_norm_point,
    sample_box,
    usc_probe,
)
from .filippov import (
    Boundary,
    CompiledExpression,
    CompiledField,
    ConfigurationError,
    DegenerateSlidingError,
    ExpressionError,
    FieldEvaluationError,
    FilippovSystem,
    Interior,
    Region,
    SlidingSelection,
    SwitchingFunction,
    UnsupportedBoundaryError,
    compile_expression,
    compile_field,
)
from .solver import (
    Centroid,
    ExitInfo,
    LipschitzReport,
    RandomSeeded,
    RefineReport,
    ResidualReport,
    SelectionStrategy,
    SlidingAware,
    SolverDiagnostic,
    SolverStagnationError,
    StepPlan,
    Trajectory,
    TwoPhase,
    VertexIndex,
    continue_to_boundary,
    equicontinuity_check,
    euler_delta_solution,
    read_trajectory,
    refine,
    verify_delta_solution,
    write_trajectory,
)
from .multiflow import (
    ClosureReport,
    Grid,
    GridMismatchError,
    MultiflowApprox,
    Provenance,
    Relation,
    build_multiflow,
    closure_defect,
    compose,
    default_battery,
    directed_distance,
    identity_relation,
    monoid_defect,
    reach_relation,
    read_relation,
    write_relation,
)

__all__ = [
    "Boundary",
    "Box",
    "Centroid",
    "ClosureReport",
    "CompiledExpression",
    "CompiledField",
    "ConfigurationError",
    "ConstantSetMap",
    "ConvexSet",
    "DegenerateSlidingError",
    "DimensionMismatchError",
    "EvaluationError",
    "ExitInfo",
    "ExpressionError",
    "FieldEvaluationError",
    "FilippovSystem",
    "Grid",
    "GridMismatchError",
    "Interior",
    "LipschitzReport",
    "MultiflowApprox",
    "PointCheck",
    "Provenance",
    "RandomSeeded",
    "RefineReport",
    "Region",
    "Relation",
    "ResidualReport",
    "SelectionStrategy",
    "SingleValuedMap",
    "SlidingAware",
    "SlidingSelection",
    "SolverDiagnostic",
    "SolverStagnationError",
    "StepPlan",
    "SwitchingFunction",
    "Trajectory",
    "TwoPhase",
    "UnsupportedBoundaryError",
    "VertexFieldMap",
    "VertexIndex",
    "build_multiflow",
    "check_point",
    "closure_defect",
    "compile_expression",
    "compile_field",
    "compose",
    "continue_to_boundary",
    "default_battery",
    "directed_distance",
    "equicontinuity_check",
    "estimate_bound",
    "euler_delta_solution",
    "hausdorff_distance",
    "hull_contains",
    "hull_distance",
    "hull_of",
    "identity_relation",
    "inflate",
    "min_norm_point",
    "monoid_defect",
    "reach_relation",
    "read_relation",
    "read_trajectory",
    "refine",
    "sample_box",
    "usc_probe",
    "verify_delta_solution",
    "write_relation",
    "write_trajectory",
]
