"""Monotonicity-based inversion toolbox for a discretized fractional
Schrodinger operator: forward solves, DtN maps with resonance handling,
finite-defect Loewner tests, localized potentials, inclusion detection,
partition-constant reconstruction, and Lipschitz-stability experiments."""

from .errors import (
    ConfigError,
    DegeneratePencil,
    FracmonoError,
    ResonanceViolation,
    ResonantPotential,
    WitnessSearchError,
)
from .fracops import (
    GridSpec,
    NonlocalOperator,
    Partition,
    RegionMask,
    assemble_operator,
    bilinear_form,
    mask_from_flags,
    mask_from_region,
    mask_union,
    uniform_partition,
)
from .forward import (
    DtnMap,
    Potential,
    ResonanceData,
    assemble_dtn,
    dtn_derivative,
    dtn_difference,
    dtn_quadratic_form,
    neumann_trace,
    resonance_data,
    solution_operator,
    solve_dirichlet,
    stiffness,
)
from .inversion import (
    CandidateRecord,
    ConverseReport,
    DetectionConfig,
    DetectionResult,
    LocPotResult,
    MonotonicityGap,
    ReconstructionResult,
    ball_dictionary,
    closed_set_dictionary,
    converse_check,
    detect_definite,
    detect_indefinite,
    linearized_converse_check,
    localized_potential,
    monotonicity_gap,
    reconstruct_monotone,
    simultaneous_localized_potential,
    test_definite_ball,
    test_indefinite,
    testing_operator,
)
from .loewner import (
    OrderVerdict,
    eq_fin,
    geq_d,
    leq_d,
    neg_eig_count,
    projected_operator_norm,
)
from .stability import (
    DimensionBounds,
    StabilityReport,
    SubspaceLadder,
    WitnessData,
    build_ladder,
    dimension_bounds,
    estimate_constant,
    sandwich_holds,
    witness_data,
    witness_potentials,
    witness_sets,
)

__version__ = "0.1.0"
