"""Normal forms for lower-dimensional elliptic tori.

Truncated Taylor-Fourier Poisson-series algebra, a four-stage torus
normalization step, the quantitative estimate calculus that certifies it,
and a resonance-geometry toolkit with a Monte-Carlo measure estimator.
"""

from .series import (
    ClassTag,
    Dimensions,
    DomainParams,
    InvariantViolation,
    MonomialKey,
    TaylorFourierSeries,
    TruncationCounter,
    average_q,
    characteristics,
    grade,
    poisson_bracket,
    truncate,
    verify_class,
    weighted_norm,
)
from .hamiltonian import (
    HamiltonianState,
    RealSeries,
    RunConfig,
    complexify,
    prepare_hamiltonian,
    realify,
)
from .normalizer import (
    GeneratingSet,
    ResonanceDetected,
    StepReport,
    check_nonresonance,
    normalization_step,
    normalize,
)
from .estimates import (
    EstimateConfig,
    SequenceCache,
    Thresholds,
    bound_checkers,
    counting_sequences,
    thresholds,
)
from .geometry import (
    FrequencyAtlas,
    GridFrequencyMap,
    ResonanceStrip,
    carve_resonances,
    mc_union_measure,
    measure_resonant_volume,
    toy_atlas,
)
from .models import ModelSpec, bundled_model, load_model, save_model, toy_model
from .reports import (
    GeometryReport,
    PipelineResult,
    TorusResidualReport,
    emit_reports,
    run_geometry,
    run_pipeline,
    verification_checks,
    verify_torus_residual,
)

__all__ = [
    "ClassTag",
    "Dimensions",
    "DomainParams",
    "InvariantViolation",
    "MonomialKey",
    "TaylorFourierSeries",
    "TruncationCounter",
    "average_q",
    "characteristics",
    "grade",
    "poisson_bracket",
    "truncate",
    "verify_class",
    "weighted_norm",
    "HamiltonianState",
    "RealSeries",
    "RunConfig",
    "complexify",
    "prepare_hamiltonian",
    "realify",
    "GeneratingSet",
    "ResonanceDetected",
    "StepReport",
    "check_nonresonance",
    "normalization_step",
    "normalize",
    "EstimateConfig",
    "SequenceCache",
    "Thresholds",
    "bound_checkers",
    "counting_sequences",
    "thresholds",
    "FrequencyAtlas",
    "GridFrequencyMap",
    "ResonanceStrip",
    "carve_resonances",
    "mc_union_measure",
    "measure_resonant_volume",
    "toy_atlas",
    "ModelSpec",
    "bundled_model",
    "load_model",
    "save_model",
    "toy_model",
    "GeometryReport",
    "PipelineResult",
    "TorusResidualReport",
    "emit_reports",
    "run_geometry",
    "run_pipeline",
    "verification_checks",
    "verify_torus_residual",
]

__version__ = "0.1.0"
