"""sdrsynth: LMI controller synthesis for discrete-time systems in
state-dependent representation, from a known model or directly from noisy
experiment data, with certified regions of attraction, disturbance
robustness, and input-saturation guarantees."""

from .analysis import (
    RobustnessCertificate,
    SublevelRoa,
    robustness_data,
    robustness_model,
    sublevel_roa,
)
from .data import (
    ConsistencySet,
    ExperimentData,
    assemble,
    build_consistency_set,
    check_full_row_rank,
    load_dataset,
    membership,
)
from .errors import (
    ConfigError,
    DataError,
    InfeasibleProblem,
    NumericalFailure,
    SdrsynthError,
    UsageError,
    VertexCapExceeded,
)
from .expr import Expr, Interval, bound_over_ball, bound_over_box, evaluate, parse
from .model import (
    BasisLibrary,
    GroundTruthCoefficients,
    SdrModel,
    VertexSet,
    build_basis_vertices,
    build_model_vertices,
    evaluate_dynamics,
    reconstruct_AB,
)
from .sim import (
    SimConfig,
    Trajectory,
    generate_experiments,
    phase_portrait,
    rollout,
    saturate,
    step,
)
from .synth import (
    RoaDescription,
    SynthesisOptions,
    SynthesisResult,
    load_result,
    roa_radius,
    save_result,
    synthesize_data,
    synthesize_data_saturated,
    synthesize_model,
    synthesize_model_saturated,
)

__version__ = "0.1.0"
