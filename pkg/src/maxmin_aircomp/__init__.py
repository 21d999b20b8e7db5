"""Max-min discriminant gain power allocation for AirComp edge co-inference."""

from .discriminant import GainTable, gain_table, gains_of, min_gain_of
from .errors import (
    AirCompError,
    ConfigurationError,
    DegenerateInstanceError,
    DomainError,
    IngestionError,
    InsufficientDataError,
    LearningRateError,
    SolverFailureError,
)
from .model import (
    ChannelState,
    FeatureStatistics,
    PowerBudget,
    ReceivedDistribution,
    SystemInstance,
    dbm_to_watt,
    estimate_statistics,
    received_moments,
    validate_instance,
)
from .optimizer import (
    ScaConfig,
    SolveTrace,
    initialize_feasible,
    mmse_allocation,
    optimize_average_baseline,
    sca_maxmin,
    solve_scheme,
)
from .simulator import (
    AccuracyReport,
    NetworkConfig,
    evaluate_accuracy,
    generate_synthetic_statistics,
    map_classify,
    sample_channels,
    simulate_transmission,
    train_softmax_classifier,
)
from .subproblem import SubproblemSolverConfig, kkt_residual, linearize_q, solve_subproblem

__version__ = "0.1.0"
