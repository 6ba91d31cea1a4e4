"""Stock recommendations that blend co-holding collaborative filtering with
mean-variance portfolio utility."""

from .cf import SnapshotStore, build_R, build_W, cf_scores, cocount, transition
from .errors import (
    DimensionMismatch,
    EmptyHistory,
    InvalidCutoff,
    MptcfError,
    NoValidDays,
    NonFiniteInput,
    ParseError,
    SolverDivergence,
    UniverseMismatch,
)
from .frontier import (
    EfficientFrontier,
    FrontierPath,
    FrontierPoint,
    compute_frontier,
    estimate_user_gamma,
    gamma_for_risk,
    optimal_portfolio,
)
from .hybrid import RecommendationList, hybrid_scores, top_n
from .market_model import DecayConfig, MomentEstimates, ReturnHistory, compute_moments, utility
from .mpt_scoring import replacement_weights, score_naive, score_vectorized
from .pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"
