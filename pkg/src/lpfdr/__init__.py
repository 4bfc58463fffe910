"""Decentralized nonparametric multiple testing with mergeable LP summaries."""

from .lp_model import SkewBetaModel, build_model, lp_coefficients
from .partition_engine import PValuePartition, centralized_oracle, merge_lp, merge_moments
from .pipeline import RunConfig, run_pipeline
from .special import BetaParams

__version__ = "0.1.0"

__all__ = [
    "BetaParams",
    "PValuePartition",
    "RunConfig",
    "SkewBetaModel",
    "build_model",
    "centralized_oracle",
    "lp_coefficients",
    "merge_lp",
    "merge_moments",
    "run_pipeline",
]
