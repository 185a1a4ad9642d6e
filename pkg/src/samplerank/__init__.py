"""Estimating global top-K recommender metrics from item-sampled ranks."""

from .core import (
    AdjustedMetric,
    MetricSpec,
    RankDataset,
    RankPmf,
    SampledPmf,
    SampleRecord,
    SampleSet,
    apply_adjusted_metric,
    empirical_sampled_pmf,
    global_metric,
    metric_value,
    naive_sampled_metric,
    plugin_metric_from_pmf,
)
from .em import EmConfig, EmResult, adaptive_mle_estimate, em_fit, group_observations, mle_estimate
from .estimators import LsProblem, estimate_with_adjusted, eval_objective, solve_bv, solve_mn
from .rank_model import ConditionalMatrix, conditional_matrix, rank_likelihood, success_prob
from .sampling import AdaptiveConfig, EfficiencyReport, efficiency_analysis, simulate_adaptive, simulate_fixed

__version__ = "0.1.0"
