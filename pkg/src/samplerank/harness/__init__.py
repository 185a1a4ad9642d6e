from .experiment import (
    ErrorReport,
    EstimatorSpec,
    ExperimentConfig,
    SamplerConfig,
    relative_error_curve,
    run_comparison,
    run_experiment,
    winner_accuracy,
)
from .io import RankSource, ingest_ranks, read_pmf, read_samples, synth_ranks, write_pmf, write_ranks, write_samples
