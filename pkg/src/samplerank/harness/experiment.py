"""Repeated sampling experiments comparing estimators against exact truth."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import (
    FAMILIES,
    MetricSpec,
    RankDataset,
    RankPmf,
    SampleSet,
    empirical_sampled_pmf,
    global_metric,
    naive_sampled_metric,
    plugin_metric_from_pmf,
)
from ..em import EmConfig, em_fit
from ..estimators import DEFAULT_GAMMA, AdjustedMetricSolver
from ..sampling import DEFAULT_N0, DEFAULT_NMAX, AdaptiveConfig, simulate_adaptive, simulate_fixed
from .io import RankSource, load_ranks, read_pmf

log = logging.getLogger(__name__)

ESTIMATOR_KINDS = ("naive", "mle", "adaptive_mle", "bv", "mn")
DEFAULT_ESTIMATORS = ("naive", "mle", "bv", "bv_mle", "mn_mle")


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    prior: str | None = None  # "uniform", "mle" or "file:PATH" for bv/mn

    @property
    def name(self) -> str:
        if self.prior is None:
            return self.kind
        return f"{self.kind}_{self.prior.split(':')[0]}"

    @classmethod
    def parse(cls, token: str, default_prior: str = "uniform") -> "EstimatorSpec":
        token = token.strip().lower()
        if token in ("naive", "mle", "adaptive_mle"):
            return cls(token)
        kind, _, prior = token.partition("_")
        if kind not in ("bv", "mn"):
            raise ValueError(f"unknown estimator {token!r}; expected one of {ESTIMATOR_KINDS}")
        prior = prior or default_prior
        if prior not in ("uniform", "mle") and not prior.startswith("file:"):
            raise ValueError(f"unknown prior {prior!r} for {kind}")
        return cls(kind, prior)


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "fixed"
    n: int = DEFAULT_N0
    n0: int = DEFAULT_N0
    nmax: int = DEFAULT_NMAX
    exact_mode: bool = False  # fixed sampling with n == N and r_u = R_u

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise ValueError(f"unknown sampler {self.kind!r}")
        if self.kind == "adaptive":
            AdaptiveConfig(self.n0, self.nmax)
            if self.exact_mode:
                raise ValueError("exact_mode only applies to fixed sampling")
        elif self.n < 2:
            raise ValueError("fixed sample size must be >= 2")


@dataclass(frozen=True)
class ExperimentConfig:
    catalog_size: int
    num_users: int
    rank_source: RankSource = field(default_factory=RankSource)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    metrics: tuple[str, ...] = ("recall",)
    k_max: int = 50
    repeats: int = 100
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    prior: str = "uniform"
    em_max_iters: int = 500
    em_tol: float = 1e-8

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 1 <= self.k_max <= self.catalog_size:
            raise ValueError(f"k_max must lie in [1, {self.catalog_size}]")
        if self.sampler.exact_mode and self.sampler.n != self.catalog_size:
            raise ValueError("exact_mode needs n == catalog size")
        for fam in self.metrics:
            if fam not in FAMILIES:
                raise ValueError(f"unknown metric {fam!r}")
        specs = self.estimator_specs()
        if self.sampler.kind == "adaptive":
            for spec in specs:
                if spec.kind in ("bv", "mn"):
                    raise ValueError(
                        f"estimator {spec.name!r} cannot run with the adaptive sampler: "
                        "the least-squares route requires equal sample sizes"
                    )

    def estimator_specs(self) -> list[EstimatorSpec]:
        return [EstimatorSpec.parse(t, self.prior) for t in self.estimators]

    def to_dict(self) -> dict:
        return asdict(self)


def repeat_seed(seed: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, repeat]).generate_state(1)[0])


def relative_error_curve(true_curve, est_curve) -> tuple[float, np.ndarray, int]:
    """Mean of |est - true| / true over K, skipping K where the truth is 0.

    Returns (average, per-K errors with NaN at skipped K, skipped count).
    """
    true_curve = np.asarray(true_curve, dtype=np.float64)
    est_curve = np.asarray(est_curve, dtype=np.float64)
    if true_curve.shape != est_curve.shape:
        raise ValueError("curves differ in length")
    keep = true_curve != 0
    per_k = np.full(true_curve.shape, np.nan)
    per_k[keep] = np.abs(est_curve[keep] - true_curve[keep]) / true_curve[keep]
    skipped = int(np.count_nonzero(~keep))
    avg = float(np.mean(per_k[keep])) if keep.any() else float("nan")
    return avg, per_k, skipped


def winner_accuracy(per_model_true, per_model_est) -> int:
    """Count repeats where the estimated best model is the true best.

    ``per_model_est`` has one row per repeat and one column per model.
    Ties go to the lowest model index on both sides.
    """
    truth = np.asarray(per_model_true, dtype=np.float64)
    est = np.atleast_2d(np.asarray(per_model_est, dtype=np.float64))
    if truth.size < 2 or est.shape[1] != truth.size:
        raise ValueError("need estimates for the same >= 2 models")
    best = int(np.argmax(truth))
    return int(np.count_nonzero(np.argmax(est, axis=1) == best))


def _simulate(dataset: RankDataset, sampler: SamplerConfig, seed: int) -> SampleSet:
    if sampler.exact_mode:
        return SampleSet(dataset.ranks, np.full(dataset.num_users, dataset.catalog_size))
    if sampler.kind == "fixed":
        return simulate_fixed(dataset, sampler.n, seed)
    return simulate_adaptive(dataset, AdaptiveConfig(sampler.n0, sampler.nmax), seed)


def _prior(name: str, catalog_size: int, fitted) -> RankPmf:
    if name == "uniform":
        return RankPmf.uniform(catalog_size)
    if name == "mle":
        return fitted()
    return read_pmf(name.split(":", 1)[1], catalog_size)


def run_repeat(cfg: ExperimentConfig, dataset: RankDataset, repeat: int) -> tuple[dict, float]:
    """Estimate every (estimator, metric) curve over K = 1..k_max for one
    sampling repeat.  Returns the curves and the mean sample size."""
    N = dataset.catalog_size
    samples = _simulate(dataset, cfg.sampler, repeat_seed(cfg.seed, repeat))
    ks = np.arange(1, cfg.k_max + 1)
    em_cfg = EmConfig(cfg.em_max_iters, cfg.em_tol)
    cache = {}

    def fitted():
        if "em" not in cache:
            cache["em"] = em_fit(samples, N, em_cfg).pmf
        return cache["em"]

    n = samples.uniform_size
    p_tilde = empirical_sampled_pmf(samples, n).probs if n is not None else None
    curves = {}
    for spec in cfg.estimator_specs():
        if spec.kind in ("bv", "mn"):
            solver = AdjustedMetricSolver(
                _prior(spec.prior, N, fitted), n, spec.kind, user_count=len(samples),
                gamma=cfg.gamma, exact_mode=cfg.sampler.exact_mode,
            )
        for fam in cfg.metrics:
            if spec.kind == "naive":
                curve = np.array([naive_sampled_metric(samples, MetricSpec(fam, int(k))) for k in ks])
            elif spec.kind in ("mle", "adaptive_mle"):
                curve = np.array([plugin_metric_from_pmf(fitted(), MetricSpec(fam, int(k))) for k in ks])
            else:
                curve = np.array(
                    [solver.solve_metric(MetricSpec(fam, int(k))).values @ p_tilde for k in ks]
                )
            curves[(spec.name, fam)] = curve
    return curves, float(samples.sample_sizes.mean())


def _run_one(args):
    cfg, dataset, repeat = args
    return run_repeat(cfg, dataset, repeat)


@dataclass
class ErrorReport:
    config: dict
    truth: dict[str, np.ndarray]
    estimates: dict[tuple[str, str], np.ndarray]  # (estimator, metric) -> repeats x K
    mean_sample_sizes: list[float]

    @property
    def k_max(self) -> int:
        return len(next(iter(self.truth.values())))

    def relative_errors(self, estimator: str, metric: str) -> tuple[np.ndarray, np.ndarray, int]:
        """Per-repeat average relative error and the repeats x K error matrix."""
        truth = self.truth[metric]
        rows = [relative_error_curve(truth, est) for est in self.estimates[(estimator, metric)]]
        avg = np.array([r[0] for r in rows])
        per_k = np.vstack([r[1] for r in rows])
        return avg, per_k, rows[0][2]

    def summary(self) -> dict:
        stats = []
        for (est, fam) in self.estimates:
            avg, _, skipped = self.relative_errors(est, fam)
            stats.append({
                "estimator": est,
                "metric": fam,
                "rel_err_mean": float(avg.mean()),
                "rel_err_std": float(avg.std()),
                "skipped_k": skipped,
            })
        sizes = np.array(self.mean_sample_sizes)
        return {
            "config": self.config,
            "repeats": len(sizes),
            "k_max": self.k_max,
            "mean_sample_size": float(sizes.mean()),
            "results": stats,
        }

    def report_rows(self):
        for (est, fam), mat in self.estimates.items():
            truth = self.truth[fam]
            _, per_k, _ = self.relative_errors(est, fam)
            means = mat.mean(axis=0)
            stds = mat.std(axis=0)
            # skipped K (true metric 0) are NaN in every repeat and stay NaN
            errs = per_k.mean(axis=0)
            for k in range(self.k_max):
                yield (est, fam, k + 1, truth[k], means[k], stds[k], errs[k])

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "metric", "K", "true", "estimate_mean", "estimate_std", "rel_err_mean"])
        for est, fam, k, *vals in self.report_rows():
            w.writerow([est, fam, k, *(repr(float(v)) for v in vals)])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.report_csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, dataset: RankDataset | None = None, workers: int = 1) -> ErrorReport:
    """Run ``cfg.repeats`` sampling repeats and collect estimates against
    the exact metrics of the ground-truth dataset.

    Repeat r uses a seed derived from (cfg.seed, r), so output does not
    depend on ``workers``.
    """
    if dataset is None:
        dataset = load_ranks(cfg.rank_source, cfg.catalog_size, cfg.num_users, cfg.seed)
    if dataset.catalog_size != cfg.catalog_size:
        raise ValueError("dataset catalog size differs from config")
    truth = {
        fam: np.array([global_metric(dataset, MetricSpec(fam, k)) for k in range(1, cfg.k_max + 1)])
        for fam in cfg.metrics
    }
    jobs = [(cfg, dataset, r) for r in range(cfg.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    keys = list(results[0][0])
    estimates = {key: np.vstack([res[0][key] for res in results]) for key in keys}
    resolved = cfg.to_dict()
    resolved["num_users"] = dataset.num_users
    return ErrorReport(resolved, truth, estimates, [res[1] for res in results])


def run_comparison(models: dict[str, RankDataset], cfg: ExperimentConfig,
                   workers: int = 1) -> tuple[dict[str, ErrorReport], list[dict]]:
    """Run the same experiment on several models' ranks and count, for each
    estimator, metric and K, how often the estimated winner is the true one."""
    if len(models) < 2:
        raise ValueError("winner prediction needs at least two models")
    reports = {}
    for idx, (name, dataset) in enumerate(models.items()):
        model_seed = int(np.random.SeedSequence([cfg.seed, idx]).generate_state(1)[0])
        model_cfg = ExperimentConfig(**{**_shallow(cfg), "seed": model_seed,
                                        "num_users": dataset.num_users})
        reports[name] = run_experiment(model_cfg, dataset, workers)
    names = list(models)
    first = reports[names[0]]
    winners = []
    for (est, fam) in first.estimates:
        for k in range(first.k_max):
            truth = [reports[m].truth[fam][k] for m in names]
            est_mat = np.column_stack([reports[m].estimates[(est, fam)][:, k] for m in names])
            winners.append({
                "estimator": est, "metric": fam, "K": k + 1,
                "matches": winner_accuracy(truth, est_mat), "repeats": cfg.repeats,
            })
    return reports, winners


def _shallow(cfg):
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def write_winners(path, winners: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["estimator", "metric", "K", "matches", "repeats"], lineterminator="\n")
        w.writeheader()
        w.writerows(winners)
