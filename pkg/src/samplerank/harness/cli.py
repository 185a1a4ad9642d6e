"""Command line entry point: ``samplerank <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from ..core import (
    FAMILIES,
    MetricSpec,
    RankPmf,
    apply_adjusted_metric,
    empirical_sampled_pmf,
    global_metric,
    naive_sampled_metric,
    plugin_metric_from_pmf,
)
from ..em import EmConfig, em_fit
from ..estimators import DEFAULT_GAMMA, AdjustedMetricSolver
from ..sampling import DEFAULT_N0, DEFAULT_NMAX, AdaptiveConfig, efficiency_analysis, simulate_adaptive, simulate_fixed
from .experiment import (
    DEFAULT_ESTIMATORS,
    EstimatorSpec,
    ExperimentConfig,
    SamplerConfig,
    run_comparison,
    run_experiment,
    write_winners,
)
from .io import RankSource, ingest_ranks, read_pmf, read_samples, synth_ranks, write_ranks, write_samples
from .verify import run_checks


def _metrics(text):
    fams = tuple(f.strip().lower() for f in text.split(",") if f.strip())
    for fam in fams:
        if fam not in FAMILIES:
            raise argparse.ArgumentTypeError(f"unknown metric {fam!r}")
    return fams


def _estimators(text):
    return tuple(t.strip().lower() for t in text.split(",") if t.strip())


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    source = RankSource("pmf", path=args.pmf) if args.pmf else RankSource("zipf", args.zipf)
    dataset = synth_ranks(args.N, args.M, source, args.seed)
    out = _out_dir(args.out) / "ranks.csv"
    write_ranks(out, dataset)
    print(f"wrote {dataset.num_users} ranks to {out}")


def cmd_sample(args):
    dataset = ingest_ranks(args.ranks, args.N)
    if args.mode == "fixed":
        samples = simulate_fixed(dataset, args.n, args.seed)
    else:
        samples = simulate_adaptive(dataset, AdaptiveConfig(args.n0, args.nmax), args.seed)
    out = _out_dir(args.out) / "samples.csv"
    write_samples(out, samples)
    print(f"wrote {len(samples)} samples to {out} (mean size {samples.sample_sizes.mean():.2f})")


def cmd_estimate(args):
    samples = read_samples(args.samples)
    fitted = []

    def _fit(samples, N):
        if not fitted:
            fitted.append(em_fit(samples, N, EmConfig()).pmf)
        return fitted[0]

    rows = []
    for token in args.estimators:
        spec_e = EstimatorSpec.parse(token, args.prior)
        if spec_e.kind in ("bv", "mn"):
            n = samples.uniform_size
            if n is None:
                raise ValueError(f"{spec_e.name} needs equal sample sizes; use mle or adaptive_mle")
            if spec_e.prior == "uniform":
                prior = RankPmf.uniform(args.N)
            elif spec_e.prior == "mle":
                prior = _fit(samples, args.N)
            else:
                prior = read_pmf(spec_e.prior.split(":", 1)[1], args.N)
            solver = AdjustedMetricSolver(prior, n, spec_e.kind, user_count=len(samples), gamma=args.gamma)
            p_tilde = empirical_sampled_pmf(samples, n)
        for fam in args.metric:
            for k in range(1, args.k_max + 1):
                spec = MetricSpec(fam, k)
                if spec_e.kind == "naive":
                    value = naive_sampled_metric(samples, spec)
                elif spec_e.kind in ("mle", "adaptive_mle"):
                    value = plugin_metric_from_pmf(_fit(samples, args.N), spec)
                else:
                    value = apply_adjusted_metric(solver.solve_metric(spec), p_tilde)
                rows.append((spec_e.name, fam, k, value))
    out = _out_dir(args.out) / "estimates.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "metric", "K", "estimate"])
        w.writerows((e, f, k, repr(float(v))) for e, f, k, v in rows)
    print(f"wrote {len(rows)} estimates to {out}")


def cmd_evaluate(args):
    dataset = ingest_ranks(args.ranks, args.N)
    out = _out_dir(args.out) / "truth.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "K", "true"])
        for fam in args.metric:
            for k in range(1, args.k_max + 1):
                w.writerow([fam, k, repr(global_metric(dataset, MetricSpec(fam, k)))])
    print(f"wrote exact metrics to {out}")


def cmd_efficiency(args):
    samples = read_samples(args.samples)
    report = efficiency_analysis(samples, AdaptiveConfig(args.n0, args.nmax), len(samples))
    print(f"{'size':>8} {'users':>8} {'cost':>12}")
    for size, m, cost in zip(report.sizes, report.counts, report.costs):
        print(f"{size:>8} {m:>8} {'-' if cost is None else f'{cost:.2f}':>12}")
    if args.out:
        out = _out_dir(args.out) / "efficiency.csv"
        with out.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size", "users", "cost"])
            for size, m, cost in zip(report.sizes, report.counts, report.costs):
                w.writerow([size, m, "" if cost is None else repr(cost)])


def cmd_compare(args):
    sampler = SamplerConfig(args.sampler, n=args.n, n0=args.n0, nmax=args.nmax)
    common = dict(
        catalog_size=args.N, sampler=sampler, estimators=args.estimators, metrics=args.metric,
        k_max=args.k_max, repeats=args.repeats, seed=args.seed, gamma=args.gamma, prior=args.prior,
    )
    out = _out_dir(args.out)
    if not args.ranks:
        cfg = ExperimentConfig(num_users=args.M, rank_source=RankSource("zipf", args.zipf), **common)
        report = run_experiment(cfg, workers=args.workers)
        report.write(out)
        _print_summary(report.summary())
        return
    models = {Path(p).stem: ingest_ranks(p, args.N) for p in args.ranks}
    if len(models) == 1:
        (name, dataset), = models.items()
        cfg = ExperimentConfig(num_users=dataset.num_users, rank_source=RankSource("file", path=args.ranks[0]),
                               **common)
        report = run_experiment(cfg, dataset, workers=args.workers)
        report.write(out)
        _print_summary(report.summary())
        return
    cfg = ExperimentConfig(num_users=1, **common)
    reports, winners = run_comparison(models, cfg, workers=args.workers)
    for name, report in reports.items():
        report.write(out / name)
        print(f"== {name}")
        _print_summary(report.summary())
    write_winners(out / "winners.csv", winners)
    print(f"wrote winner counts to {out / 'winners.csv'}")


def _print_summary(summary):
    print(f"mean sample size {summary['mean_sample_size']:.2f} over {summary['repeats']} repeats")
    for row in summary["results"]:
        print(f"  {row['estimator']:>14} {row['metric']:>7}  rel err {row['rel_err_mean']:.4f} "
              f"+- {row['rel_err_std']:.4f}  (skipped K: {row['skipped_k']})")


def cmd_verify(args):
    failed = 0
    for check in run_checks():
        status = "PASS" if check.passed else "FAIL"
        failed += not check.passed
        print(f"[{status}] {check.name}: {check.detail}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="samplerank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, metric=True):
        p.add_argument("--N", type=int, required=True, help="catalog size")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")
        if metric:
            p.add_argument("--metric", type=_metrics, default=("recall",), help="comma list of recall,ndcg,ap")
            p.add_argument("--k-max", type=int, default=50)

    p = sub.add_parser("synth", help="synthesize ground-truth ranks")
    common(p, metric=False)
    p.add_argument("--M", type=int, required=True, help="number of test users")
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--pmf", help="rank pmf CSV to draw from instead of Zipf")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="simulate item sampling from a ranks file")
    p.add_argument("mode", choices=("fixed", "adaptive"))
    common(p, metric=False)
    p.add_argument("--ranks", required=True)
    p.add_argument("--n", type=int, default=DEFAULT_N0)
    p.add_argument("--n0", type=int, default=DEFAULT_N0)
    p.add_argument("--nmax", type=int, default=DEFAULT_NMAX)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="estimate global metrics from a samples file")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--estimators", type=_estimators, default=("naive", "mle"))
    p.add_argument("--prior", default="uniform", help="uniform, mle or file:PATH")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="exact global metrics of a ranks file")
    common(p)
    p.add_argument("--ranks", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("efficiency", help="sampling cost per doubling level")
    p.add_argument("--samples", required=True)
    p.add_argument("--n0", type=int, default=DEFAULT_N0)
    p.add_argument("--nmax", type=int, default=DEFAULT_NMAX)
    p.add_argument("--out")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("compare", help="repeated estimator benchmark against exact truth")
    common(p)
    p.add_argument("--ranks", nargs="*", help="one ranks file per model; omit to synthesize")
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--sampler", choices=("fixed", "adaptive"), default="fixed")
    p.add_argument("--n", type=int, default=DEFAULT_N0)
    p.add_argument("--n0", type=int, default=DEFAULT_N0)
    p.add_argument("--nmax", type=int, default=DEFAULT_NMAX)
    p.add_argument("--estimators", type=_estimators, default=DEFAULT_ESTIMATORS)
    p.add_argument("--prior", default="uniform", help="prior for bare bv/mn: uniform, mle or file:PATH")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run the oracle cross-checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
