"""CSV readers and writers for rank, sample and pmf files, plus synthetic
ground-truth generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import RankDataset, RankPmf, SampleSet

RANKS_HEADER = ["user_id", "global_rank"]
SAMPLES_HEADER = ["user_id", "sampled_rank", "sample_size"]
PMF_HEADER = ["rank", "prob"]


class FormatError(ValueError):
    """Malformed input file; the message carries the path and line number."""


def _rows(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise FormatError(f"{path}:1: expected header {','.join(header)!r}, got {first!r}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row


def _int(path, lineno, value, name):
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: {name} {value!r} is not an integer") from None


def ingest_ranks(path, catalog_size: int) -> RankDataset:
    users, ranks = [], []
    seen = set()
    for lineno, (uid, rank) in _rows(path, RANKS_HEADER):
        uid = uid.strip()
        if uid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate user_id {uid!r}")
        seen.add(uid)
        rank = _int(path, lineno, rank, "global_rank")
        if not 1 <= rank <= catalog_size:
            raise FormatError(f"{path}:{lineno}: global_rank {rank} outside [1, {catalog_size}]")
        users.append(uid)
        ranks.append(rank)
    if not ranks:
        raise FormatError(f"{path}: no rows")
    return RankDataset(catalog_size, np.array(ranks, dtype=np.int64))


def write_ranks(path, dataset: RankDataset) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RANKS_HEADER)
        w.writerows((u, int(r)) for u, r in enumerate(dataset.ranks))


def read_samples(path) -> SampleSet:
    users, ranks, sizes = [], [], []
    seen = set()
    for lineno, (uid, r, n) in _rows(path, SAMPLES_HEADER):
        uid = _int(path, lineno, uid, "user_id")
        if uid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate user_id {uid}")
        seen.add(uid)
        r = _int(path, lineno, r, "sampled_rank")
        n = _int(path, lineno, n, "sample_size")
        if n < 2 or not 1 <= r <= n:
            raise FormatError(f"{path}:{lineno}: need 1 <= sampled_rank <= sample_size and sample_size >= 2")
        users.append(uid)
        ranks.append(r)
        sizes.append(n)
    if not ranks:
        raise FormatError(f"{path}: no rows")
    return SampleSet(np.array(ranks), np.array(sizes), np.array(users))


def write_samples(path, samples: SampleSet) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLES_HEADER)
        w.writerows(
            (int(u), int(r), int(n))
            for u, r, n in zip(samples.user_indices, samples.sampled_ranks, samples.sample_sizes)
        )


def read_pmf(path, catalog_size: int | None = None) -> RankPmf:
    entries = {}
    for lineno, (rank, prob) in _rows(path, PMF_HEADER):
        rank = _int(path, lineno, rank, "rank")
        try:
            p = float(prob)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: prob {prob!r} is not a number") from None
        if rank < 1 or (catalog_size is not None and rank > catalog_size):
            raise FormatError(f"{path}:{lineno}: rank {rank} out of range")
        if rank in entries:
            raise FormatError(f"{path}:{lineno}: duplicate rank {rank}")
        if p < 0:
            raise FormatError(f"{path}:{lineno}: negative probability")
        entries[rank] = p
    size = catalog_size or max(entries, default=0)
    probs = np.zeros(size)
    for rank, p in entries.items():
        probs[rank - 1] = p
    try:
        return RankPmf(probs)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_pmf(path, pmf: RankPmf) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PMF_HEADER)
        w.writerows((R, repr(float(p))) for R, p in enumerate(pmf.probs, start=1))


@dataclass(frozen=True)
class RankSource:
    """Where ground-truth ranks come from: "zipf" (exponent), "pmf" (path to
    a rank pmf file) or "file" (path to a ranks file)."""

    kind: str = "zipf"
    exponent: float = 1.2
    path: str | None = None

    @classmethod
    def parse(cls, text: str) -> "RankSource":
        kind, _, arg = text.partition(":")
        if kind == "zipf":
            return cls("zipf", float(arg) if arg else 1.2)
        if kind in ("pmf", "file") and arg:
            return cls(kind, path=arg)
        raise ValueError(f"bad rank source {text!r}; use zipf:S, pmf:PATH or file:PATH")


def zipf_pmf(catalog_size: int, exponent: float) -> RankPmf:
    if exponent <= 0:
        raise ValueError(f"Zipf exponent must be > 0, got {exponent}")
    weights = np.arange(1, catalog_size + 1, dtype=np.float64) ** -exponent
    return RankPmf(weights / weights.sum())


def synth_ranks(catalog_size: int, num_users: int, source: RankSource | RankPmf, seed: int) -> RankDataset:
    """Draw i.i.d. global ranks from a Zipf law or a given pmf."""
    if isinstance(source, RankPmf):
        pmf = source
    elif source.kind == "zipf":
        pmf = zipf_pmf(catalog_size, source.exponent)
    elif source.kind == "pmf":
        pmf = read_pmf(source.path, catalog_size)
    else:
        raise ValueError("ranks-file sources are ingested, not synthesized")
    if pmf.catalog_size != catalog_size:
        raise ValueError("pmf length does not match catalog size")
    rng = np.random.default_rng(seed)
    ranks = rng.choice(catalog_size, size=num_users, p=pmf.probs) + 1
    return RankDataset(catalog_size, ranks)


def load_ranks(source: RankSource, catalog_size: int, num_users: int, seed: int) -> RankDataset:
    if source.kind == "file":
        return ingest_ranks(source.path, catalog_size)
    return synth_ranks(catalog_size, num_users, source, seed)
