"""Continuation corpora and the P_Val / better-than / F1 metrics."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import langs, nn
from .errors import BadDistribution
from .langs import LanguageSpec

NORM_TOL = 1e-6


@dataclass(frozen=True)
class ContinuationRecord:
    lang: str
    prefix: tuple[int, ...]
    valid: frozenset[int]
    length: int
    record_id: int = 0
    string_id: int | None = None

    def to_json(self) -> dict:
        d = {"lang": self.lang, "prefix": list(self.prefix), "valid": sorted(self.valid), "length": self.length}
        d["record_id"] = self.record_id
        if self.string_id is not None:
            d["string_id"] = self.string_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ContinuationRecord":
        return cls(
            lang=d["lang"],
            prefix=tuple(d["prefix"]),
            valid=frozenset(d["valid"]),
            length=int(d["length"]),
            record_id=int(d.get("record_id", 0)),
            string_id=d.get("string_id"),
        )


def records_for_string(
    lang: LanguageSpec, symbols: Sequence[int], start_id: int = 0, string_id: int | None = None
) -> list[ContinuationRecord]:
    """One record per non-empty prefix, the full string included."""
    out = []
    for k in range(1, len(symbols) + 1):
        prefix = tuple(symbols[:k])
        out.append(
            ContinuationRecord(
                lang=lang.name,
                prefix=prefix,
                valid=langs.valid_continuations(lang, prefix),
                length=langs.prefix_length(lang, prefix),
                record_id=start_id + k - 1,
                string_id=string_id,
            )
        )
    return out


def build_eval_corpus(
    lang: LanguageSpec,
    rng: np.random.Generator,
    lengths: tuple[int, int] = (1, 40),
    per_length: int = 10,
    dedup: bool = False,
    start_string_id: int = 0,
    start_record_id: int = 0,
) -> list[ContinuationRecord]:
    lo, hi = lengths
    strings = []
    for length in range(lo, hi + 1):
        for _ in range(per_length):
            strings.append(langs.sample_uniform(lang, length, rng).symbols)
    if dedup:
        strings = list(dict.fromkeys(strings))
    records = []
    rid = start_record_id
    for i, s in enumerate(strings):
        recs = records_for_string(lang, s, rid, start_string_id + i)
        records.extend(recs)
        rid += len(recs)
    return records


def write_corpus(path, records: Iterable[ContinuationRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_corpus(path) -> list[ContinuationRecord]:
    with open(path) as fh:
        return [ContinuationRecord.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Metrics


def _check(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1 or not np.all(np.isfinite(dist)) or dist.min() < -NORM_TOL:
        raise BadDistribution("distribution must be a finite non-negative vector")
    if abs(dist.sum() - 1.0) > NORM_TOL:
        raise BadDistribution(f"distribution sums to {dist.sum()!r}, not 1")
    return dist


def p_val(dist, valid: Iterable[int]) -> float:
    dist = _check(dist)
    return float(sum(dist[x] for x in sorted(valid)))


def better_than(dist, valid: Iterable[int]) -> float:
    """Fraction of valid tokens that beat the total invalid mass (strictly)."""
    dist = _check(dist)
    valid = sorted(set(valid))
    if not valid:
        raise BadDistribution("valid set is empty")
    invalid_mass = float(sum(dist[c] for c in range(len(dist)) if c not in valid))
    return sum(1 for x in valid if dist[x] > invalid_mass) / len(valid)


def f1(p: float, b: float) -> float:
    if p + b == 0:
        return 0.0
    return 2.0 * p * b / (p + b)


@dataclass(frozen=True)
class MetricTriple:
    p_val: float
    bt: float
    f1: float


def score(dist, valid) -> MetricTriple:
    p = p_val(dist, valid)
    b = better_than(dist, valid)
    return MetricTriple(p, b, f1(p, b))


# ---------------------------------------------------------------------------
# Aggregate evaluation


@dataclass(frozen=True)
class RecordScore:
    lang: str
    record_id: int
    length: int
    p_val: float
    bt: float
    f1: float


@dataclass
class EvalReport:
    records: list[RecordScore]
    max_length: int
    mean_f1: float = float("nan")
    mean_p_val: float = float("nan")
    mean_bt: float = float("nan")
    macro_f1: float = float("nan")
    per_length: dict[int, dict] = field(default_factory=dict)
    per_language: dict[str, dict] = field(default_factory=dict)

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lang", "record_id", "length", "p_val", "bt", "f1"])
            for r in self.records:
                w.writerow([r.lang, r.record_id, r.length, repr(r.p_val), repr(r.bt), repr(r.f1)])

    def summary(self) -> dict:
        return {
            "max_length": self.max_length,
            "mean_f1": self.mean_f1,
            "mean_p_val": self.mean_p_val,
            "mean_bt": self.mean_bt,
            "macro_f1": self.macro_f1,
            "per_language": self.per_language,
            "per_length": {str(k): v for k, v in self.per_length.items()},
        }


def _means(rows: Sequence[RecordScore]) -> dict:
    if not rows:
        return {"f1": float("nan"), "p_val": float("nan"), "bt": float("nan"), "count": 0}
    return {
        "f1": float(np.mean([r.f1 for r in rows])),
        "p_val": float(np.mean([r.p_val for r in rows])),
        "bt": float(np.mean([r.bt for r in rows])),
        "count": len(rows),
    }


def aggregate(scores: list[RecordScore], max_length: int = 10) -> EvalReport:
    short = [r for r in scores if r.length <= max_length]
    overall = _means(short)
    by_length = defaultdict(list)
    by_lang = defaultdict(list)
    for r in scores:
        by_length[r.length].append(r)
        if r.length <= max_length:
            by_lang[r.lang].append(r)
    per_language = {lang: _means(rows) for lang, rows in sorted(by_lang.items())}
    macro = float(np.mean([v["f1"] for v in per_language.values()])) if per_language else float("nan")
    return EvalReport(
        records=scores,
        max_length=max_length,
        mean_f1=overall["f1"],
        mean_p_val=overall["p_val"],
        mean_bt=overall["bt"],
        macro_f1=macro,
        per_length={k: _means(v) for k, v in sorted(by_length.items())},
        per_language=per_language,
    )


def score_records(records: Sequence[ContinuationRecord], dists: Sequence[np.ndarray]) -> list[RecordScore]:
    out = []
    for rec, dist in zip(records, dists):
        m = score(dist, rec.valid)
        out.append(RecordScore(rec.lang, rec.record_id, rec.length, m.p_val, m.bt, m.f1))
    return out


def evaluate_distributions(
    records: Sequence[ContinuationRecord],
    dist_fn: Callable[[ContinuationRecord], np.ndarray],
    max_length: int = 10,
) -> EvalReport:
    """Score an arbitrary prefix -> distribution function (used for oracle models)."""
    return aggregate(score_records(records, [dist_fn(r) for r in records]), max_length)


def _group_strings(records: Sequence[ContinuationRecord]) -> list[tuple[tuple[int, ...], list[int]]]:
    """Map each evaluated string to the indices of its records."""
    groups: dict = {}
    for i, rec in enumerate(records):
        key = (rec.lang, rec.string_id) if rec.string_id is not None else ("__record__", i)
        groups.setdefault(key, []).append(i)
    out = []
    for idxs in groups.values():
        longest = max((records[i].prefix for i in idxs), key=len)
        for i in idxs:
            if records[i].prefix != longest[: len(records[i].prefix)]:
                raise ValueError(f"record {records[i].record_id} is not a prefix of its string")
        out.append((longest, idxs))
    return out


def model_distributions(
    params: nn.ModelParams, records: Sequence[ContinuationRecord], batch_size: int = 64
) -> list[np.ndarray]:
    """Teacher-forced next-token distributions at each record's prefix."""
    groups = _group_strings(records)
    # fixed batching rule: sort by (length, first record index)
    groups.sort(key=lambda g: (len(g[0]), g[1][0]))
    dists: list[np.ndarray | None] = [None] * len(records)
    for start in range(0, len(groups), batch_size):
        chunk = groups[start : start + batch_size]
        batch = nn.pad_batch([g[0] for g in chunk])
        probs, _ = nn.forward(params, batch)
        for row, (_, idxs) in enumerate(chunk):
            for i in idxs:
                dists[i] = probs[row, len(records[i].prefix)].astype(np.float64)
    missing = [records[i].record_id for i, d in enumerate(dists) if d is None]
    if missing:
        raise ValueError(f"no model position for records {missing[:5]}")
    return dists


def evaluate_model(
    params: nn.ModelParams, corpus: Sequence[ContinuationRecord], max_length: int = 10, batch_size: int = 64
) -> EvalReport:
    dists = model_distributions(params, corpus, batch_size)
    return aggregate(score_records(corpus, dists), max_length)
