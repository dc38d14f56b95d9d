"""Strict span-level micro-F1, multi-run aggregation, and disagreement export.

A prediction is a true positive only on an exact (start, end, type) match,
each gold span creditable once; counts are pooled over all examples before
precision/recall/F1 are taken.
"""
from __future__ import annotations

import random
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


class LengthMismatch(ValueError):
    """Prediction and gold lists are not index-aligned."""


class EmptyInput(ValueError):
    """An aggregate was requested over zero runs."""


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_type: dict

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int,
                    per_type: Mapping[str, tuple[int, int, int]] | None = None,
                    ) -> "EvalReport":
        p, r, f1 = _prf(tp, fp, fn)
        return cls(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1,
                   per_type=dict(per_type or {}))

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "per_type": {t: list(c) for t, c in sorted(self.per_type.items())},
        }


def _span_of(pred):
    return getattr(pred, "span", pred)


def micro_f1(predictions: Sequence[Sequence], golds: Sequence[Iterable]) -> EvalReport:
    """Score grounded predictions against gold spans, pooled over examples.

    ``predictions[i]`` holds GroundedPrediction or EntitySpan objects for
    example i, ``golds[i]`` the gold EntitySpan set. Matching is greedy in
    prediction order on exact (start, end, type) triples.
    """
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} prediction lists vs {len(golds)} gold lists")
    tp = fp = fn = 0
    per_type: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0])
    for preds, gold in zip(predictions, golds):
        gold_keys = {(s.start, s.end, s.etype) for s in gold}
        matched: set[tuple[int, int, str]] = set()
        for pred in preds:
            span = _span_of(pred)
            key = (span.start, span.end, span.etype)
            if key in gold_keys and key not in matched:
                matched.add(key)
                tp += 1
                per_type[span.etype][0] += 1
            else:
                fp += 1
                per_type[span.etype][1] += 1
        for key in gold_keys - matched:
            fn += 1
            per_type[key[2]][2] += 1
    return EvalReport.from_counts(tp, fp, fn, {t: tuple(c) for t, c in per_type.items()})


@dataclass(frozen=True)
class AggregateReport:
    run_f1s: tuple[float, ...]
    mean: float
    std: float
    n_runs: int

    def formatted(self) -> str:
        """Two-decimal "MM.MM ± SS.SS" presentation."""
        return f"{self.mean:.2f} ± {self.std:.2f}"


def aggregate(run_f1s: Sequence[float]) -> AggregateReport:
    """Mean and sample standard deviation (n-1 divisor) over run scores."""
    if not run_f1s:
        raise EmptyInput("no run scores to aggregate")
    values = tuple(float(v) for v in run_f1s)
    mean = sum(values) / len(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return AggregateReport(run_f1s=values, mean=mean, std=std, n_runs=len(values))


def _normalize_phrase(phrase: str) -> str:
    return " ".join(phrase.split())


@dataclass(frozen=True)
class Disagreement:
    """An example whose type-agnostic predicted and gold phrase sets differ."""

    sentence_id: str
    predicted: frozenset[str]
    gold: frozenset[str]


def entity_set_diff(pred_phrases: Sequence[Iterable[str]],
                    gold_phrases: Sequence[Iterable[str]],
                    ids: Sequence[str]) -> list[Disagreement]:
    """Collect examples where the phrase sets differ, ignoring types.

    Phrases are whitespace-normalized before comparison; output is ordered
    by sentence id.
    """
    if not len(pred_phrases) == len(gold_phrases) == len(ids):
        raise LengthMismatch("pred, gold and id lists must be aligned")
    out = []
    for preds, gold, sid in zip(pred_phrases, gold_phrases, ids):
        pset = frozenset(_normalize_phrase(p) for p in preds)
        gset = frozenset(_normalize_phrase(g) for g in gold)
        if pset != gset:
            out.append(Disagreement(sentence_id=sid, predicted=pset, gold=gset))
    out.sort(key=lambda d: d.sentence_id)
    return out


def sample_disagreements(diffs: Sequence[Disagreement], n: int, seed: int,
                         ) -> list[Disagreement]:
    """Seeded draw of n disagreements, returned in sentence-id order."""
    if n >= len(diffs):
        return list(diffs)
    rng = random.Random(f"{seed}:diff")
    picked = list(diffs)
    rng.shuffle(picked)
    return sorted(picked[:n], key=lambda d: d.sentence_id)


def write_disagreements(diffs: Sequence[Disagreement], path,
                        sentences: Mapping[str, str] | None = None) -> None:
    """Write a human-readable review file: sentence plus both phrase lists."""
    sentences = sentences or {}
    lines = []
    for d in diffs:
        lines.append(f"== {d.sentence_id}")
        if d.sentence_id in sentences:
            lines.append(f"Sentence: {sentences[d.sentence_id]}")
        lines.append("Predicted:")
        lines += [f"  - {p}" for p in sorted(d.predicted)] or ["  (none)"]
        lines.append("Gold:")
        lines += [f"  - {g}" for g in sorted(d.gold)] or ["  (none)"]
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
