"""Grounding predicted phrases back to token spans.

Completions carry surface phrases, not offsets, so each prediction is
matched against token windows of the query sentence: exact text first, then
case-insensitive, then a normalized form (casefolded, edge punctuation
stripped, whitespace collapsed). Repeated phrases take the leftmost window
not already consumed by an earlier prediction.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import EntitySpan, Token

MATCH_EXACT = "exact"
MATCH_CASE_INSENSITIVE = "case_insensitive"
MATCH_NORMALIZED = "normalized"


@dataclass(frozen=True)
class GroundedPrediction:
    span: EntitySpan
    phrase: str
    match_mode: str


@dataclass(frozen=True)
class GroundingReport:
    grounded: tuple[GroundedPrediction, ...]
    unmatched: tuple[tuple[str, str], ...]


def _normalize(s: str) -> str:
    collapsed = " ".join(s.split())
    return collapsed.strip(string.punctuation + " ").casefold()


def ground(predictions: Sequence[tuple[str, str]], sentence: Sequence[Token],
           ) -> GroundingReport:
    """Assign each (phrase, type) prediction a token span, leftmost-unused.

    Window consumption is tracked per (start, end) regardless of type, so
    two predictions can never claim the same surface occurrence. Predictions
    with no matching window land in ``unmatched``.
    """
    if not sentence:
        raise ValueError("sentence must be non-empty")
    words = [t.text for t in sentence]
    n = len(words)
    consumed: set[tuple[int, int]] = set()
    grounded: list[GroundedPrediction] = []
    unmatched: list[tuple[str, str]] = []

    def fixed_width(phrase: str, fold: bool) -> tuple[int, int] | None:
        width = len(phrase.split())
        if width == 0 or width > n:
            return None
        target = phrase.casefold() if fold else phrase
        for i in range(n - width + 1):
            if (i, i + width) in consumed:
                continue
            window = " ".join(words[i:i + width])
            if (window.casefold() if fold else window) == target:
                return (i, i + width)
        return None

    def normalized(phrase: str) -> tuple[int, int] | None:
        target = _normalize(phrase)
        if not target:
            return None
        for i in range(n):
            for j in range(i + 1, n + 1):
                if (i, j) in consumed:
                    continue
                if _normalize(" ".join(words[i:j])) == target:
                    return (i, j)
        return None

    for phrase, etype in predictions:
        window = fixed_width(phrase, fold=False)
        mode = MATCH_EXACT
        if window is None:
            window = fixed_width(phrase, fold=True)
            mode = MATCH_CASE_INSENSITIVE
        if window is None:
            window = normalized(phrase)
            mode = MATCH_NORMALIZED
        if window is None:
            unmatched.append((phrase, etype))
        else:
            consumed.add(window)
            grounded.append(GroundedPrediction(
                span=EntitySpan(window[0], window[1], etype),
                phrase=phrase, match_mode=mode))
    return GroundingReport(tuple(grounded), tuple(unmatched))


def spans_to_tags(tokens: Sequence, spans: Iterable[EntitySpan]) -> list[str]:
    """Emit IOB2 tags for a span set, one tag per token.

    Overlapping inputs are resolved by keeping the longer span, ties going
    to the leftmost.
    """
    n = len(tokens)
    chosen: list[EntitySpan] = []
    for span in sorted(spans, key=lambda s: (-(s.end - s.start), s.start, s.etype)):
        if span.end > n:
            raise ValueError(f"span {span} exceeds sentence length {n}")
        if all(span.end <= c.start or span.start >= c.end for c in chosen):
            chosen.append(span)
    tags = ["O"] * n
    for span in chosen:
        tags[span.start] = f"B-{span.etype}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.etype}"
    return tags
