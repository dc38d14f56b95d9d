"""Parsing of raw completions into candidate-entity records.

Models drift from the requested line format, so each line runs through a
cascade: the strict grammar first, then progressively looser patterns
(missing numbering, markdown bullets, yes/no decisions, type before the
explanation, a single separator). Non-strict successes are counted as
repaired, unmatched non-blank lines as skipped; the counters make format
drift observable in run reports.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence


class EmptyParse(ValueError):
    """A non-blank completion produced zero candidates.

    Carries the counting ParseReport as ``.report`` so callers can still
    persist the skip counters.
    """

    def __init__(self, message: str, report: "ParseReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CandidateEntity:
    phrase: str
    is_entity: bool
    explanation: str = ""
    claimed_type: str | None = None
    line_no: int = 0


@dataclass(frozen=True)
class ParseReport:
    candidates: tuple[CandidateEntity, ...]
    skipped_lines: int = 0
    repaired_lines: int = 0


# Strict grammar: "<n>. <phrase> | True/False | <explanation, optional> (<TYPE>)"
_STRICT = re.compile(
    r"^\s*\d+\.\s+(?P<phrase>[^|]+?)\s*\|\s*(?P<dec>True|False)\s*\|\s*"
    r"(?P<expl>[^|]*?)\s*\((?P<type>[^()]*)\)\s*$")

_LEAD = r"^\s*(?:\d+\s*[.):]\s*|[-*•]\s*)?"
_DEC = r"(?P<dec>true|false|yes|no)"

# Tried in order after the strict pattern; first hit wins and counts as a repair.
_RELAXED = (
    ("type_first", re.compile(
        _LEAD + r"(?P<phrase>[^|]+?)\s*\|\s*" + _DEC +
        r"\s*\|\s*\((?P<type>[^()]*)\)\s*(?P<expl>.*?)\s*$", re.IGNORECASE)),
    ("loose_line", re.compile(
        _LEAD + r"(?P<phrase>[^|]+?)\s*\|\s*" + _DEC +
        r"\s*\|\s*(?P<expl>[^|]*?)\s*(?:\((?P<type>[^()]*)\))?\s*$", re.IGNORECASE)),
    ("one_pipe_trailing", re.compile(
        _LEAD + r"(?P<phrase>[^|]+?)\s*\|\s*" + _DEC +
        r"\b[\s:,.-]*(?P<expl>[^|()]*?)\s*\((?P<type>[^()]*)\)\s*$", re.IGNORECASE)),
    ("one_pipe", re.compile(
        _LEAD + r"(?P<phrase>[^|]+?)\s*\|\s*" + _DEC +
        r"\b[\s:,.-]*(?:\((?P<type>[^()]*)\))?\s*(?P<expl>[^|()]*?)\s*$", re.IGNORECASE)),
)

_NON_TYPES = frozenset({"", "not an entity", "no entity", "none", "n/a", "na"})
_QUOTES = "\"'`"


def _clean_phrase(raw: str) -> str:
    phrase = raw.strip()
    while len(phrase) >= 2 and phrase[0] == phrase[-1] and phrase[0] in _QUOTES:
        phrase = phrase[1:-1].strip()
    return phrase


def _clean_type(raw: str | None) -> str | None:
    if raw is None:
        return None
    t = raw.strip()
    return None if t.casefold() in _NON_TYPES else t


def _match_line(line: str) -> tuple[CandidateEntity | None, bool]:
    """Parse one line; returns (candidate or None, parsed_strictly)."""
    m = _STRICT.match(line)
    strict = m is not None
    if m is None:
        for _, pat in _RELAXED:
            m = pat.match(line)
            if m:
                break
    if m is None:
        return None, False
    phrase = _clean_phrase(m.group("phrase"))
    if not phrase:
        return None, False
    return CandidateEntity(
        phrase=phrase,
        is_entity=m.group("dec").casefold() in ("true", "yes"),
        explanation=(m.group("expl") or "").strip(),
        claimed_type=_clean_type(m.group("type")),
    ), strict


def parse_completion(text: str) -> ParseReport:
    """Parse completion text line by line; total on arbitrary input.

    Duplicate phrases (case-insensitive) keep the first occurrence; later
    duplicates count as skipped. Raises EmptyParse when the text has content
    lines but none parses.
    """
    candidates: list[CandidateEntity] = []
    seen_phrases: set[str] = set()
    skipped = 0
    repaired = 0
    content_lines = 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        content_lines += 1
        cand, strict = _match_line(line)
        if cand is None:
            skipped += 1
            continue
        key = cand.phrase.casefold()
        if key in seen_phrases:
            skipped += 1
            continue
        seen_phrases.add(key)
        candidates.append(CandidateEntity(
            phrase=cand.phrase, is_entity=cand.is_entity,
            explanation=cand.explanation, claimed_type=cand.claimed_type,
            line_no=line_no))
        if not strict:
            repaired += 1
    report = ParseReport(tuple(candidates), skipped_lines=skipped, repaired_lines=repaired)
    if content_lines and not candidates:
        raise EmptyParse(f"no candidate lines in {content_lines} content lines", report)
    return report


def canonicalize_type(claimed: str | None, inventory: Sequence[str]) -> str | None:
    """Resolve a raw claimed type against the inventory.

    Exact match, then case-insensitive, then unique prefix (the claim is a
    prefix of exactly one label, so "LOC" resolves against "LOCATION").
    Returns None when no unique resolution exists.
    """
    if claimed is None:
        return None
    if claimed in inventory:
        return claimed
    folded = claimed.casefold()
    ci = [label for label in inventory if label.casefold() == folded]
    if ci:
        return ci[0]
    prefixed = [label for label in inventory if label.casefold().startswith(folded)]
    if len(prefixed) == 1:
        return prefixed[0]
    return None


def extract_predictions(report: ParseReport, inventory: Sequence[str],
                        ) -> tuple[list[tuple[str, str]], int]:
    """Keep True candidates and canonicalize their types.

    Returns (ordered (phrase, canonical type) pairs without duplicates,
    count of True candidates dropped for an unresolvable type).
    """
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    dropped = 0
    for cand in report.candidates:
        if not cand.is_entity:
            continue
        canon = canonicalize_type(cand.claimed_type, inventory)
        if canon is None:
            dropped += 1
            continue
        key = (cand.phrase, canon)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(key)
    return pairs, dropped
