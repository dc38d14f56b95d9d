"""BIO corpus ingestion and seeded sampling.

Corpora arrive as whitespace- or tab-separated BIO files (one ``token tag``
pair per line, blank line between sentences) and are normalised into
immutable LabeledExample records. Exemplar and evaluation subsets are drawn
deterministically from integer seeds so a run can be replayed bit-for-bit.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class MalformedLine(ValueError):
    """A BIO line that is not ``token<sep>tag`` with a well-formed tag."""


class UnknownType(ValueError):
    """A BIO tag whose type is outside the declared inventory."""


class InsufficientData(ValueError):
    """A sample was requested that the corpus cannot supply."""


def detokenize(tokens: Iterable) -> str:
    """Join tokens (Token objects or plain strings) with single spaces."""
    return " ".join(getattr(t, "text", t) for t in tokens)


@dataclass(frozen=True)
class Token:
    text: str
    index: int

    def __post_init__(self):
        if not self.text or any(c.isspace() for c in self.text):
            raise ValueError(f"token text must be non-empty and whitespace-free: {self.text!r}")
        if self.index < 0:
            raise ValueError(f"token index must be >= 0: {self.index}")


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Half-open token span [start, end) carrying a canonical type label."""

    start: int
    end: int
    etype: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class LabeledExample:
    """One tokenized sentence with its gold entity spans."""

    tokens: tuple[Token, ...]
    gold: tuple[EntitySpan, ...]
    source_id: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "gold", tuple(sorted(self.gold)))
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise ValueError(f"token indices must be consecutive from 0, got {tok.index} at {i}")
        seen_bounds = set()
        for span in self.gold:
            if span.end > len(self.tokens):
                raise ValueError(f"gold span {span} exceeds sentence length {len(self.tokens)}")
            if (span.start, span.end) in seen_bounds:
                raise ValueError(f"duplicate gold span bounds ({span.start}, {span.end})")
            seen_bounds.add((span.start, span.end))

    @classmethod
    def from_strings(cls, words: Sequence[str], spans: Iterable[tuple[int, int, str]],
                     source_id: str = "") -> "LabeledExample":
        tokens = tuple(Token(w, i) for i, w in enumerate(words))
        gold = tuple(EntitySpan(s, e, t) for s, e, t in spans)
        return cls(tokens, gold, source_id)

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def text(self) -> str:
        return detokenize(self.tokens)

    def phrase(self, span: EntitySpan) -> str:
        """Surface form of a span, single-space detokenized."""
        return " ".join(self.words[span.start:span.end])

    def gold_pairs(self) -> list[tuple[str, str]]:
        """Gold (phrase, type) pairs in span order."""
        return [(self.phrase(s), s.etype) for s in self.gold]


@dataclass(frozen=True)
class Corpus:
    examples: tuple[LabeledExample, ...]
    type_inventory: tuple[str, ...]
    name: str
    repairs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "type_inventory", tuple(self.type_inventory))
        if not self.type_inventory:
            raise ValueError("type inventory must be non-empty")
        if len(set(self.type_inventory)) != len(self.type_inventory):
            raise ValueError("type inventory contains duplicates")
        allowed = set(self.type_inventory)
        for ex in self.examples:
            for span in ex.gold:
                if span.etype not in allowed:
                    raise ValueError(f"gold type {span.etype!r} of {ex.source_id} not in inventory")

    def __len__(self) -> int:
        return len(self.examples)


def tags_to_spans(tags: Sequence[str]) -> tuple[list[EntitySpan], int]:
    """Merge BIO tags into maximal spans.

    A dangling I-X (no preceding B-X or I-X of the same type) still opens a
    span; the second return value counts those repairs. This also makes IOB1
    input come out with the right spans.
    """
    spans: list[EntitySpan] = []
    repairs = 0
    cur_start = -1
    cur_type = ""

    def close(end: int):
        nonlocal cur_start
        if cur_start >= 0:
            spans.append(EntitySpan(cur_start, end, cur_type))
            cur_start = -1

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
            continue
        prefix, etype = tag.split("-", 1)
        if prefix == "B":
            close(i)
            cur_start, cur_type = i, etype
        else:  # I
            if cur_start >= 0 and cur_type == etype:
                continue
            close(i)
            cur_start, cur_type = i, etype
            repairs += 1
    close(len(tags))
    return spans, repairs


def _check_tag(tag: str, allowed: set[str], lineno: int) -> None:
    if tag == "O":
        return
    if len(tag) < 3 or tag[0] not in "BI" or tag[1] != "-":
        raise MalformedLine(f"line {lineno}: tag {tag!r} is not O, B-<type> or I-<type>")
    if tag[2:] not in allowed:
        raise UnknownType(f"line {lineno}: tag {tag!r} names a type outside the inventory")


def parse_bio(text: str, type_inventory: Sequence[str], name: str = "corpus") -> Corpus:
    """Parse a BIO document into a Corpus.

    Lines are blank (sentence boundary) or ``token<TAB-or-space>tag``.
    Raises MalformedLine / UnknownType with a 1-based line number.
    """
    inventory = tuple(dict.fromkeys(type_inventory))
    allowed = set(inventory)
    examples: list[LabeledExample] = []
    repairs = 0
    words: list[str] = []
    tags: list[str] = []

    def flush():
        nonlocal repairs
        if not words:
            return
        spans, rep = tags_to_spans(tags)
        repairs += rep
        examples.append(LabeledExample.from_strings(
            words, [(s.start, s.end, s.etype) for s in spans],
            source_id=f"{name}-{len(examples):04d}"))
        words.clear()
        tags.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        fields = line.split()
        if len(fields) != 2:
            raise MalformedLine(f"line {lineno}: expected 'token<sep>tag', got {len(fields)} fields")
        tok, tag = fields
        _check_tag(tag, allowed, lineno)
        words.append(tok)
        tags.append(tag)
    flush()
    return Corpus(tuple(examples), inventory, name, repairs)


def load_manifest(path) -> Corpus:
    """Load a corpus manifest (TOML: name, types, files) and its BIO files.

    File paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    data = tomllib.loads(path.read_text(encoding="utf-8"))
    for key in ("name", "types", "files"):
        if key not in data:
            raise ValueError(f"manifest {path} is missing the {key!r} field")
    name = data["name"]
    types = tuple(data["types"])
    examples: list[LabeledExample] = []
    repairs = 0
    for rel in data["files"]:
        fpath = path.parent / rel
        sub = parse_bio(fpath.read_text(encoding="utf-8"), types, name=f"{name}/{Path(rel).stem}")
        examples.extend(sub.examples)
        repairs += sub.repairs
    return Corpus(tuple(examples), types, name, repairs)


def sample_exemplars(corpus: Corpus, k: int, seed: int,
                     group_key: Callable[[LabeledExample], object] | None = None,
                     ) -> list[LabeledExample]:
    """Draw k distinct exemplars without replacement, deterministically.

    Entity-bearing sentences are drawn before empty ones, so whenever the
    corpus has any entities at least one sampled exemplar carries one. With
    ``group_key`` set, no two exemplars share a group (episode hook).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(corpus.examples):
        raise InsufficientData(f"k={k} exceeds corpus size {len(corpus.examples)}")
    rng = random.Random(f"{seed}:exemplars")
    with_ents = [ex for ex in corpus.examples if ex.gold]
    without = [ex for ex in corpus.examples if not ex.gold]
    rng.shuffle(with_ents)
    rng.shuffle(without)
    picked: list[LabeledExample] = []
    seen_groups = set()
    for ex in with_ents + without:
        if group_key is not None:
            g = group_key(ex)
            if g in seen_groups:
                continue
            seen_groups.add(g)
        picked.append(ex)
        if len(picked) == k:
            return picked
    raise InsufficientData(f"only {len(picked)} examples available for k={k}")


def sample_eval(corpus: Corpus, n: int, seed: int,
                exclude: Sequence[LabeledExample] = ()) -> list[LabeledExample]:
    """Draw n evaluation examples disjoint from ``exclude``, order randomized."""
    if n < 1:
        raise ValueError("n must be >= 1")
    excluded_ids = {ex.source_id for ex in exclude}
    pool = [ex for ex in corpus.examples if ex.source_id not in excluded_ids]
    if n > len(pool):
        raise InsufficientData(f"n={n} exceeds the {len(pool)} examples left after exclusions")
    rng = random.Random(f"{seed}:eval")
    rng.shuffle(pool)
    return pool[:n]
