"""Prompt assembly under four ablation flags.

A prompt is a byte-exact concatenation of section blocks: an optional
entity-definition block, an instruction block stating the answer line
format, optional worked exemplars, and the query sentence. Toggling a flag
adds or removes exactly that flag's sections, which keeps ablations clean.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import LabeledExample

SECTION_DEFINITION = "DEFINITION"
SECTION_INSTRUCTION = "INSTRUCTION"
SECTION_EXEMPLAR = "EXEMPLAR"
SECTION_QUERY = "QUERY"

# Sections whose bytes are allowed to change when one flag flips.
FLAG_SECTIONS = {
    "def_on": (SECTION_DEFINITION,),
    "fs_on": (SECTION_EXEMPLAR,),
    "cot_on": (SECTION_INSTRUCTION, SECTION_EXEMPLAR),
    "cand_on": (SECTION_INSTRUCTION, SECTION_EXEMPLAR),
}

TOKEN_LINE_PREFIX = "Tokens: "

_STOPWORDS = frozenset(
    "the a an and or of in on at to for with from by is are was were be been "
    "has have had this that these those it its as not but so if then than".split())


class ConfigMismatch(ValueError):
    """Prompt inputs do not satisfy the active flag configuration."""


@dataclass(frozen=True)
class DefinitionDoc:
    """Natural-language statement of what does and does not count as an entity,
    plus a per-type glossary of one-line descriptions."""

    body: str
    type_glossary: tuple[tuple[str, str], ...] = ()

    @property
    def glossary_map(self) -> dict[str, str]:
        return dict(self.type_glossary)

    @classmethod
    def load(cls, path) -> "DefinitionDoc":
        """Read a definition file: optional ``---``-fenced front matter with
        ``LABEL: description`` lines, then the free-text body."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        glossary: list[tuple[str, str]] = []
        body_lines = lines
        if lines and lines[0].strip() == "---":
            try:
                close = lines.index("---", 1)
            except ValueError:
                raise ValueError(f"{path}: unterminated front matter") from None
            for raw in lines[1:close]:
                raw = raw.strip()
                if not raw or raw.startswith("#"):
                    continue
                if ":" not in raw:
                    raise ValueError(f"{path}: bad glossary line {raw!r}")
                label, desc = raw.split(":", 1)
                glossary.append((label.strip(), desc.strip()))
            body_lines = lines[close + 1:]
        return cls(body="\n".join(body_lines).strip(), type_glossary=tuple(glossary))


@dataclass(frozen=True)
class PromptConfig:
    """The four ablation flags plus exemplar count and answer-length cap."""

    def_on: bool = True
    fs_on: bool = True
    cot_on: bool = True
    cand_on: bool = True
    k: int = 5
    max_candidates: int = 10

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.def_on, self.fs_on, self.cot_on, self.cand_on)


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    section_map: tuple[tuple[str, tuple[int, int]], ...]

    def sections(self, tag: str) -> list[tuple[int, int]]:
        return [rng for t, rng in self.section_map if t == tag]


def token_line(ex: LabeledExample) -> str:
    """The query's raw-token line; also the mock backend's fingerprint key."""
    return TOKEN_LINE_PREFIX + json.dumps(ex.words)


def _false_candidates(ex: LabeledExample, exclude: set[str], limit: int = 3,
                      ) -> list[tuple[int, str]]:
    """Plausible non-entity phrases for False answer lines.

    Capitalized token runs (up to 3 tokens) outside the gold spans come
    first, then longer lowercase content words; never a phrase that collides
    case-insensitively with a gold phrase or an earlier pick.
    """
    covered = set()
    for span in ex.gold:
        covered.update(range(span.start, span.end))
    words = ex.words
    seen = set(exclude)
    out: list[tuple[int, str]] = []

    def push(pos: int, phrase: str) -> None:
        key = phrase.casefold()
        if key not in seen:
            seen.add(key)
            out.append((pos, phrase))

    def looks_capitalized(i: int) -> bool:
        w = words[i]
        return (i not in covered and w[:1].isupper()
                and w.replace("-", "").isalpha() and w.casefold() not in _STOPWORDS)

    i = 0
    while i < len(words) and len(out) < limit:
        if looks_capitalized(i):
            j = i
            while j + 1 < len(words) and j + 1 - i < 3 and looks_capitalized(j + 1):
                j += 1
            push(i, " ".join(words[i:j + 1]))
            i = j + 1
        else:
            i += 1
    for i, w in enumerate(words):
        if len(out) >= limit:
            break
        if i not in covered and w.isalpha() and w.islower() and len(w) >= 4 \
                and w not in _STOPWORDS:
            push(i, w)
    return out


def render_exemplar_answer(ex: LabeledExample, cfg: PromptConfig,
                           glossary: Mapping[str, str] | None = None) -> str:
    """Render the worked answer for one sentence.

    One numbered line per distinct candidate phrase:
    ``<n>. <phrase> | True/False | <explanation, when cot_on> (<TYPE> or
    "not an entity")``. Gold entities get True lines with their type; with
    cand_on, non-entity phrases are added as False lines.
    """
    glossary = glossary or {}
    entries: list[tuple[int, str, bool, str | None]] = []
    seen: set[str] = set()
    for span in sorted(ex.gold):
        phrase = ex.phrase(span)
        key = phrase.casefold()
        if key in seen:
            continue  # answer lines name distinct candidates
        seen.add(key)
        entries.append((span.start, phrase, True, span.etype))
    if cfg.cand_on:
        for pos, phrase in _false_candidates(ex, exclude=seen):
            entries.append((pos, phrase, False, None))
        if not entries and ex.tokens:
            entries.append((0, ex.tokens[0].text, False, None))
    entries.sort(key=lambda e: (e[0], e[1]))

    lines = []
    for n, (_, phrase, is_entity, etype) in enumerate(entries, start=1):
        if is_entity:
            decision = "True"
            tail = f"({etype})"
            desc = glossary.get(etype)
            reason = f"is a {desc}" if desc else f"is an entity of type {etype}"
        else:
            decision = "False"
            tail = "(not an entity)"
            reason = "does not name a specific entity"
        if cfg.cot_on:
            lines.append(f"{n}. {phrase} | {decision} | {reason} {tail}")
        else:
            lines.append(f"{n}. {phrase} | {decision} | {tail}")
    return "\n".join(lines)


def _definition_text(doc: DefinitionDoc) -> str:
    lines = [doc.body.strip()]
    if doc.type_glossary:
        lines += ["", "Entity types:"]
        lines += [f"  {label}: {desc}" for label, desc in doc.type_glossary]
    return "\n".join(lines)


def _instruction_text(cfg: PromptConfig) -> str:
    if cfg.cot_on:
        true_form = "<n>. <phrase> | True | <why it fits the definition> (<TYPE>)"
        false_form = "<n>. <phrase> | False | <why it does not> (not an entity)"
    else:
        true_form = "<n>. <phrase> | True | (<TYPE>)"
        false_form = "<n>. <phrase> | False | (not an entity)"
    lines = [
        "Task: list the named entities in the final sentence.",
        "Answer with one numbered line per candidate phrase, formatted exactly as:",
        "  " + true_form,
    ]
    if cfg.cand_on:
        lines.append("  " + false_form)
        lines.append("Also list plausible-looking phrases that are not entities, marked False.")
    else:
        lines.append("List only phrases that are entities, marked True.")
    lines.append(f"Give at most {cfg.max_candidates} lines.")
    return "\n".join(lines)


def render_prompt(cfg: PromptConfig, def_doc: DefinitionDoc | None,
                  exemplars: Sequence[LabeledExample],
                  query: LabeledExample) -> RenderedPrompt:
    """Assemble the full prompt: DEFINITION?, INSTRUCTION, EXEMPLAR*, QUERY.

    The query is rendered both detokenized and as its raw token list so
    predictions can be grounded back to token spans.
    """
    if cfg.def_on and (def_doc is None or not def_doc.body.strip()):
        raise ConfigMismatch("def_on requires a non-empty definition document")
    if cfg.fs_on and not exemplars:
        raise ConfigMismatch("fs_on requires at least one exemplar")
    if not query.tokens:
        raise ConfigMismatch("query sentence has no tokens")

    glossary = def_doc.glossary_map if def_doc else None
    blocks: list[tuple[str, str]] = []
    if cfg.def_on:
        blocks.append((SECTION_DEFINITION, _definition_text(def_doc) + "\n\n"))
    blocks.append((SECTION_INSTRUCTION, _instruction_text(cfg) + "\n\n"))
    if cfg.fs_on:
        for ex in exemplars:
            answer = render_exemplar_answer(ex, cfg, glossary=glossary)
            blocks.append((SECTION_EXEMPLAR, f"Sentence: {ex.text}\nAnswer:\n{answer}\n\n"))
    blocks.append((SECTION_QUERY, f"Sentence: {query.text}\n{token_line(query)}\nAnswer:\n"))

    text = "".join(s for _, s in blocks)
    section_map = []
    offset = 0
    for tag, s in blocks:
        nbytes = len(s.encode("utf-8"))
        section_map.append((tag, (offset, offset + nbytes)))
        offset += nbytes
    return RenderedPrompt(text=text, section_map=tuple(section_map))
