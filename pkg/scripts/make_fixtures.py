"""Regenerate the shipped corpus fixtures and the replay cache.

Writes fixtures/conll_style/sentences.bio, fixtures/tech_style/sentences.bio
and rebuilds fixtures/conll_style/replay.cache by recording a gold-echoing
backend (with a deterministic sprinkling of sloppier answer formats so the
repair counters are exercised). Every generated sentence is validated
against the full pipeline before anything is written: the reference answer
must round-trip through parsing and grounding back to the exact gold spans.

Usage: python scripts/make_fixtures.py
"""
from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from defner.align import ground, spans_to_tags
from defner.backend import CompletionCache, GoldEchoBackend, RecordingBackend
from defner.corpus import LabeledExample, load_manifest
from defner.evaluation import micro_f1
from defner.harness import load_run_config, run_experiment
from defner.parse import EmptyParse, extract_predictions, parse_completion
from defner.promptgen import DefinitionDoc, PromptConfig, render_exemplar_answer

FIXTURES = ROOT / "fixtures"

CONLL_PER = ["Alice Carter", "John Smith", "Maria Lopez", "Wei Zhang", "Ahmed Hassan",
             "Elena Petrova", "David Cohen", "Sara Kim", "Tom Riley", "Nina Brandt"]
CONLL_LOC = ["Oslo", "Paris", "New York", "Lake Geneva", "Tokyo", "Berlin",
             "Cairo", "Lisbon", "Sydney", "Nairobi"]
CONLL_ORG = ["Acme Corp", "Nordic Bank", "United Nations", "Vertex Labs",
             "Globex Group", "Harbor Trust", "Stellar Media", "Quantum Works"]
CONLL_MISC = ["Winter Olympics", "World Cup", "Jazz Festival", "Climate Accord",
              "Book Fair"]

CONLL_TEMPLATES = [
    "{P} visited {L} last summer .",
    "{O} opened a new office in {L} .",
    "{P} works for {O} in {L} .",
    "The {M} final drew huge crowds in {L} .",
    "{P} and {P2} founded {O} .",
    "{Z}",
    "{O} signed {P} after long talks .",
    "Delegates from {L} arrived for the {M} summit .",
    "{P} published a long report on the {M} .",
    "Markets in {L} rallied after the {O} statement .",
    "Voters in {L} backed the plan from {O} .",
    "{Z}",
    "{P} flew from {L} to {L2} on a chartered plane .",
]

# Entity-free sentences, drawn by offset so no two are identical.
CONLL_ZERO = [
    "The weather stayed calm all week .",
    "Nothing unusual happened during the night .",
    "Traffic moved slowly across the old bridge .",
    "The committee met quietly behind closed doors .",
    "Rain fell steadily through the early morning .",
    "Prices drifted lower for a third straight day .",
    "The talks resumed after a short recess .",
    "Officials declined to comment on the matter .",
]

TECH_LANG = ["Python", "Rust", "Haskell", "Kotlin", "Fortran", "Erlang", "Scala"]
TECH_TOOL = ["Docker", "Postgres", "Redis", "Terraform", "Bazel", "Grafana", "Kafka"]
TECH_ORG = ["Mozilla", "Canonical", "Netflix", "Intel", "Red Hat"]

TECH_TEMPLATES = [
    "Engineers at {O} rewrote the billing service in {G} .",
    "{T} deployments at {O} doubled this quarter .",
    "She profiled the {G} compiler using {T} .",
    "{Z}",
    "{O} migrated from {T} to {T2} last year .",
    "{G} bindings for {T} shipped in the spring .",
]

TECH_ZERO = [
    "The build failed twice before lunch .",
    "Latency stayed flat during the rollout .",
    "The standup ran long again today .",
    "Code review backlog shrank over the weekend .",
]

SLOT_POOLS = {
    "P": ("PER", CONLL_PER), "P2": ("PER", CONLL_PER),
    "L": ("LOC", CONLL_LOC), "L2": ("LOC", CONLL_LOC),
    "O": ("ORG", CONLL_ORG), "M": ("MISC", CONLL_MISC),
    "G": ("LANG", TECH_LANG), "T": ("TOOL", TECH_TOOL), "T2": ("TOOL", TECH_TOOL),
}
TECH_SLOT_POOLS = dict(SLOT_POOLS)
TECH_SLOT_POOLS["O"] = ("ORG", TECH_ORG)


def build_sentence(template: str, slot_pools: dict, offset: int):
    """Fill a template's slots from the pools; paired slots (P/P2, L/L2,
    T/T2) get distinct picks."""
    words: list[str] = []
    spans: list[tuple[int, int, str]] = []
    bump = 0
    for part in template.split():
        if part.startswith("{"):
            key = part.strip("{}")
            etype, pool = slot_pools[key]
            extra = 1 + bump if key.endswith("2") else 0
            phrase = pool[(offset + extra) % len(pool)]
            bump += 1
            start = len(words)
            words.extend(phrase.split())
            spans.append((start, len(words), etype))
        else:
            words.append(part)
    return words, spans


def generate(templates, slot_pools, zero_pool, count: int):
    sentences = []
    zero_used = 0
    for i in range(count):
        template = templates[i % len(templates)]
        if template == "{Z}":
            words, spans = zero_pool[zero_used % len(zero_pool)].split(), []
            zero_used += 1
        else:
            words, spans = build_sentence(template, slot_pools, offset=i)
        sentences.append((words, spans))
    texts = [" ".join(w) for w, _ in sentences]
    assert len(set(texts)) == len(texts), "duplicate fixture sentences"
    return sentences


def validate_sentence(words, spans, glossary) -> None:
    """The gold-echo answer must survive parse -> extract -> ground exactly,
    under all four (cot, cand) flag combinations."""
    ex = LabeledExample.from_strings(words, spans, source_id="check")
    phrases = [ex.phrase(s) for s in ex.gold]
    assert len({p.casefold() for p in phrases}) == len(phrases), \
        f"duplicate gold phrases in {words}"
    for cot in (True, False):
        for cand in (True, False):
            cfg = PromptConfig(cot_on=cot, cand_on=cand)
            answer = render_exemplar_answer(ex, cfg, glossary=glossary)
            try:
                report = parse_completion(answer)
            except EmptyParse:
                assert not ex.gold, f"unparseable answer for {words}"
                continue
            pairs, dropped = extract_predictions(report, {t for _, _, t in spans} or {"X"})
            assert dropped == 0 and report.skipped_lines == 0
            assert sorted(pairs) == sorted(set(ex.gold_pairs())), \
                f"round trip failed for {words}: {pairs}"
            result = ground(pairs, ex.tokens)
            counts = micro_f1([result.grounded], [ex.gold])
            assert counts.fp == 0 and counts.fn == 0, \
                f"grounding missed on {words}: {counts}"


def write_bio(path: Path, sentences) -> None:
    blocks = []
    for words, spans in sentences:
        ex = LabeledExample.from_strings(words, spans)
        tags = spans_to_tags(ex.tokens, ex.gold)
        blocks.append("\n".join(f"{w}\t{t}" for w, t in zip(words, tags)))
    path.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
    print(f"wrote {path} ({len(sentences)} sentences)")


def sloppy_rewrite(fingerprint: str, text: str) -> str:
    """Deterministically reformat ~1/6 of answers into the looser style the
    parser must repair (bullets, yes/no decisions)."""
    digest = int(hashlib.sha256(fingerprint.encode("utf-8")).hexdigest(), 16)
    if digest % 6:
        return text
    lines = []
    for line in text.splitlines():
        line = re.sub(r"^\d+\.\s*", "- ", line)
        line = line.replace(" | True | ", " | yes | ").replace(" | False | ", " | no | ")
        lines.append(line)
    return "\n".join(lines)


def build_replay_cache() -> None:
    cfg = load_run_config(FIXTURES / "conll_style" / "run.toml")
    cache_path = cfg.resolve(cfg.cache_path)
    cache_path.unlink(missing_ok=True)
    Path(str(cache_path) + ".idx").unlink(missing_ok=True)

    corpus = load_manifest(cfg.resolve(cfg.manifest_path))
    def_doc = DefinitionDoc.load(cfg.resolve(cfg.definition_path))
    echo = GoldEchoBackend(corpus.examples, cfg.prompt,
                           glossary=def_doc.glossary_map, rewrite=sloppy_rewrite)
    recorder = RecordingBackend(echo, CompletionCache(cache_path))
    with tempfile.TemporaryDirectory() as tmp:
        build_cfg = dataclasses.replace(cfg, max_in_flight=1, output_dir=tmp)
        row = run_experiment(build_cfg, backend=recorder)
    print(f"wrote {cache_path} ({len(recorder.cache)} records); "
          f"build run scored {row.aggregate.formatted()}, counters {row.counters}")

    # replaying twice must reproduce the summary byte for byte
    with tempfile.TemporaryDirectory() as tmp_a, tempfile.TemporaryDirectory() as tmp_b:
        row_a = run_experiment(dataclasses.replace(cfg, output_dir=tmp_a))
        row_b = run_experiment(dataclasses.replace(cfg, output_dir=tmp_b))
        a = Path(row_a.summary_path).read_bytes()
        b = Path(row_b.summary_path).read_bytes()
        assert a == b, "replay summaries differ between invocations"
        assert all(f1 == 100.0 for f1 in row_a.aggregate.run_f1s), row_a.aggregate
    print("replay determinism check passed")


def main() -> None:
    conll_doc = DefinitionDoc.load(FIXTURES / "conll_style" / "definitions.txt")
    tech_doc = DefinitionDoc.load(FIXTURES / "tech_style" / "definitions.txt")

    conll = generate(CONLL_TEMPLATES, SLOT_POOLS, CONLL_ZERO, 50)
    for words, spans in conll:
        validate_sentence(words, spans, conll_doc.glossary_map)
    write_bio(FIXTURES / "conll_style" / "sentences.bio", conll)

    tech = generate(TECH_TEMPLATES, TECH_SLOT_POOLS, TECH_ZERO, 24)
    for words, spans in tech:
        validate_sentence(words, spans, tech_doc.glossary_map)
    write_bio(FIXTURES / "tech_style" / "sentences.bio", tech)

    build_replay_cache()


if __name__ == "__main__":
    main()
