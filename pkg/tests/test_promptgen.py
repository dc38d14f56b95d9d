import dataclasses
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from defner.corpus import LabeledExample
from defner.promptgen import (FLAG_SECTIONS, ConfigMismatch, DefinitionDoc,
                              PromptConfig, render_exemplar_answer, render_prompt,
                              token_line)

from conftest import FIXTURES, make_examples

GLOSSARY = {"PER": "person name", "LOC": "city, a location", "ORG": "organization"}
DOC = DefinitionDoc(body="An entity is a named thing.",
                    type_glossary=tuple(GLOSSARY.items()))


def ex_ny():
    return LabeledExample.from_strings(
        ["Miners", "reached", "New", "York", "."], [(2, 4, "LOC")], "ny")


class TestExemplarAnswer:
    def test_cot_line_shape(self):
        line = render_exemplar_answer(ex_ny(), PromptConfig(cand_on=False), glossary=GLOSSARY)
        assert line == "1. New York | True | is a city, a location (LOC)"

    def test_no_cot_line_shape(self):
        line = render_exemplar_answer(
            ex_ny(), PromptConfig(cot_on=False, cand_on=False), glossary=GLOSSARY)
        assert line == "1. New York | True | (LOC)"

    def test_zero_gold_with_candidates(self):
        ex = LabeledExample.from_strings(["the", "rain", "fell", "."], [], "z")
        answer = render_exemplar_answer(ex, PromptConfig(), glossary=GLOSSARY)
        lines = answer.splitlines()
        assert lines and all(" | False | " in l for l in lines)

    def test_zero_gold_no_candidates_is_empty(self):
        ex = LabeledExample.from_strings(["the", "rain", "fell", "."], [], "z")
        assert render_exemplar_answer(ex, PromptConfig(cand_on=False)) == ""

    def test_every_gold_entity_once_true(self):
        ex = make_examples(1, seed=11, max_entities=4)[0]
        answer = render_exemplar_answer(ex, PromptConfig(), glossary=GLOSSARY)
        true_lines = [l for l in answer.splitlines() if " | True | " in l]
        assert len(true_lines) == len(ex.gold)
        for span in ex.gold:
            assert any(ex.phrase(span) in l for l in true_lines)

    def test_false_candidates_capped_and_disjoint_from_gold(self):
        ex = LabeledExample.from_strings(
            ["Alpha", "Beta", "Gamma", "Delta", "Epsilon", "visited", "Oslo"],
            [(6, 7, "LOC")], "caps")
        answer = render_exemplar_answer(ex, PromptConfig(), glossary=GLOSSARY)
        false_lines = [l for l in answer.splitlines() if " | False | " in l]
        assert 1 <= len(false_lines) <= 3
        assert not any("Oslo" in l for l in false_lines)

    def test_fallback_glossary_text(self):
        line = render_exemplar_answer(ex_ny(), PromptConfig(cand_on=True))
        assert "is an entity of type LOC" in line


class TestRenderPrompt:
    def test_section_order_all_on(self):
        exemplars = make_examples(2, seed=5)
        prompt = render_prompt(PromptConfig(k=2), DOC, exemplars, ex_ny())
        assert [t for t, _ in prompt.section_map] == \
            ["DEFINITION", "INSTRUCTION", "EXEMPLAR", "EXEMPLAR", "QUERY"]

    def test_exactly_one_query(self):
        prompt = render_prompt(PromptConfig(fs_on=False, def_on=False), None, [], ex_ny())
        assert len(prompt.sections("QUERY")) == 1

    def test_def_toggle_removes_exactly_its_bytes(self):
        exemplars = make_examples(2, seed=5)
        cfg = PromptConfig(k=2)
        with_def = render_prompt(cfg, DOC, exemplars, ex_ny())
        without = render_prompt(dataclasses.replace(cfg, def_on=False), DOC, exemplars, ex_ny())
        raw = with_def.text.encode("utf-8")
        start, end = with_def.sections("DEFINITION")[0]
        assert raw[:start] + raw[end:] == without.text.encode("utf-8")

    def test_fs_toggle_removes_exactly_exemplar_bytes(self):
        exemplars = make_examples(2, seed=5)
        cfg = PromptConfig(k=2)
        with_fs = render_prompt(cfg, DOC, exemplars, ex_ny())
        without = render_prompt(dataclasses.replace(cfg, fs_on=False), DOC, exemplars, ex_ny())
        raw = with_fs.text.encode("utf-8")
        keep = bytearray()
        cursor = 0
        for start, end in with_fs.sections("EXEMPLAR"):
            keep += raw[cursor:start]
            cursor = end
        keep += raw[cursor:]
        assert bytes(keep) == without.text.encode("utf-8")

    @pytest.mark.parametrize("flag", ["def_on", "fs_on", "cot_on", "cand_on"])
    def test_flag_isolation(self, flag):
        # bytes outside the flag's declared sections are identical
        exemplars = make_examples(3, seed=7)
        base = PromptConfig(k=3)
        flipped = dataclasses.replace(base, **{flag: False})
        a = render_prompt(base, DOC, exemplars, ex_ny())
        b = render_prompt(flipped, DOC, exemplars, ex_ny())

        def outside(prompt):
            raw = prompt.text.encode("utf-8")
            out = bytearray()
            cursor = 0
            for tag, (start, end) in prompt.section_map:
                if tag in FLAG_SECTIONS[flag]:
                    out += raw[cursor:start]
                    cursor = end
            out += raw[cursor:]
            return bytes(out)

        assert outside(a) == outside(b)

    def test_instruction_states_cap(self):
        prompt = render_prompt(PromptConfig(fs_on=False, max_candidates=7), DOC, [], ex_ny())
        start, end = prompt.sections("INSTRUCTION")[0]
        assert "7" in prompt.text.encode("utf-8")[start:end].decode("utf-8")

    def test_query_has_tokens_and_detok(self):
        prompt = render_prompt(PromptConfig(fs_on=False), DOC, [], ex_ny())
        assert "Sentence: Miners reached New York ." in prompt.text
        assert token_line(ex_ny()) in prompt.text

    def test_determinism(self):
        exemplars = make_examples(2, seed=9)
        a = render_prompt(PromptConfig(k=2), DOC, exemplars, ex_ny())
        b = render_prompt(PromptConfig(k=2), DOC, exemplars, ex_ny())
        assert a.text == b.text and a.section_map == b.section_map

    def test_gold_phrases_verbatim_when_fs_on(self):
        exemplars = make_examples(4, seed=13)
        prompt = render_prompt(PromptConfig(k=4), DOC, exemplars, ex_ny())
        for ex in exemplars:
            for span in ex.gold:
                assert ex.phrase(span) in prompt.text

    def test_config_mismatches(self):
        with pytest.raises(ConfigMismatch):
            render_prompt(PromptConfig(), DOC, [], ex_ny())  # fs_on, no exemplars
        with pytest.raises(ConfigMismatch):
            render_prompt(PromptConfig(fs_on=False), None, [], ex_ny())  # def_on, no doc
        with pytest.raises(ConfigMismatch):
            render_prompt(PromptConfig(fs_on=False), DefinitionDoc(body="  "), [], ex_ny())

    def test_section_ranges_disjoint_ordered_covering(self):
        exemplars = make_examples(2, seed=5)
        prompt = render_prompt(PromptConfig(k=2), DOC, exemplars, ex_ny())
        raw = prompt.text.encode("utf-8")
        cursor = 0
        for _, (start, end) in prompt.section_map:
            assert start == cursor and end > start
            raw[start:end].decode("utf-8")  # valid UTF-8 boundaries
            cursor = end
        assert cursor == len(raw)


def test_all_16_flag_combinations_render():
    exemplars = make_examples(2, seed=21)
    for flags in itertools.product([True, False], repeat=4):
        cfg = PromptConfig(def_on=flags[0], fs_on=flags[1], cot_on=flags[2],
                           cand_on=flags[3], k=2)
        prompt = render_prompt(cfg, DOC, exemplars, ex_ny())
        assert prompt.text.endswith("Answer:\n")


class TestDefinitionDoc:
    def test_load_front_matter(self, tmp_path):
        p = tmp_path / "defs.txt"
        p.write_text("---\nPER: a person\nLOC: a place\n---\nBody text here.\n")
        doc = DefinitionDoc.load(p)
        assert doc.body == "Body text here."
        assert doc.type_glossary == (("PER", "a person"), ("LOC", "a place"))

    def test_load_without_front_matter(self, tmp_path):
        p = tmp_path / "defs.txt"
        p.write_text("Just a body.\n")
        doc = DefinitionDoc.load(p)
        assert doc.body == "Just a body." and doc.type_glossary == ()

    def test_unterminated_front_matter(self, tmp_path):
        p = tmp_path / "defs.txt"
        p.write_text("---\nPER: x\n")
        with pytest.raises(ValueError, match="unterminated"):
            DefinitionDoc.load(p)

    @pytest.mark.parametrize("name", [
        "conll", "genia", "crossner_politics", "crossner_literature",
        "crossner_music", "crossner_ai", "crossner_science", "fewnerd_intra"])
    def test_shipped_definition_docs_load(self, name):
        doc = DefinitionDoc.load(FIXTURES / "definitions" / f"{name}.txt")
        assert doc.body and doc.type_glossary
        labels = [label for label, _ in doc.type_glossary]
        assert len(set(labels)) == len(labels)

    def test_genia_doc_has_32_types(self):
        doc = DefinitionDoc.load(FIXTURES / "definitions" / "genia.txt")
        assert len(doc.type_glossary) == 32


@st.composite
def configs(draw):
    return PromptConfig(
        def_on=draw(st.booleans()), fs_on=draw(st.booleans()),
        cot_on=draw(st.booleans()), cand_on=draw(st.booleans()),
        k=2, max_candidates=draw(st.integers(1, 20)))


@given(configs(), configs())
@settings(max_examples=60)
def test_property_single_flag_changes_stay_in_their_sections(cfg_a, cfg_b):
    diff = [f for f in ("def_on", "fs_on", "cot_on", "cand_on")
            if getattr(cfg_a, f) != getattr(cfg_b, f)]
    if len(diff) != 1 or cfg_a.max_candidates != cfg_b.max_candidates:
        return
    flag = diff[0]
    exemplars = make_examples(2, seed=31)
    query = make_examples(1, seed=32)[0]
    a = render_prompt(cfg_a, DOC, exemplars, query)
    b = render_prompt(cfg_b, DOC, exemplars, query)

    def outside(prompt):
        raw = prompt.text.encode("utf-8")
        out = bytearray()
        cursor = 0
        for tag, (start, end) in prompt.section_map:
            if tag in FLAG_SECTIONS[flag]:
                out += raw[cursor:start]
                cursor = end
        out += raw[cursor:]
        return bytes(out)

    assert outside(a) == outside(b)
