"""Experiment orchestration: single runs, the ablation matrix, persistence.

A run samples exemplars and an evaluation set per seed, renders prompts,
obtains completions, parses/grounds/scores them, and persists one JSONL
record per example plus a summary JSON. Everything non-deterministic (wall
time) stays out of the persisted summary so replayed runs are byte-stable.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .align import ground
from .backend import (Backend, BackendError, CompletionCache, CompletionRequest,
                      GoldEchoBackend, RemoteBackend, RemoteConfig, ReplayBackend,
                      DEFAULT_STOP)
from .corpus import Corpus, EntitySpan, LabeledExample, load_manifest, sample_eval, sample_exemplars
from .evaluation import AggregateReport, EvalReport, aggregate, micro_f1
from .parse import EmptyParse, extract_predictions, parse_completion
from .promptgen import ConfigMismatch, DefinitionDoc, PromptConfig, render_prompt

# The seven flag rows of the component ablation: (def, fs, cot, cand).
ABLATION_ROWS: tuple[tuple[bool, bool, bool, bool], ...] = (
    (True, True, True, True),
    (True, True, True, False),
    (True, True, False, True),
    (True, False, True, True),
    (False, True, True, True),
    (False, True, True, False),
    (False, True, False, False),
)

COUNTER_KEYS = ("skipped_lines", "repaired_lines", "unmatched", "empty_parse", "type_drops")


@dataclass(frozen=True)
class RunConfig:
    manifest_path: str
    definition_path: str
    prompt: PromptConfig = PromptConfig()
    provider: str = "replay"  # remote | replay | mock
    model_id: str = "default"
    cache_path: str | None = None
    base_url: str = ""
    endpoint_path: str = "/v1/chat/completions"
    auth_env: str = "DEFNER_API_KEY"
    auth_header: str = "Authorization"
    log_path: str | None = None
    max_output_tokens: int = 512
    stop_sequences: tuple[str, ...] = DEFAULT_STOP
    n_eval: int = 500
    n_runs: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = "runs"
    max_in_flight: int = 4
    fixed_eval_sample: bool = False
    base_dir: str = "."  # directory every relative path resolves against

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if self.n_runs < 1 or self.n_eval < 1:
            raise ValueError("n_runs and n_eval must be >= 1")
        if len(self.seeds) != self.n_runs:
            raise ValueError(f"need {self.n_runs} seeds, got {len(self.seeds)}")

    def resolve(self, p: str) -> Path:
        return (Path(self.base_dir) / p).resolve()


def config_fingerprint(cfg: RunConfig) -> str:
    """Hash of the canonicalized config; embedded in output file names.

    base_dir and output_dir are machine/invocation details, not part of the
    experiment identity, so they are excluded.
    """
    data = dataclasses.asdict(cfg)
    data.pop("base_dir")
    data.pop("output_dir")
    payload = json.dumps(data, sort_keys=True, default=list)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _prompt_config(data: dict) -> PromptConfig:
    return PromptConfig(
        def_on=data.get("def_on", True),
        fs_on=data.get("fs_on", True),
        cot_on=data.get("cot_on", True),
        cand_on=data.get("cand_on", True),
        k=data.get("k", 5),
        max_candidates=data.get("max_candidates", 10),
    )


def load_run_config(path) -> RunConfig:
    """Read a TOML run config; relative paths resolve against the file's dir."""
    path = Path(path)
    data = tomllib.loads(path.read_text(encoding="utf-8"))
    try:
        dataset = data["dataset"]
        manifest = dataset["manifest"]
        definition = dataset["definition"]
    except KeyError as err:
        raise ValueError(f"{path}: missing dataset.{err.args[0]} entry") from None
    backend_cfg = data.get("backend", {})
    run_cfg = data.get("run", {})
    n_runs = run_cfg.get("n_runs", 5)
    seeds = run_cfg.get("seeds", list(range(n_runs)))
    return RunConfig(
        manifest_path=manifest,
        definition_path=definition,
        prompt=_prompt_config(data.get("prompt", {})),
        provider=backend_cfg.get("provider", "replay"),
        model_id=backend_cfg.get("model_id", "default"),
        cache_path=backend_cfg.get("cache_path"),
        base_url=backend_cfg.get("base_url", ""),
        endpoint_path=backend_cfg.get("path", "/v1/chat/completions"),
        auth_env=backend_cfg.get("auth_env", "DEFNER_API_KEY"),
        auth_header=backend_cfg.get("auth_header", "Authorization"),
        log_path=backend_cfg.get("log_path"),
        max_output_tokens=backend_cfg.get("max_output_tokens", 512),
        stop_sequences=tuple(backend_cfg.get("stop_sequences", DEFAULT_STOP)),
        n_eval=run_cfg.get("n_eval", 500),
        n_runs=n_runs,
        seeds=tuple(seeds),
        output_dir=run_cfg.get("output_dir", "runs"),
        max_in_flight=run_cfg.get("max_in_flight", 4),
        fixed_eval_sample=run_cfg.get("fixed_eval_sample", False),
        base_dir=str(path.parent),
    )


def load_ablation_datasets(path) -> list[tuple[str, str]]:
    """Read the [[ablation.datasets]] entries (manifest, definition) of a config."""
    data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    entries = data.get("ablation", {}).get("datasets", [])
    if not entries:
        raise ValueError(f"{path}: no [[ablation.datasets]] entries")
    return [(e["manifest"], e["definition"]) for e in entries]


def make_backend(cfg: RunConfig, corpus: Corpus, def_doc: DefinitionDoc) -> Backend:
    if cfg.provider == "replay":
        if not cfg.cache_path:
            raise ValueError("replay provider requires backend.cache_path")
        return ReplayBackend(CompletionCache(cfg.resolve(cfg.cache_path)))
    if cfg.provider == "remote":
        cache_path = cfg.cache_path or str(Path(cfg.output_dir) / "remote.cache")
        remote = RemoteConfig(
            base_url=cfg.base_url,
            path=cfg.endpoint_path,
            auth_env=cfg.auth_env,
            auth_header=cfg.auth_header,
            log_path=str(cfg.resolve(cfg.log_path)) if cfg.log_path else None,
        )
        if not remote.base_url:
            raise ValueError("remote provider requires backend.base_url")
        return RemoteBackend(remote, CompletionCache(cfg.resolve(cache_path)))
    if cfg.provider == "mock":
        return GoldEchoBackend(corpus.examples, cfg.prompt, glossary=def_doc.glossary_map)
    raise ValueError(f"unknown provider {cfg.provider!r}")


@dataclass(frozen=True)
class ResultRow:
    fingerprint: str
    dataset: str
    aggregate: AggregateReport
    counters: dict
    wall_time_s: float
    summary_path: str = ""


def _validate_glossary(def_doc: DefinitionDoc, corpus: Corpus) -> None:
    unknown = [label for label, _ in def_doc.type_glossary
               if label not in corpus.type_inventory]
    if unknown:
        raise ConfigMismatch(f"glossary labels {unknown} are not in the corpus inventory")


def _example_record(ex: LabeledExample, prompt_sha: str, completion: str,
                    report, empty_parse: bool, pairs, dropped, grounding) -> dict:
    counts = micro_f1([grounding.grounded], [ex.gold])
    return {
        "source_id": ex.source_id,
        "tokens": ex.words,
        "gold": [[s.start, s.end, s.etype] for s in ex.gold],
        "prompt_sha256": prompt_sha,
        "completion": completion,
        "parse": {
            "candidates": [{
                "phrase": c.phrase, "is_entity": c.is_entity,
                "explanation": c.explanation, "claimed_type": c.claimed_type,
                "line_no": c.line_no,
            } for c in report.candidates],
            "skipped_lines": report.skipped_lines,
            "repaired_lines": report.repaired_lines,
            "empty_parse": empty_parse,
        },
        "extracted": [[p, t] for p, t in pairs],
        "type_drops": dropped,
        "grounding": {
            "grounded": [[g.span.start, g.span.end, g.span.etype, g.phrase, g.match_mode]
                         for g in grounding.grounded],
            "unmatched": [[p, t] for p, t in grounding.unmatched],
        },
        "counts": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn},
    }


def run_experiment(cfg: RunConfig, backend: Backend | None = None,
                   corpus: Corpus | None = None,
                   def_doc: DefinitionDoc | None = None) -> ResultRow:
    """Execute one full experiment and persist its artifacts.

    Per run: seeded exemplar sample, seeded eval sample disjoint from it,
    prompt rendering, batched completion, parse, extract, ground, score.
    Writes ``run<r>_<fp>.jsonl`` per run and ``summary_<fp>.json``.
    """
    t0 = time.monotonic()
    corpus = corpus if corpus is not None else load_manifest(cfg.resolve(cfg.manifest_path))
    def_doc = def_doc if def_doc is not None else DefinitionDoc.load(cfg.resolve(cfg.definition_path))
    _validate_glossary(def_doc, corpus)
    backend = backend if backend is not None else make_backend(cfg, corpus, def_doc)

    full_fp = config_fingerprint(cfg)
    fp = full_fp[:12]
    outdir = cfg.resolve(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    counters = dict.fromkeys(COUNTER_KEYS, 0)
    run_f1s: list[float] = []
    run_reports: list[EvalReport] = []
    run_files: list[str] = []
    run_exemplars: list[list[str]] = []

    # With a fixed eval sample the exemplars come from its complement instead,
    # keeping the per-run disjointness guarantee.
    fixed_eval: list[LabeledExample] | None = None
    exemplar_pool = corpus
    if cfg.fixed_eval_sample:
        fixed_eval = sample_eval(corpus, cfg.n_eval, cfg.seeds[0])
        eval_ids = {ex.source_id for ex in fixed_eval}
        exemplar_pool = Corpus(
            tuple(ex for ex in corpus.examples if ex.source_id not in eval_ids),
            corpus.type_inventory, corpus.name, corpus.repairs)

    for r, seed in enumerate(cfg.seeds):
        exemplars = sample_exemplars(exemplar_pool, cfg.prompt.k, seed) if cfg.prompt.fs_on else []
        run_exemplars.append([ex.source_id for ex in exemplars])
        if fixed_eval is not None:
            eval_examples = fixed_eval
        else:
            eval_examples = sample_eval(corpus, cfg.n_eval, seed, exclude=exemplars)

        prompts = [render_prompt(cfg.prompt, def_doc, exemplars, ex) for ex in eval_examples]
        reqs = [CompletionRequest(prompt=p.text, model_id=cfg.model_id,
                                  max_output_tokens=cfg.max_output_tokens,
                                  stop_sequences=cfg.stop_sequences)
                for p in prompts]
        results = backend.complete_batch(reqs, max_in_flight=cfg.max_in_flight)
        for res in results:
            if isinstance(res, BackendError):
                raise res  # a partially completed sample would bias the score

        records = []
        preds_per: list = []
        golds_per: list = []
        for ex, prompt, res in zip(eval_examples, prompts, results):
            empty = False
            try:
                report = parse_completion(res.text)
            except EmptyParse as err:
                report = err.report
                empty = True
                counters["empty_parse"] += 1
            pairs, dropped = extract_predictions(report, corpus.type_inventory)
            grounding = ground(pairs, ex.tokens)
            counters["skipped_lines"] += report.skipped_lines
            counters["repaired_lines"] += report.repaired_lines
            counters["unmatched"] += len(grounding.unmatched)
            counters["type_drops"] += dropped
            preds_per.append(grounding.grounded)
            golds_per.append(ex.gold)
            prompt_sha = hashlib.sha256(prompt.text.encode("utf-8")).hexdigest()
            records.append(_example_record(ex, prompt_sha, res.text, report,
                                           empty, pairs, dropped, grounding))

        run_report = micro_f1(preds_per, golds_per)
        run_reports.append(run_report)
        run_f1s.append(run_report.f1 * 100.0)

        run_path = outdir / f"run{r}_{fp}.jsonl"
        with open(run_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        run_files.append(run_path.name)

    agg = aggregate(run_f1s)
    summary = {
        "fingerprint": full_fp,
        "dataset": corpus.name,
        "config": json.loads(json.dumps(
            {k: v for k, v in dataclasses.asdict(cfg).items()
             if k not in ("base_dir", "output_dir")}, default=list)),
        "n_runs": cfg.n_runs,
        "seeds": list(cfg.seeds),
        "run_f1": list(agg.run_f1s),
        "mean": agg.mean,
        "std": agg.std,
        "formatted": agg.formatted(),
        "counters": counters,
        "runs": [rep.as_dict() for rep in run_reports],
        "run_files": run_files,
        "run_exemplars": run_exemplars,
    }
    summary_path = outdir / f"summary_{fp}.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n",
                            encoding="utf-8")
    return ResultRow(fingerprint=full_fp, dataset=corpus.name, aggregate=agg,
                     counters=counters, wall_time_s=time.monotonic() - t0,
                     summary_path=str(summary_path))


def fractional_ranks(scores: Sequence[float], higher_is_better: bool = True) -> list[float]:
    """Rank 1 = best; tied scores share the mean of their positions."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: -scores[i] if higher_is_better else scores[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = shared
        i = j + 1
    return ranks


@dataclass(frozen=True)
class AblationMatrix:
    """F1 per (flags, dataset) cell plus cross-dataset average ranks."""

    rows: dict
    avg_rank: dict
    datasets: tuple[str, ...]

    def table(self) -> str:
        def mark(b: bool) -> str:
            return "+" if b else "-"

        header = ["Def", "FS", "CoT", "Cand"] + list(self.datasets) + ["AvgRank"]
        widths = [max(len(h), 7) for h in header]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        for flags in ABLATION_ROWS:
            cells = [mark(b) for b in flags]
            cells += [f"{self.rows[flags][ds].aggregate.mean:.2f}" for ds in self.datasets]
            cells.append(f"{self.avg_rank[flags]:.2f}")
            lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines)


def run_ablation(base_cfg: RunConfig, datasets: Sequence[tuple[str, str]],
                 ) -> AblationMatrix:
    """Run the seven-row flag ablation over the given (manifest, definition)
    dataset pairs and compute tie-averaged cross-dataset ranks."""
    rows: dict = {flags: {} for flags in ABLATION_ROWS}
    names: list[str] = []
    for manifest, definition in datasets:
        name = None
        for flags in ABLATION_ROWS:
            prompt = dataclasses.replace(base_cfg.prompt, def_on=flags[0], fs_on=flags[1],
                                         cot_on=flags[2], cand_on=flags[3])
            cfg = dataclasses.replace(base_cfg, manifest_path=manifest,
                                      definition_path=definition, prompt=prompt)
            row = run_experiment(cfg)
            rows[flags][row.dataset] = row
            name = row.dataset
        names.append(name)

    avg_rank: dict = {}
    per_dataset_ranks: dict[str, list[float]] = {}
    for ds in names:
        scores = [rows[flags][ds].aggregate.mean for flags in ABLATION_ROWS]
        per_dataset_ranks[ds] = fractional_ranks(scores)
    for idx, flags in enumerate(ABLATION_ROWS):
        avg_rank[flags] = sum(per_dataset_ranks[ds][idx] for ds in names) / len(names)

    matrix = AblationMatrix(rows=rows, avg_rank=avg_rank, datasets=tuple(names))
    outdir = base_cfg.resolve(base_cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    fp = config_fingerprint(base_cfg)[:12]
    (outdir / f"ablation_{fp}.txt").write_text(matrix.table() + "\n", encoding="utf-8")
    payload = {
        "datasets": names,
        "rows": [{
            "flags": {"def": f[0], "fs": f[1], "cot": f[2], "cand": f[3]},
            "f1": {ds: rows[f][ds].aggregate.mean for ds in names},
            "std": {ds: rows[f][ds].aggregate.std for ds in names},
            "fingerprint": {ds: rows[f][ds].fingerprint for ds in names},
            "avg_rank": avg_rank[f],
        } for f in ABLATION_ROWS],
    }
    (outdir / f"ablation_{fp}.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return matrix


def rescore_run(jsonl_path) -> EvalReport:
    """Recompute the EvalReport of a persisted run file from its records."""
    preds_per = []
    golds_per = []
    with open(jsonl_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            preds_per.append([EntitySpan(s, e, t)
                              for s, e, t, _, _ in rec["grounding"]["grounded"]])
            golds_per.append([EntitySpan(s, e, t) for s, e, t in rec["gold"]])
    return micro_f1(preds_per, golds_per)
