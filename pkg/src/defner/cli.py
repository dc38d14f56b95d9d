"""Batch CLI: run experiments, ablate, re-score stored runs, export diffs,
inspect caches.

Exit codes: 0 success, 1 configuration/usage error, 2 backend failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from pathlib import Path

from .backend import BackendError, CompletionCache, CompletionRequest
from .corpus import (InsufficientData, MalformedLine, UnknownType,
                     detokenize, load_manifest, sample_eval, sample_exemplars)
from .evaluation import entity_set_diff, sample_disagreements, write_disagreements
from .harness import (load_ablation_datasets, load_run_config, rescore_run,
                      run_ablation, run_experiment)
from .promptgen import ConfigMismatch, DefinitionDoc, render_prompt

CONFIG_ERRORS = (ConfigMismatch, InsufficientData, MalformedLine, UnknownType,
                 ValueError, KeyError, OSError)


def _load_overridden_config(args):
    cfg = load_run_config(args.config)
    if getattr(args, "backend", None):
        cfg = dataclasses.replace(cfg, provider=args.backend)
    if getattr(args, "output_dir", None):
        cfg = dataclasses.replace(cfg, output_dir=str(Path(args.output_dir).resolve()))
    return cfg


def cmd_run(args) -> int:
    cfg = _load_overridden_config(args)
    if args.dry_run:
        corpus = load_manifest(cfg.resolve(cfg.manifest_path))
        def_doc = DefinitionDoc.load(cfg.resolve(cfg.definition_path))
        exemplars = sample_exemplars(corpus, cfg.prompt.k, cfg.seeds[0]) if cfg.prompt.fs_on else []
        query = sample_eval(corpus, 1, cfg.seeds[0], exclude=exemplars)[0]
        print(render_prompt(cfg.prompt, def_doc, exemplars, query).text)
        return 0
    row = run_experiment(cfg)
    print(f"dataset: {row.dataset}")
    print(f"fingerprint: {row.fingerprint[:12]}")
    print(f"runs: {list(row.aggregate.run_f1s)}")
    print(f"micro-F1: {row.aggregate.formatted()}")
    print(f"counters: {json.dumps(row.counters, sort_keys=True)}")
    print(f"wall_time_s: {row.wall_time_s:.2f}")
    print(f"summary: {row.summary_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_overridden_config(args)
    datasets = load_ablation_datasets(args.config)
    matrix = run_ablation(cfg, datasets)
    print(matrix.table())
    return 0


def cmd_score(args) -> int:
    report = rescore_run(args.run_file)
    print(json.dumps(report.as_dict(), sort_keys=True))
    if args.summary:
        summary = json.loads(Path(args.summary).read_text(encoding="utf-8"))
        m = re.search(r"run(\d+)_", Path(args.run_file).name)
        if not m:
            print("cannot infer run index from file name", file=sys.stderr)
            return 1
        stored = summary["run_f1"][int(m.group(1))]
        recomputed = report.f1 * 100.0
        if abs(stored - recomputed) > 1e-9:
            print(f"MISMATCH: stored {stored} vs recomputed {recomputed}", file=sys.stderr)
            return 1
        print(f"matches summary run_f1[{m.group(1)}] = {stored}")
    return 0


def cmd_diff(args) -> int:
    preds, golds, ids, sentences = [], [], [], {}
    with open(args.run_file, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            preds.append([p for p, _ in rec["extracted"]])
            golds.append([detokenize(rec["tokens"][s:e]) for s, e, _ in rec["gold"]])
            ids.append(rec["source_id"])
            sentences[rec["source_id"]] = detokenize(rec["tokens"])
    diffs = entity_set_diff(preds, golds, ids)
    if args.n is not None:
        diffs = sample_disagreements(diffs, args.n, args.seed)
    write_disagreements(diffs, args.out, sentences=sentences)
    print(f"{len(diffs)} disagreements written to {args.out}")
    return 0


def cmd_cache(args) -> int:
    cache = CompletionCache(args.path)
    if args.action == "inspect":
        records = cache.records()
        print(f"path: {cache.path}")
        print(f"records: {len(records)}")
        size = cache.path.stat().st_size if cache.path.exists() else 0
        print(f"bytes: {size}")
        for rec in records[:args.limit]:
            print(f"  {rec['digest'][:16]}  model={rec['model_id']}  "
                  f"text_len={len(rec['text'])}")
        return 0
    # prune: copy (optionally filtered) records into a fresh cache
    out = CompletionCache(args.out)
    kept = 0
    for rec in cache.records():
        if args.model_id and rec["model_id"] != args.model_id:
            continue
        req = CompletionRequest(prompt=rec["prompt"], model_id=rec["model_id"],
                                temperature=rec["temperature"],
                                max_output_tokens=rec["max_output_tokens"],
                                stop_sequences=tuple(rec["stop_sequences"]))
        out.put(req, rec["text"])
        kept += 1
    print(f"kept {kept} of {len(cache)} records in {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="defner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--backend", choices=["remote", "replay", "mock"])
    p_run.add_argument("--output-dir")
    p_run.add_argument("--dry-run", action="store_true",
                       help="print the first rendered prompt and exit")
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="run the 7-row flag ablation matrix")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--backend", choices=["remote", "replay", "mock"])
    p_abl.add_argument("--output-dir")
    p_abl.set_defaults(func=cmd_ablate)

    p_score = sub.add_parser("score", help="re-score a persisted run JSONL file")
    p_score.add_argument("run_file")
    p_score.add_argument("--summary", help="summary JSON to verify against")
    p_score.set_defaults(func=cmd_score)

    p_diff = sub.add_parser("diff", help="export entity-set disagreements for review")
    p_diff.add_argument("run_file")
    p_diff.add_argument("--out", required=True)
    p_diff.add_argument("--n", type=int)
    p_diff.add_argument("--seed", type=int, default=0)
    p_diff.set_defaults(func=cmd_diff)

    p_cache = sub.add_parser("cache", help="inspect or prune a completion cache")
    p_cache.add_argument("action", choices=["inspect", "prune"])
    p_cache.add_argument("path")
    p_cache.add_argument("--out", help="target path for prune")
    p_cache.add_argument("--model-id", help="keep only this model's records on prune")
    p_cache.add_argument("--limit", type=int, default=10)
    p_cache.set_defaults(func=cmd_cache)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:  # bad flags -> 1, --help -> 0
        return 0 if err.code in (0, None) else 1
    if getattr(args, "command", None) == "cache" and args.action == "prune" and not args.out:
        print("error: prune requires --out", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except BackendError as err:
        print(f"backend error: {err}", file=sys.stderr)
        return 2
    except CONFIG_ERRORS as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
