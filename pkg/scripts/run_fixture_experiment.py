"""Run the shipped replay-cache experiment end to end and print the results.

Everything is served from fixtures/conll_style/replay.cache, so this works
offline and reproduces byte-identical summaries on every invocation.

Usage: python scripts/run_fixture_experiment.py [output_dir]
"""
import dataclasses
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from defner.harness import load_run_config, run_experiment


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else str(ROOT / "runs")
    cfg = load_run_config(ROOT / "fixtures" / "conll_style" / "run.toml")
    cfg = dataclasses.replace(cfg, output_dir=out)
    row = run_experiment(cfg)
    print(f"dataset:     {row.dataset}")
    print(f"fingerprint: {row.fingerprint[:12]}")
    print(f"per-run F1:  {list(row.aggregate.run_f1s)}")
    print(f"micro-F1:    {row.aggregate.formatted()}")
    print(f"counters:    {row.counters}")
    print(f"wall time:   {row.wall_time_s:.2f}s")
    print(f"summary:     {row.summary_path}")


if __name__ == "__main__":
    main()
