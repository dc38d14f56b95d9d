import json

from defner.cli import main

from conftest import FIXTURES

RUN_TOML = str(FIXTURES / "conll_style" / "run.toml")


def run_fixture(tmp_path, *extra):
    code = main(["run", "--config", RUN_TOML, "--output-dir", str(tmp_path), *extra])
    return code


def test_run_happy_path(tmp_path, capsys):
    assert run_fixture(tmp_path) == 0
    out = capsys.readouterr().out
    assert "micro-F1: 100.00 ± 0.00" in out
    summaries = list(tmp_path.glob("summary_*.json"))
    assert len(summaries) == 1
    assert len(list(tmp_path.glob("run*_*.jsonl"))) == 2


def test_run_dry_run_prints_prompt(tmp_path, capsys):
    assert run_fixture(tmp_path, "--dry-run") == 0
    out = capsys.readouterr().out
    assert "Sentence:" in out and "Tokens: [" in out and out.rstrip().endswith("Answer:")
    assert not list(tmp_path.glob("summary_*.json"))


def test_run_mock_backend_override(tmp_path, capsys):
    assert run_fixture(tmp_path, "--backend", "mock") == 0
    assert "100.00 ± 0.00" in capsys.readouterr().out


def test_invalid_flags_exit_1(capsys):
    assert main(["run", "--config"]) == 1
    assert main(["no-such-command"]) == 1
    assert main([]) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_missing_config_file_exit_1(capsys):
    assert main(["run", "--config", "/nonexistent/c.toml"]) == 1
    assert "config error" in capsys.readouterr().err


def test_remote_without_credential_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("DEFNER_MISSING_KEY", raising=False)
    cfg = tmp_path / "remote.toml"
    cfg.write_text(f"""
[dataset]
manifest = "{FIXTURES / 'conll_style' / 'manifest.toml'}"
definition = "{FIXTURES / 'conll_style' / 'definitions.txt'}"

[backend]
provider = "remote"
base_url = "http://127.0.0.1:9"
auth_env = "DEFNER_MISSING_KEY"

[run]
n_eval = 2
n_runs = 1
seeds = [0]
output_dir = "{tmp_path}"
""")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "backend error" in capsys.readouterr().err


def test_score_roundtrip(tmp_path, capsys):
    assert run_fixture(tmp_path) == 0
    capsys.readouterr()
    run_file = sorted(tmp_path.glob("run0_*.jsonl"))[0]
    summary = sorted(tmp_path.glob("summary_*.json"))[0]
    assert main(["score", str(run_file), "--summary", str(summary)]) == 0
    out = capsys.readouterr().out
    assert "matches summary run_f1[0]" in out
    report = json.loads(out.splitlines()[0])
    assert report["f1"] == 1.0


def test_score_detects_tampering(tmp_path, capsys):
    assert run_fixture(tmp_path) == 0
    summary_path = sorted(tmp_path.glob("summary_*.json"))[0]
    summary = json.loads(summary_path.read_text())
    summary["run_f1"][0] = 12.34
    summary_path.write_text(json.dumps(summary))
    run_file = sorted(tmp_path.glob("run0_*.jsonl"))[0]
    assert main(["score", str(run_file), "--summary", str(summary_path)]) == 1


def test_diff_export(tmp_path, capsys):
    assert run_fixture(tmp_path) == 0
    run_file = sorted(tmp_path.glob("run0_*.jsonl"))[0]
    out_file = tmp_path / "review.txt"
    assert main(["diff", str(run_file), "--out", str(out_file)]) == 0
    # gold echo run: no disagreements
    assert "0 disagreements" in capsys.readouterr().out
    assert out_file.exists()


def test_diff_export_with_disagreements(tmp_path, capsys):
    assert run_fixture(tmp_path) == 0
    run_file = sorted(tmp_path.glob("run0_*.jsonl"))[0]
    # corrupt one record's extraction so a disagreement appears
    lines = run_file.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["extracted"] = [["Nowhere", "LOC"]]
    lines[0] = json.dumps(rec)
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    out_file = tmp_path / "review.txt"
    assert main(["diff", str(tampered), "--out", str(out_file), "--n", "5", "--seed", "1"]) == 0
    assert "1 disagreements" in capsys.readouterr().out
    assert "Nowhere" in out_file.read_text()


def test_cache_inspect(capsys):
    cache = str(FIXTURES / "conll_style" / "replay.cache")
    assert main(["cache", "inspect", cache]) == 0
    out = capsys.readouterr().out
    assert "records: 40" in out and "fixture-echo" in out


def test_cache_prune(tmp_path, capsys):
    src = str(FIXTURES / "conll_style" / "replay.cache")
    dst = tmp_path / "pruned.cache"
    assert main(["cache", "prune", src, "--out", str(dst),
                 "--model-id", "fixture-echo"]) == 0
    assert "kept 40 of 40" in capsys.readouterr().out
    assert main(["cache", "prune", src, "--out", str(tmp_path / "none.cache"),
                 "--model-id", "other"]) == 0
    assert "kept 0 of 40" in capsys.readouterr().out


def test_cache_prune_requires_out(capsys):
    assert main(["cache", "prune", "whatever.cache"]) == 1


def test_ablate_cli(tmp_path, capsys):
    code = main(["ablate", "--config", str(FIXTURES / "ablation.toml"),
                 "--output-dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert len(lines) == 8  # header + 7 flag rows
    assert "conll-style" in lines[0] and "tech-style" in lines[0]
    assert list(tmp_path.glob("ablation_*.txt"))
