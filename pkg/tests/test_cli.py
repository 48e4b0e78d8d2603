import json

import pytest

from edgecrl.cli import ENV_OUT, main, resolve_out
from edgecrl.harness import ExperimentConfig


@pytest.fixture
def config_path(tmp_path):
    cfg = ExperimentConfig(seed=5, traces={"generator": {"n_segments": 12}, "n_train": 2, "n_eval": 2},
                           compare={"policies": ["optimal", "crl", "periodic_profiling", "fixed"],
                                    "bandwidths": [0.4, 0.6, 0.8], "targets": [0.65]})
    d = cfg.to_dict()
    d["trainer"].update(horizon=32, batch_size=16, epochs=1, total_steps=64, branch_width=4, hidden=[8])
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(d))
    return p


def test_missing_config_is_usage_error(capsys):
    assert main(["train"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(capsys, config_path):
    assert main(["frobnicate"]) == 1
    assert main(["train", "--config", str(config_path), "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand():
    assert main([]) == 1


def test_runtime_error_exit_two(tmp_path):
    assert main(["evaluate", "--config", str(tmp_path / "missing.json")]) == 2


def test_full_cycle(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    args = ["--config", str(config_path), "--out", str(out)]
    assert main(["generate-trace", *args, "-n", "2"]) == 0
    assert main(["validate-trace", *sorted(str(p) for p in out.glob("eval_*.json"))]) == 0
    assert main(["train", *args]) == 0
    assert (out / "checkpoint.json").exists() and (out / "diagnostics.tsv").exists()
    assert main(["evaluate", *args, "--policy", "crl"]) == 0
    assert (out / "eval_crl.segments.tsv").exists()
    assert main(["compare", *args]) == 0
    lines = (out / "compare.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:5] == ["policy", "bandwidth", "target", "n_segments", "failure_rate"]
    assert len(lines) == 1 + 4 * 3


def test_validate_flags_corrupt_trace(tmp_path, config_path, capsys):
    out = tmp_path / "tr"
    assert main(["generate-trace", "--config", str(config_path), "--out", str(out), "-n", "1"]) == 0
    p = next(out.glob("*.json"))
    d = json.loads(p.read_text())
    d["segments"][0]["accuracy"][0][0][0] = 0.5  # anchor must be 1
    p.write_text(json.dumps(d))
    assert main(["validate-trace", str(p)]) == 2
    assert "anchor" in capsys.readouterr().out


def test_seed_flag_overrides(tmp_path, config_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate-trace", "--config", str(config_path), "--out", str(a), "-n", "1"]) == 0
    assert main(["generate-trace", "--config", str(config_path), "--out", str(b), "-n", "1",
                 "--seed", "6"]) == 0
    assert (a / "eval_0000.json").read_bytes() != (b / "eval_0000.json").read_bytes()


def test_out_dir_precedence(tmp_path, monkeypatch):
    cfg = ExperimentConfig(seed=1)
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert resolve_out(None, cfg) == tmp_path / "env"
    cfg.output_dir = str(tmp_path / "cfg")
    assert resolve_out(None, cfg) == tmp_path / "cfg"
    assert resolve_out(tmp_path / "flag", cfg) == tmp_path / "flag"
    monkeypatch.delenv(ENV_OUT)
    assert str(resolve_out(None, ExperimentConfig(seed=1))) == "runs"
