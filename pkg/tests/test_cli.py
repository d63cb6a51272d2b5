import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from atara_lab import cli
from atara_lab.config import SNAPSHOT, RunConfig

from conftest import tiny_model_config

TINY = {
    "rl": {
        "budget": 16 * 24 * 2,
        "ppo": {"actor_hidden": [32, 32], "critic_hidden": [32, 32]},
        "env": {"num_envs": 16, "horizon": 20},
    },
    "generation": {"image_size": 64, "targets_per_trajectory": 4},
    "idm": {"model": tiny_model_config().to_dict(), "train": {"batch_size": 4, "val_every": 2, "val_samples": 8}},
    "replay": {"episodes": 1, "steps_per_substep": 3},
}


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert _run("train-rl", "--config", cfg, "--seed", 7, "--out", root / "rl") == 0
    assert _run("gen-data", "--config", cfg, "--seed", 3, "--policy", root / "rl", "--steps", 100,
                "--out", root / "data") == 0
    assert _run("train-idm", "--config", cfg, "--data", root / "data", "--iterations", 4, "--out", root / "idm") == 0
    return root, cfg


def test_help_lists_every_stage(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for stage in ("train-rl", "gen-data", "train-idm", "eval", "replay", "plot-coverage", "report-ablation"):
        assert stage in text


def test_module_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "atara_lab.cli", "train-rl", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--budget" in res.stdout


def test_negative_steps_is_argument_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["gen-data", "--policy", str(tmp_path), "--steps", "-1", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_missing_chain_file_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"chains": {"left": str(tmp_path / "nope.yaml"), "right": str(tmp_path / "nope.yaml")}}))
    assert _run("train-rl", "--config", cfg, "--budget", 0, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert "chain file not found" in capsys.readouterr().err


def test_unknown_key_and_bad_yaml(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"rl": {"bugdet": 5}}))
    assert _run("train-rl", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    cfg.write_text("rl: [unclosed")
    assert _run("train-rl", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert _run("train-rl", "--config", tmp_path / "absent.yaml", "--out", tmp_path / "o") == cli.EXIT_CONFIG


def test_defaults_snapshot_roundtrip(tmp_path):
    cfg = RunConfig.load()
    assert cfg["rl"]["budget"] == 2_000_000
    assert cfg["generation"]["steps"] == 610_000
    assert cfg["rl"]["ppo"]["gamma"] == 0.98 and cfg["rl"]["ppo"]["clip"] == 0.2
    again = RunConfig.load(cfg.snapshot(tmp_path))
    assert again.data == cfg.data


def test_zero_budget_saves_random_policy(tmp_path):
    assert _run("train-rl", "--config", _tiny_cfg(tmp_path), "--budget", 0, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "policy_left.pt").exists() and (tmp_path / "o" / "policy_right.pt").exists()


def _tiny_cfg(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    return cfg


def test_train_rl_repeat_gives_identical_curves(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("train-rl", "--config", cfg, "--seed", 7, "--out", tmp_path / "rl") == 0
    for side in ("left", "right"):
        a = (root / "rl" / f"policy_{side}_curve.json").read_bytes()
        assert a == (tmp_path / "rl" / f"policy_{side}_curve.json").read_bytes()
    assert (root / "rl" / SNAPSHOT).exists()


def test_gen_data_is_deterministic(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    assert _run("gen-data", "--config", cfg, "--seed", 3, "--policy", root / "rl", "--steps", 100,
                "--out", tmp_path / "data") == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n_steps"] == 100
    a, b = root / "data", tmp_path / "data"
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    for p in sorted(a.glob("traj_*/*")):
        assert p.read_bytes() == (b / p.relative_to(a)).read_bytes()
    assert (b / SNAPSHOT).exists()


def test_gen_data_missing_policy(tmp_path):
    assert _run("gen-data", "--policy", tmp_path, "--steps", 5, "--out", tmp_path / "d") == cli.EXIT_CONFIG


def test_eval_oracle_is_perfect(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("eval", "--config", cfg, "--model", "oracle", "--data", root / "data", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["sample_accuracy"] == 100.0 and report["n_samples"] == 100


def test_eval_trained_model_writes_report(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("eval", "--config", cfg, "--model", root / "idm", "--data", root / "data", "--limit", 10,
                "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_samples"] == 10 and 0 <= report["sample_accuracy"] <= 100


def test_eval_missing_model_is_config_error(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("eval", "--model", tmp_path, "--data", root / "data", "--out", tmp_path) == cli.EXIT_CONFIG


def test_replay_oracle_and_bias(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("replay", "--config", cfg, "--model", "oracle", "--out", tmp_path / "a") == 0
    summary = json.loads((tmp_path / "a" / "replay.json").read_text())["summary"]
    assert summary["substep_success_rate"] == 100.0
    assert _run("replay", "--config", cfg, "--model", "oracle", "--bias", 0.1, "--episodes", tmp_path / "a" / "episodes",
                "--out", tmp_path / "b") == 0
    summary = json.loads((tmp_path / "b" / "replay.json").read_text())["summary"]
    assert summary["substep_success_rate"] == 0.0


def test_replay_resolution_mismatch(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    other = yaml.safe_load(cfg.read_text())
    other["generation"]["image_size"] = 48
    cfg48 = tmp_path / "c48.yaml"
    cfg48.write_text(yaml.safe_dump(other))
    assert _run("replay", "--config", cfg48, "--model", root / "idm", "--out", tmp_path / "r") == cli.EXIT_RESOLUTION
    assert "resolution" in capsys.readouterr().err


def test_plot_coverage_outputs(pipeline, tmp_path):
    root, cfg = pipeline
    assert _run("plot-coverage", "--data", root / "data", "--bins", 10, "--out", tmp_path) == 0
    data = json.loads((tmp_path / "coverage.json").read_text())
    assert np.array(data["counts"]).shape == (14, 10)
    assert np.all(np.array(data["counts"]).sum(1) == 100)
    assert (tmp_path / "coverage.png").stat().st_size > 0


def test_report_ablation(pipeline, tmp_path, capsys):
    root, cfg = pipeline
    paths = []
    for name in ("oracle", str(root / "idm")):
        out = tmp_path / name.replace("/", "_")
        assert _run("eval", "--config", cfg, "--model", name, "--data", root / "data", "--limit", 10, "--out", out) == 0
        paths.append(out / "report.json")
    argv = ["report-ablation", "--out", tmp_path / "abl",
            "--report", f"decoupled/dad={paths[0]}", "--report", f"coupled/mlp={paths[1]}"]
    assert _run(*argv) == 0
    table = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert table["accuracy"][1][0] == 100.0
    assert _run("report-ablation", "--out", tmp_path / "x", "--report", "garbage") == cli.EXIT_CONFIG
