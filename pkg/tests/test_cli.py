import filecmp
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from tasktransfer.cli import main
from tasktransfer.config import ConfigError, RunConfig, load_config, parse_config_text

SMALL = """\
seed = 11
room_size = 3
k = 3
p = 3
n_adapt_steps = 1500
base_max_train_steps = 60000
base_epsilon_decay_steps = 20000
epsilon_decay_steps = 1500
min_steps_before_convergence = 2000
log_interval = 250
classifier_max_steps = 1500
classifier_runs = 2
grid_k = 3
grid_p = 3
grid_runs = 1
"""

STAGES = [["train-base"], ["sample"], ["build-dataset"], ["train-transfer"], ["report"], ["grid"]]


def run_all(out: Path, cfg: Path, parallel: int):
    for stage in STAGES:
        code = main(stage + ["--config", str(cfg), "--out", str(out), "--parallel", str(parallel)])
        assert code == 0, stage


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    run_all(root / "serial", cfg, 1)
    run_all(root / "parallel", cfg, 4)
    return root, cfg


def tree(path: Path):
    return sorted(p.relative_to(path) for p in path.rglob("*") if p.is_file())


def test_pipeline_artifacts_exist(runs):
    out = runs[0] / "serial"
    for name in ("config.txt", "manifest.json", "samples.csv", "curves.csv", "dataset.csv", "holdout.csv",
                 "model.ttm", "predictions.csv", "transfer_summary.json", "accuracy_grid.csv", "grid_summary.json",
                 "report/curves_verb.csv", "report/color.svg", "report/final_success.csv"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"]["sample"]["status"] == "complete"
    assert len(manifest["plan"]["alpha"]) == 3
    header = (out / "samples.csv").read_text().splitlines()[0]
    assert header.startswith("base_instruction,transfer_instruction")


def test_parallel_outputs_are_byte_identical(runs):
    root = runs[0]
    a, b = root / "serial", root / "parallel"
    assert tree(a) == tree(b)
    for rel in tree(a):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_overwrite_guard(runs, capsys):
    out = runs[0] / "serial"
    assert main(["train-base", "--config", str(runs[1]), "--out", str(out)]) == 2
    assert "--force" in capsys.readouterr().err


def test_resume_recomputes_only_missing_cells(runs, tmp_path, capsys):
    import shutil

    out = tmp_path / "run"
    shutil.copytree(runs[0] / "serial", out)
    before = (out / "samples.csv").read_bytes()
    cells = sorted((out / "cells").glob("*.json"))
    for c in cells[:2]:
        c.unlink()
    assert main(["sample", "--out", str(out)]) == 0
    assert f"computed 2 cells, reused {len(cells) - 2}" in capsys.readouterr().out
    assert (out / "samples.csv").read_bytes() == before


def test_missing_artifact_exit_code(tmp_path):
    assert main(["sample", "--out", str(tmp_path / "nothing")]) == 3
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 3


def test_malformed_config_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("room_size = 4\nroom_sise = 5\n")
    assert main(["train-base", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "room_sise" in capsys.readouterr().err
    bad.write_text("room_size = four\n")
    assert main(["train-base", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "room_size" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("seed = 3\nroom_size = 5\n")
    cfg = load_config(str(f), environ={"TASKTRANSFER_ROOM_SIZE": "6", "TASKTRANSFER_K": "4"}, overrides={"seed": 9})
    assert (cfg.seed, cfg.room_size, cfg.k) == (9, 6, 4)
    assert parse_config_text(RunConfig().to_text()) == {k: v for k, v in RunConfig().recorded().items()}
    with pytest.raises(ConfigError):
        RunConfig(room_size=2)


def test_select_prints_ranking(runs, capsys):
    out = runs[0] / "serial"
    assert main(["select", "goto the red ball", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    ranks = [int(line.split("\t")[0]) for line in lines]
    assert ranks == [1, 2, 3]
    wins = [int(line.split("\t")[2]) for line in lines]
    assert wins == sorted(wins, reverse=True)
    assert main(["select", "fly to the moon", "--out", str(out)]) == 2


def test_synthetic_transfer(tmp_path):
    out = tmp_path / "syn"
    assert main(["train-transfer", "--synthetic", "--out", str(out)]) == 0
    summary = json.loads((out / "transfer_summary.json").read_text())
    assert summary["mean"] >= 0.95


def test_render_command(capsys):
    assert main(["render", "goto the red ball", "--plan", "--seed", "2"]) == 0
    text = capsys.readouterr().out
    assert "#" in text and '"action"' in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tasktransfer", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
