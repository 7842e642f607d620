import json

import numpy as np
import pytest

from apdmmo.cli import main

TINY = {"model": {"hidden_dim": 4, "depth": 1}, "train": {"epochs": 1},
        "descent": {"n_starts": 200, "steps": 10}}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, "r": 0.25, "seed": 7}))
    return path


def test_run_writes_report(tmp_path, config_file):
    out = tmp_path / "rep.json"
    assert main(["run", "--config", str(config_file), "--problem", "F2", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["problem"] == "F2"
    assert rep["seed"] == 7 and rep["config"]["r"] == 0.25
    assert rep["ledger"]["dataset_fes"] == 12500


def test_flags_override_config_file(tmp_path, config_file):
    out = tmp_path / "rep.json"
    argv = ["run", "--config", str(config_file), "--problem", "F2", "--seed", "2", "--r", "0.5",
            "--n-starts", "50", "--variant", "NO_PLS", "--out", str(out)]
    assert main(argv) == 0
    rep = json.loads(out.read_text())
    assert rep["seed"] == 2 and rep["variant"] == "NO_PLS"
    assert rep["ledger"]["dataset_fes"] == 25000
    assert rep["settings"]["descent"]["n_starts"] == 50
    assert rep["settings"]["descent"]["steps"] == 10  # kept from the file


def test_suite_and_ablate_tables(tmp_path, config_file, capsys):
    assert main(["suite", "--config", str(config_file), "--problem", "F1", "F2", "--runs", "2",
                 "--out", str(tmp_path / "s"), "--quiet"]) == 0
    text = capsys.readouterr().out
    assert "PR@0.0001" in text and "F1" in text and "F2" in text
    assert len(list((tmp_path / "s").glob("*.json"))) == 4
    assert (tmp_path / "s" / "summary.csv").read_text().count("\n") == 3

    assert main(["ablate", "--config", str(config_file), "--problem", "F2", "--quiet"]) == 0
    text = capsys.readouterr().out
    for v in ("FULL", "NO_FPD", "NO_PLS"):
        assert v in text


def test_ratio_sweep(config_file, capsys):
    assert main(["ratio-sweep", "--config", str(config_file), "--problem", "F2", "--quiet"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8
    assert [ln.split()[2] for ln in lines[1:]] == [f"{k / 8:.3f}" for k in range(1, 8)]


def test_grid(tmp_path, config_file):
    out = tmp_path / "grid.txt"
    assert main(["grid", "--config", str(config_file), "--problem", "F4", "--out", str(out),
                 "--resolution", "11"]) == 0
    assert np.loadtxt(out).shape == (121, 3)


@pytest.mark.parametrize("argv", [
    ["run", "--problem", "F99"],
    ["run", "--problem", "F2", "--r", "1.5"],
    ["run", "--problem", "F2", "--variant", "BOGUS"],
    ["suite", "--problem", "F2", "--runs", "0"],
    ["grid", "--problem", "F8"],
    ["run", "--config", "/nonexistent/cfg.json"],
])
def test_errors_exit_nonzero(argv, capsys):
    assert main(argv) != 0
    assert "apdmmo: error" in capsys.readouterr().err


def test_bad_config_content(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 5}))
    assert main(["run", "--config", str(bad)]) != 0
    bad.write_text("[1, 2]")
    assert main(["run", "--config", str(bad)]) != 0


def test_unknown_subcommand_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["explode"])
    assert info.value.code != 0
