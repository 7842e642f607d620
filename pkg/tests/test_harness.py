import json

import numpy as np
import pytest

from apdmmo.harness import (
    RunConfig, allocate_budget, emit_surrogate_grid, resolve_settings, run_apdmmo, run_suite,
    suite_table,
)
from apdmmo.landscape_model import ModelConfig, Normalization, init_model

# a tiny pipeline: small network, one epoch, few descent starts
TINY = dict(model={"hidden_dim": 4, "depth": 1}, train={"epochs": 1},
            descent={"n_starts": 300, "steps": 20})


def tiny(problem="F2", **kw):
    return RunConfig(problem=problem, **{**TINY, **kw})


def test_allocate_budget_examples():
    assert allocate_budget(50000, 3 / 8) == (18750, 31250)
    assert allocate_budget(200000, 1 / 8) == (25000, 175000)
    assert allocate_budget(7, 0.5) == (3, 4)
    for r in (0.0, 1.0):
        with pytest.raises(ValueError):
            allocate_budget(100, r)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(variant="NOPE")
    with pytest.raises(ValueError):
        RunConfig(r=1.5)
    with pytest.raises(ValueError):
        RunConfig(accuracies=(1e-4, 1e-2))
    with pytest.raises(ValueError):
        RunConfig.from_dict({"epochs": 3})


def test_resolve_settings_layers():
    s = resolve_settings(RunConfig(), 2)
    assert s["model"] == {"hidden_dim": 32, "depth": 2, "block_kind": "NLA"}
    assert s["descent"]["n_starts"] == 100_000
    assert s["cma"]["popsize"] == 8
    s = resolve_settings(RunConfig(paper_scale=True, variant="S1", descent={"n_starts": 5}), 2)
    assert s["model"] == {"hidden_dim": 128, "depth": 1, "block_kind": "SEQ_NLA"}
    assert s["descent"]["n_starts"] == 5
    assert s["train"]["epochs"] == 400


@pytest.mark.parametrize("variant", ["FULL", "NO_PLS", "NO_FPD", "M1"])
def test_budget_ledger_balances(variant):
    rep = run_apdmmo(tiny("F4", variant=variant))
    led = rep.ledger
    assert led["fpd_fes"] == 0
    assert led["dataset_fes"] + led["pls_fes"] == led["total_fes"] == led["counter"]
    assert led["counter"] <= led["max_fes"] == 50000
    if variant == "NO_FPD":
        assert led["dataset_fes"] == 0 and led["pls_fes"] == 50000
    else:
        assert led["dataset_fes"] == 18750
    if variant == "NO_PLS":
        assert led["pls_fes"] == rep.archive_size
    if variant in ("FULL", "M1"):
        assert led["total_fes"] == 50000


def test_run_is_deterministic():
    a = run_apdmmo(tiny(seed=3))
    b = run_apdmmo(tiny(seed=3))
    assert a.deterministic_view() == b.deterministic_view()
    c = run_apdmmo(tiny(seed=4))
    assert c.deterministic_view() != a.deterministic_view()


def test_report_contents():
    rep = run_apdmmo(tiny())
    d = json.loads(rep.to_json())
    assert d["schema"] == "apdmmo.run_report/1"
    assert set(d["npf"]) == {"0.1", "0.01", "0.001", "0.0001", "1e-05"}
    for key, n in d["npf"].items():
        assert d["pr"][key] == n / rep.nkp
        assert d["sr"][key] == float(n == rep.nkp)
        assert len(d["optima"][key]) == n
    # a looser accuracy never finds fewer optima
    counts = [d["npf"][k] for k in ("0.1", "0.01", "0.001", "0.0001", "1e-05")]
    assert counts == sorted(counts, reverse=True)
    assert d["settings"]["package_version"]
    assert d["archive_size"] == len(d["archive"])


def test_problem_table_override(tmp_path):
    path = tmp_path / "table.ini"
    path.write_text("[F2]\nmax_fes = 2000\n")
    rep = run_apdmmo(tiny(problem_table=str(path)))
    assert rep.ledger["max_fes"] == 2000 == rep.ledger["counter"]
    assert rep.ledger["dataset_fes"] == 750


def test_suite_rows_and_files(tmp_path):
    rows, reports = run_suite([tiny("F1"), tiny("F2", variant="NO_PLS")], 2, tmp_path)
    assert len(rows) == 2 and len(reports) == 4
    assert [r.seed for r in reports] == [0, 1, 0, 1]
    assert len(list(tmp_path.glob("*.json"))) == 4
    for row, pair in zip(rows, (reports[:2], reports[2:])):
        npf = [r.npf["0.0001"] for r in pair]
        assert row["PR@0.0001"] == pytest.approx(sum(npf) / (2 * row["nkp"]))
    csv = suite_table(rows, "csv").splitlines()
    assert csv[0].startswith("problem,variant,r,runs,nkp,PR@0.1,SR@0.1")
    assert len(csv) == 3
    text = suite_table(rows)
    assert "F1" in text and "NO_PLS" in text
    with pytest.raises(ValueError):
        run_suite([])


def test_grid_of_constant_model(tmp_path):
    p = init_model(ModelConfig(2, 4, 1), 0)
    for name in p.arrays:
        if name != "block0.ln_g":
            p.arrays[name][...] = 0.0
    p.arrays["head.b"][...] = 0.5
    p.norm = Normalization(np.zeros(2), np.ones(2), y_mean=1.0, y_std=2.0)
    table = emit_surrogate_grid(p, [-1, -1], [1, 1], 101, tmp_path / "g.txt")
    assert table.shape == (101 * 101, 3)
    np.testing.assert_allclose(table[:, 2], -(1.0 + 2.0 * 0.5))
    assert np.loadtxt(tmp_path / "g.txt").shape == (10201, 3)
    one_d = emit_surrogate_grid(_one_d(), [0], [2], 101)
    assert one_d.shape == (101, 2)
    np.testing.assert_allclose(one_d[:, 0], np.linspace(0, 2, 101))


def _one_d():
    p = init_model(ModelConfig(1, 4, 1), 0)
    p.norm = Normalization.from_bounds([0], [2])
    return p


def test_grid_rejects_high_dimension():
    p = init_model(ModelConfig(3, 4, 1), 0)
    p.norm = Normalization.from_bounds([0] * 3, [1] * 3)
    with pytest.raises(ValueError):
        emit_surrogate_grid(p, [0] * 3, [1] * 3)
