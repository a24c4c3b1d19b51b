import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from deltaboot import cli, persist
from deltaboot.compare import read_table
from deltaboot.pipeline import OUT_ENV, STAGES

SMOKE = Path(__file__).parent.parent / "configs" / "smoke.json"


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(out), "--threads", "1"]) == 0
    return out


def test_run_emits_all_artifacts(smoke_run):
    cfg = json.loads(SMOKE.read_text())
    manifest = json.loads((smoke_run / "MANIFEST.json").read_text())
    assert manifest["complete"] and manifest["failed_stage"] is None
    assert manifest["stages"] == {s: "done" for s in STAGES}
    expected = ["config.json", "timing.json", "data/resamples.npy", "bootstrap/sigma_test.arr",
                "bootstrap/preds_test.arr", "compare/regressions.json", "sweep/sweep_K.json",
                "sweep/sweep_B.json", "delta/train_stats.json", "bootstrap/train_stats.json"]
    for name in expected:
        assert (smoke_run / name).is_file(), name
    for d in range(cfg["repetitions"]):
        assert (smoke_run / "delta" / "eigen" / f"rep{d:03d}.eig").is_file()
        for K in cfg["K_values"]:
            assert (smoke_run / "compare" / f"table_B{cfg['B']}_K{K}_d{d}.csv").is_file()
    assert len(list((smoke_run / "bootstrap" / "init").glob("*.params"))) == cfg["B"]
    svgs = sorted(p.name for p in (smoke_run / "plots").glob("*.svg"))
    assert "sweep_K.svg" in svgs and "sweep_B.svg" in svgs and any(s.startswith("scatter_") for s in svgs)
    assert set(manifest["files"]) >= set(expected)


def test_resolved_config_is_written(smoke_run):
    resolved = json.loads((smoke_run / "config.json").read_text())
    assert resolved["network"]["reg_rate"] == 0.01
    assert resolved["train"]["adam"] == [0.9, 0.999, 1e-8]


def test_tables_pair_sigmas(smoke_run):
    cfg = json.loads(SMOKE.read_text())
    table = read_table(smoke_run / "compare" / f"table_B4_K{max(cfg['K_values'])}_d0.csv")
    sb = persist.load_array(smoke_run / "bootstrap" / "sigma_test.arr")
    sd = persist.load_array(smoke_run / "delta" / "sigma_test_rep000.arr")[-1]
    assert len(table) == sb.size
    assert np.array_equal(table.sigma_boot, sb.ravel())
    assert np.array_equal(table.sigma_delta, sd.ravel())
    assert table.meta["K"] == max(cfg["K_values"]) and table.meta["d"] == 0


def test_timing_schema(smoke_run):
    t = json.loads((smoke_run / "timing.json").read_text())
    for method in ("bootstrap", "delta"):
        assert set(t["methods"][method]) == {"initial", "prediction_train", "prediction_test", "total"}
    assert t["bootstrap_over_delta_total"] > 0
    assert t["run_total"] >= sum(t["phases"].values()) - 1e-6


def test_stages_one_at_a_time_match_run(smoke_run, tmp_path):
    for stage in STAGES:
        assert cli.main([stage, "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
    for rel in ("compare/regressions.json", "sweep/sweep_K.json", "sweep/sweep_B.json"):
        assert (tmp_path / rel).read_bytes() == (smoke_run / rel).read_bytes()


def test_out_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["train", "--config", str(SMOKE)]) == 0
    assert (tmp_path / "envout" / "delta" / "train_stats.json").is_file()
    assert capsys.readouterr().out.strip() == str(tmp_path / "envout")


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"unexpected": true}')
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "unexpected" in capsys.readouterr().err


def test_stage_failure_keeps_partial_outputs(tmp_path, capsys):
    cfg = json.loads(SMOKE.read_text())
    cfg["K_values"] = [100000]
    cfg["B_values"] = [2]
    path = tmp_path / "big_k.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(path), "--out", str(out)]) == cli.EXIT_STAGE
    assert "delta" in capsys.readouterr().err
    manifest = json.loads((out / "MANIFEST.json").read_text())
    assert not manifest["complete"] and manifest["failed_stage"] == "delta"
    assert manifest["stages"]["bootstrap"] == "done"
    assert (out / "bootstrap" / "sigma_test.arr").is_file()


def test_seed_override_changes_results(smoke_run, tmp_path):
    assert cli.main(["train", "--config", str(SMOKE), "--out", str(tmp_path), "--seed", "5"]) == 0
    assert json.loads((tmp_path / "config.json").read_text())["base_seed"] == 5
    assert (tmp_path / "delta" / "nets" / "rep000.params").read_bytes() != \
        (smoke_run / "delta" / "nets" / "rep000.params").read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "deltaboot", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "bootstrap" in res.stdout
    res = subprocess.run([sys.executable, "-m", "deltaboot", "run"], capture_output=True, text=True)
    assert res.returncode != 0 and "--config" in res.stderr
