import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from hops_engine.cli import main

SMALL_CONFIG = """
[engine]
delta = 0.7
T_cold = 0.5
T_hot = 4.0

[protocol]
theta = 60.0
tau_tr_frac = 0.06
num_cycles = 1

[ensemble]
num_samples = 4
k_max = 2
bcf_terms = 3
master_seed = 9
sample_dt = 0.5

[solver]
rtol = 1e-6
atol = 1e-8

[output]
directory = "{out}"
"""

SCAN_CONFIG = """
[engine]
delta = 0.7

[protocol]
theta = 60.0
tau_tr_frac = 0.06
num_cycles = 1

[ensemble]
num_samples = 3
k_max = 1
bcf_terms = 2
sample_dt = 1.0

[scan]
axis = "shift"
values = [0.0, 0.1]

[output]
directory = "{out}"
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    cfg = tmp / "run.toml"
    out = tmp / "out"
    cfg.write_text(SMALL_CONFIG.format(out=out))
    runner = CliRunner()
    result = runner.invoke(
        main, ["run", "--config", str(cfg), "--workers", "1"],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    return out


def test_run_writes_all_artifacts(run_dir):
    for name in ("energy.csv", "bloch.csv", "metrics.json", "manifest.json",
                 "work_diagram_f.csv"):
        assert (run_dir / name).exists()
    with open(run_dir / "metrics.json") as fh:
        metrics = json.load(fh)
    assert metrics["num_samples"] == 4
    assert metrics["power"] * 60.0 == pytest.approx(metrics["work"], rel=1e-9)
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["basis_size"] == 28  # C(2+6, 6)
    assert manifest["master_seed"] == 9
    assert manifest["config"]["ensemble"]["num_samples"] == 4


def test_energy_csv_schema(run_dir):
    with open(run_dir / "energy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert "P_total" in rows[0] and "dH_B_hot_se" in rows[0]
    t = [float(r["t"]) for r in rows]
    assert t[0] == 0.0 and t[-1] == pytest.approx(60.0)


def test_check_reports(run_dir):
    runner = CliRunner()
    result = runner.invoke(main, ["check", "--run-dir", str(run_dir)])
    # with 4 samples the energy balance check may legitimately fail; the
    # report itself must render every criterion
    assert "energy_balance_full" in result.output
    assert "efficiency_bounds" in result.output
    assert "abort_rate" in result.output


def test_dry_run_validates_without_compute(tmp_path):
    cfg = tmp_path / "run.toml"
    out = tmp_path / "never_created"
    cfg.write_text(SMALL_CONFIG.format(out=out))
    runner = CliRunner()
    result = runner.invoke(
        main, ["run", "--config", str(cfg), "--dry-run"], catch_exceptions=False
    )
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["basis_size"] == 28
    assert not out.exists()


def test_missing_field_exit_code(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[engine]\ndelta = -2.0\n")
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(cfg)])
    assert result.exit_code == 2
    assert "engine" in result.output


def test_missing_config_file(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--config", str(tmp_path / "nope.toml")])
    assert result.exit_code == 2


def test_scan_csv_and_resume(tmp_path):
    cfg = tmp_path / "scan.toml"
    out = tmp_path / "scan_out"
    cfg.write_text(SCAN_CONFIG.format(out=out))
    runner = CliRunner()
    result = runner.invoke(
        main, ["scan", "--config", str(cfg), "--workers", "1"],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    with open(out / "scan.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert set(rows[0]) >= {"label", "P_bar", "eta", "P_I_hot", "P_I_cold"}
    # resume skips completed points
    result = runner.invoke(
        main, ["scan", "--config", str(cfg), "--workers", "1", "--resume"],
        catch_exceptions=False,
    )
    assert result.exit_code == 0
    with open(out / "scan.json") as fh:
        doc = json.load(fh)
    assert all(p.get("resumed") for p in doc)


def test_scan_empty_grid_rejected(tmp_path):
    cfg = tmp_path / "scan.toml"
    cfg.write_text("[scan]\naxis = \"shift\"\nvalues = []\n")
    runner = CliRunner()
    result = runner.invoke(main, ["scan", "--config", str(cfg)])
    assert result.exit_code == 2


def test_fit_bcf_roundtrip(tmp_path):
    out = tmp_path / "fit.json"
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["fit-bcf", "--terms", "3", "--t-max", "20", "--out", str(out)],
        catch_exceptions=False,
    )
    assert result.exit_code == 0
    from hops_engine.bath import ExponentialBCF

    fit = ExponentialBCF.from_json(out.read_text())
    assert fit.num_terms == 3
    assert np.all(fit.W.real > 0)
