"""Command-line front end: configuration files in, CSV/JSON artifacts out.

Subcommands: ``run`` (one engine ensemble), ``scan`` (grids over protocol
shift or coupling/period), ``check`` (post-hoc convergence report),
``fit-bcf`` (cached correlation-function fits), ``oracle`` (discretized-bath
cross-check).  Every run directory is reproducible from its manifest alone.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__, bath, oracle as oracle_mod, otto
from .propagator import SolverConfig

CSV_SCHEMA_VERSION = 1


class ConfigError(click.ClickException):
    exit_code = 2


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _require(cfg: dict, section: str, key: str):
    try:
        return cfg[section][key]
    except KeyError:
        raise ConfigError(f"missing config field [{section}] {key}")


def parse_engine(cfg: dict) -> otto.QubitEngineSpec:
    e = cfg.get("engine", {})
    try:
        return otto.QubitEngineSpec(
            Omega=float(e.get("omega", 1.0)),
            s_x=float(e.get("s_x", 0.0)),
            delta=float(e.get("delta", 0.7)),
            omega_c=float(e.get("omega_c", 1.0)),
            T_cold=float(e.get("T_cold", 0.5)),
            T_hot=float(e.get("T_hot", 4.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [engine] section: {exc}")


def parse_protocol(cfg: dict) -> otto.Protocol:
    p = cfg.get("protocol", {})
    theta = float(p.get("theta", 60.0))
    tau_tr = float(p.get("tau_tr_frac", 0.06)) * theta
    num_cycles = int(p.get("num_cycles", 3))
    try:
        base = otto.make_olc(theta, tau_tr, num_cycles=num_cycles)
        shift = float(p.get("shift_frac", 0.0)) * theta
        slow = bool(p.get("slow", False))
        which = str(p.get("shift_which", "both"))
        if shift != 0.0 or slow:
            return otto.make_shifted(base, shift, which=which, slow=slow)
        return base
    except (otto.ProtocolError, ValueError) as exc:
        raise ConfigError(f"invalid [protocol] section: {exc}")


def parse_ensemble(cfg: dict, workers=None, seed=None) -> otto.EnsembleConfig:
    en = cfg.get("ensemble", {})
    so = cfg.get("solver", {})
    solver = SolverConfig(
        rtol=float(so.get("rtol", 1e-6)),
        atol=float(so.get("atol", 1e-8)),
        max_step=float(so.get("max_step", math.inf)),
    )
    try:
        return otto.EnsembleConfig(
            num_samples=int(en.get("num_samples", 500)),
            k_max=int(en.get("k_max", 4)),
            bcf_terms=int(en.get("bcf_terms", 5)),
            solver=solver,
            master_seed=int(seed if seed is not None else en.get("master_seed", 0)),
            workers=workers,
            sample_dt=float(en.get("sample_dt", 0.1)),
            process_dt=float(en.get("process_dt", 0.02)),
            method=str(en.get("method", "nonlinear")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [ensemble] section: {exc}")


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def export_energy_csv(path: Path, res: otto.EngineResult):
    es = res.energy
    header = ["t"]
    cols = [es.times]
    for name, q in [
        ("H_S", es.system),
        ("P_S", es.power_system),
        ("P_total", es.power_total),
        ("dH_total", es.total_delta),
    ]:
        header += [name, name + "_se"]
        cols += [q.value, q.stderr]
    for n, tag in enumerate(("hot", "cold")):
        for name, q in [
            ("H_I", es.interaction),
            ("J", es.flow),
            ("dH_B", es.bath_delta),
            ("P_I", es.power_interaction),
        ]:
            header += [f"{name}_{tag}", f"{name}_{tag}_se"]
            cols += [q.value[:, n], q.stderr[:, n]]
    _write_csv(path, header, zip(*[np.asarray(c) for c in cols]))


def export_bloch_csv(path: Path, res: otto.EngineResult):
    mean, se = res.bloch()
    header = ["t", "r_x", "r_x_se", "r_y", "r_y_se", "r_z", "r_z_se"]
    t = res.accumulator.times
    rows = zip(t, mean[:, 0], se[:, 0], mean[:, 1], se[:, 1], mean[:, 2], se[:, 2])
    _write_csv(path, header, rows)


def export_work_diagrams(outdir: Path, res: otto.EngineResult):
    for which in ("f", "h_hot", "h_cold"):
        X, Y, area = otto.work_diagram(res, which)
        _write_csv(
            outdir / f"work_diagram_{which}.csv",
            [which, "conjugate", f"# area={area:.8e}"],
            zip(X, Y, [""] * len(X)),
        )


def metrics_dict(m: otto.CycleMetrics) -> dict:
    return {
        "work": m.work,
        "work_se": m.work_se,
        "power": m.power,
        "power_se": m.power_se,
        "efficiency": m.efficiency,
        "efficiency_se": m.efficiency_se,
        "work_system": m.work_system,
        "work_interaction_hot": m.work_interaction[0],
        "work_interaction_cold": m.work_interaction[1],
        "bath_delta_hot": m.bath_delta[0],
        "bath_delta_hot_se": m.bath_delta_se[0],
        "bath_delta_cold": m.bath_delta[1],
        "closure_system": m.closure_system,
        "closure_system_se": m.closure_system_se,
        "eta_otto": m.eta_otto,
        "eta_carnot": m.eta_carnot,
        "bounds_ok": m.bounds_ok,
        "closure_ok": m.closure_ok,
        "refrigerator": m.refrigerator,
        "limit_cycle_index": m.limit_cycle_index,
        "num_samples": m.num_samples,
        "aborted": m.aborted,
    }


def write_manifest(outdir: Path, cfg: dict, res: otto.EngineResult | None, extra=None):
    doc = {
        "version": __version__,
        "csv_schema": CSV_SCHEMA_VERSION,
        "config": cfg,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if res is not None:
        doc.update(
            {
                "basis_size": res.basis_size,
                "fit_residuals": list(res.fit_residuals),
                "master_seed": res.cfg.master_seed,
                "num_samples": res.cfg.num_samples,
                "aborted": res.metrics.aborted,
                "wall_time_s": res.wall_time,
            }
        )
    if extra:
        doc.update(extra)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2)


@click.group()
def main():
    """Hierarchy-of-pure-states engine simulator."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "outdir", default=None, type=str)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--dry-run", is_flag=True)
def run_cmd(config_path, outdir, seed, workers, dry_run):
    """Run one engine ensemble and write energy/Bloch/metrics artifacts."""
    cfg = _load_config(config_path)
    spec = parse_engine(cfg)
    proto = parse_protocol(cfg)
    ens = parse_ensemble(cfg, workers=workers, seed=seed)
    outdir = Path(outdir or cfg.get("output", {}).get("directory", "run_out"))
    from .hierarchy import basis_size

    size = basis_size((ens.bcf_terms, ens.bcf_terms), ens.k_max)
    if dry_run:
        click.echo(json.dumps({
            "engine": asdict(spec),
            "ensemble": {
                "num_samples": ens.num_samples,
                "k_max": ens.k_max,
                "bcf_terms": ens.bcf_terms,
                "master_seed": ens.master_seed,
            },
            "protocol": {"theta": proto.Theta, "tau_tr": proto.tau_tr,
                         "num_cycles": proto.num_cycles, "shifts": list(proto.shifts)},
            "basis_size": size,
            "output": str(outdir),
        }, indent=2))
        return
    outdir.mkdir(parents=True, exist_ok=True)
    res = otto.run_engine(spec, proto, ens)
    export_energy_csv(outdir / "energy.csv", res)
    export_bloch_csv(outdir / "bloch.csv", res)
    export_work_diagrams(outdir, res)
    with open(outdir / "metrics.json", "w") as fh:
        json.dump(metrics_dict(res.metrics), fh, indent=2)
    write_manifest(outdir, cfg, res)
    m = res.metrics
    click.echo(
        f"power={m.power:.4e}  efficiency={m.efficiency:.4f}  "
        f"dHB_hot={m.bath_delta[0]:.4f}  samples={m.num_samples}  aborts={m.aborted}"
    )


@main.command("scan")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "outdir", default=None, type=str)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--resume", is_flag=True)
def scan_cmd(config_path, outdir, seed, workers, resume):
    """Run the engine over a parameter grid; partial failures are recorded."""
    cfg = _load_config(config_path)
    sc = cfg.get("scan", {})
    axis = sc.get("axis")
    if axis not in ("shift", "delta_theta"):
        raise ConfigError("scan.axis must be 'shift' or 'delta_theta'")
    values = sc.get("values")
    if not values:
        raise ConfigError("scan.values must be a non-empty list")
    spec = parse_engine(cfg)
    ens = parse_ensemble(cfg, workers=workers, seed=seed)
    outdir = Path(outdir or cfg.get("output", {}).get("directory", "scan_out"))
    outdir.mkdir(parents=True, exist_ok=True)

    points = []
    p = cfg.get("protocol", {})
    theta0 = float(p.get("theta", 60.0))
    tau_frac = float(p.get("tau_tr_frac", 0.06))
    ncyc = int(p.get("num_cycles", 3))
    if axis == "shift":
        which = str(sc.get("shift_which", "both"))
        slow = bool(sc.get("slow", False))
        base = otto.make_olc(theta0, tau_frac * theta0, num_cycles=ncyc)
        for v in values:
            proto = otto.make_shifted(base, float(v) * theta0, which=which, slow=slow)
            points.append(({"tau_frac": float(v)}, spec, proto))
    else:
        for pair in values:
            d, th = float(pair[0]), float(pair[1])
            s = replace(spec, delta=d)
            proto = otto.make_olc(th, tau_frac * th, num_cycles=ncyc)
            points.append(({"delta": d, "theta": th}, s, proto))

    done = {}
    table_path = outdir / "scan.csv"
    if resume and table_path.exists():
        with open(table_path) as fh:
            for row in csv.DictReader(fh):
                done[row["label"]] = row

    rows = []
    results_json = []
    for label, s, proto in points:
        key = json.dumps(label, sort_keys=True)
        if key in done:
            rows.append(list(done[key].values()))
            results_json.append({"label": label, "resumed": True})
            continue
        out = otto.scan([(label, s, proto)], ens)[0]
        if out.metrics is None:
            rows.append([key] + ["nan"] * 8 + [out.error])
            results_json.append({"label": label, "error": out.error})
            continue
        m = out.metrics
        rows.append(
            [key, m.power, m.power_se, m.efficiency, m.efficiency_se,
             m.work_system / proto.Theta,
             m.work_interaction[0] / proto.Theta,
             m.work_interaction[1] / proto.Theta, m.bath_delta[0], ""]
        )
        results_json.append({"label": label, "metrics": metrics_dict(m)})
        _write_csv(
            table_path,
            ["label", "P_bar", "P_bar_se", "eta", "eta_se", "P_S",
             "P_I_hot", "P_I_cold", "dHB_hot", "error"],
            rows,
        )
    with open(outdir / "scan.json", "w") as fh:
        json.dump(results_json, fh, indent=2)
    write_manifest(outdir, cfg, None, extra={"points": len(points)})
    click.echo(f"scan finished: {len(points)} points -> {table_path}")


@main.command("check")
@click.option("--run-dir", "run_dir", required=True, type=str)
def check_cmd(run_dir):
    """Convergence report for a completed run directory."""
    d = Path(run_dir)
    for needed in ("energy.csv", "metrics.json", "manifest.json"):
        if not (d / needed).exists():
            raise ConfigError(f"missing artifact {needed} in {run_dir}")
    with open(d / "metrics.json") as fh:
        metrics = json.load(fh)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    data = {}
    with open(d / "energy.csv") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    cols = {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    t = cols["t"]
    p_tot = cols["P_total"]
    dH = cols["dH_total"]
    theta = manifest["config"].get("protocol", {}).get("theta", 60.0)
    ncyc = manifest["config"].get("protocol", {}).get("num_cycles", 3)

    def residual(sel):
        work = np.trapezoid(p_tot[sel], t[sel])
        drop = dH[sel][-1] - dH[sel][0]
        return abs(work + drop) / max(abs(work), abs(drop), 1e-12)

    full = residual(np.ones_like(t, dtype=bool))
    lc = residual((t >= (ncyc - 1) * theta - 1e-9))
    checks = [
        ("energy_balance_full", full, full < 0.02),
        ("energy_balance_limit_cycle", lc, lc < 0.01),
        (
            "limit_cycle_closure",
            abs(metrics["closure_system"]),
            abs(metrics["closure_system"]) <= 3 * metrics["closure_system_se"] + 1e-9,
        ),
        (
            "efficiency_bounds",
            metrics["efficiency"],
            metrics["efficiency"] < metrics["eta_otto"] < metrics["eta_carnot"],
        ),
        (
            "abort_rate",
            metrics["aborted"] / max(metrics["num_samples"], 1),
            metrics["aborted"] <= 1e-3 * metrics["num_samples"],
        ),
    ]
    # hierarchy-depth companions, if present next to the run
    for side in ("kplus", "kminus"):
        comp = d.parent / f"{d.name}_{side}" / "metrics.json"
        if comp.exists():
            with open(comp) as fh:
                other = json.load(fh)
            delta = abs(other["power"] - metrics["power"]) / max(
                abs(metrics["power"]), 1e-12
            )
            checks.append((f"depth_delta_{side}", delta, delta < 1e-1))
    ok = True
    for name, value, passed in checks:
        ok &= bool(passed)
        click.echo(f"{'PASS' if passed else 'FAIL'}  {name} = {value:.4g}")
    if not ok:
        sys.exit(1)


@main.command("fit-bcf")
@click.option("--omega-c", default=1.0, type=float)
@click.option("--eta-tilde", default=1.0, type=float)
@click.option("--terms", default=5, type=int)
@click.option("--t-max", default=60.0, type=float)
@click.option("--out", "outpath", default=None, type=str)
def fit_bcf_cmd(omega_c, eta_tilde, terms, t_max, outpath):
    """Fit the Ohmic correlation function and cache the result as JSON."""
    sd = bath.OhmicSpectralDensity(eta_tilde, omega_c)
    fit = bath.fit_ohmic_bcf(sd, terms, t_max)
    doc = fit.to_json(sd=sd)
    if outpath:
        Path(outpath).write_text(doc)
        click.echo(f"residual={fit.fit_residual:.3e} -> {outpath}")
    else:
        click.echo(doc)


@main.command("oracle")
@click.option("--delta", default=0.35, type=float)
@click.option("--modes", default=4, type=int)
@click.option("--omega-max", default=5.0, type=float)
@click.option("--horizon", default=5.0, type=float)
@click.option("--samples", default=200, type=int)
@click.option("--out", "outpath", default=None, type=str)
def oracle_cmd(delta, modes, omega_max, horizon, samples, outpath):
    """Exact discretized-bath reference series (tagged 'oracle')."""
    eta_c, _ = bath.calibrate_delta(delta, 2.0, 0.25, 1.0)
    sd = bath.OhmicSpectralDensity(eta_c, 1.0)
    disc = oracle_mod.discretize(sd, modes, omega_max, fock_cutoffs=10)
    compiled = otto.build_compiled(
        otto.QubitEngineSpec(delta=delta),
        otto.make_olc(60.0, 3.6),
    )
    # static compressed Hamiltonian with the coupling held on
    from .propagator import CompiledSystem, ModulationTable

    cs = CompiledSystem(
        dim=2,
        H_static=compiled.H_static + compiled.H_mats[0],
        H_mod_idx=np.zeros(0, dtype=np.int64),
        H_mats=np.zeros((0, 2, 2)),
        L_mod_idx=np.array([-1], dtype=np.int64),
        L_mats=np.array([otto.SIGMA_X / 2.0]),
        mods=[],
    )
    ts = np.linspace(0.0, horizon, 51)
    res = oracle_mod.exact_propagate(
        cs, [disc], [bath.ThermalParameters(2.0)], horizon, ts,
        num_thermal_samples=samples,
    )
    rows = zip(
        ts,
        res.system_energy,
        res.interaction[:, 0],
        res.bath_delta[:, 0],
        res.bath_delta_se[:, 0],
    )
    header = ["t", "H_S_oracle", "H_I_oracle", "dH_B_oracle", "dH_B_oracle_se"]
    out = Path(outpath or "oracle.csv")
    _write_csv(out, header, rows)
    click.echo(f"oracle series ({res.num_samples} thermal samples) -> {out}")


if __name__ == "__main__":
    main()
