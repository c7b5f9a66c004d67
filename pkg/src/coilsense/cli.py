"""Command-line front end: fitting, estimation, simulation, tracking
comparisons, load-perturbation runs, and report aggregation.

One JSON config drives everything; every block falls back to the
package defaults, and any invalid block is reported before a single
file is written.  All outputs are plot-ready CSV or JSON, written
atomically, and byte-identical for a fixed config and seed.

Exit codes: 0 success, 1 usage/config error, 2 data error,
3 non-convergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import inspect
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__, control, ident, model, observer, plant
from . import signal as sig

__all__ = ["main", "ConfigError", "load_config", "validate_config"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NOCONV = 3

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid run configuration."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the scripting
    # contract reserves 2 for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(doc: dict, path: str) -> None:
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Configuration

def default_config() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "out_dir": "out",
        "plant": {},
        "envelope": {},
        "filter": {"order": 3, "cutoff_hz": 10.0, "sample_rate_hz": 100.0},
        "observer": {},
        "controller": {},
        "scenarios": [],
        "paths": {},
    }


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be an object")
    unknown = set(doc) - set(cfg)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version}")
    cfg.update(doc)
    return cfg


def _build_envelope(cfg: dict) -> model.OperatingEnvelope:
    block = dict(cfg.get("envelope") or {})
    base = plant.default_envelope()
    fields = {k: getattr(base, k) for k in
              ("P_min", "P_max", "F_min", "F_max", "x_min", "x_max", "L_min", "L_max")}
    unknown = set(block) - set(fields)
    if unknown:
        raise ConfigError(f"envelope: unknown keys {sorted(unknown)}")
    fields.update(block)
    try:
        return model.OperatingEnvelope(**fields)
    except ValueError as exc:
        raise ConfigError(f"envelope: {exc}") from None


def _build_plant_config(cfg: dict) -> plant.PlantConfig:
    block = dict(cfg.get("plant") or {})
    kwargs = {"seed": int(cfg.get("seed", 0)), "envelope": _build_envelope(cfg)}
    if "dyn" in block:
        d = block.pop("dyn")
        try:
            kwargs["dyn"] = model.DynamicParams(k=d["k"], x0=d["x0"], c=d["c"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"plant.dyn: {exc}") from None
    if "ind" in block:
        p = block.pop("ind")
        try:
            kwargs["ind"] = model.InductanceParams(tuple(p["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"plant.ind: {exc}") from None
    if "hysteresis" in block:
        try:
            kwargs["hysteresis"] = tuple(
                plant.PlayElement(width=h["width"], weight=h["weight"])
                for h in block.pop("hysteresis"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"plant.hysteresis: {exc}") from None
    allowed = {"valve_tau", "noise_L", "noise_F", "sensor_rate_hz", "control_rate_hz"}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"plant: unknown keys {sorted(unknown)}")
    kwargs.update(block)
    try:
        return plant.default_plant_config(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from None


def _build_filter_spec(cfg: dict, args=None) -> sig.FilterSpec:
    block = dict(cfg.get("filter") or {})
    unknown = set(block) - {"order", "cutoff_hz", "sample_rate_hz"}
    if unknown:
        raise ConfigError(f"filter: unknown keys {sorted(unknown)}")
    if args is not None:
        if getattr(args, "order", None) is not None:
            block["order"] = args.order
        if getattr(args, "fc", None) is not None:
            block["cutoff_hz"] = args.fc
        if getattr(args, "fs", None) is not None:
            block["sample_rate_hz"] = args.fs
    try:
        return sig.FilterSpec(order=int(block.get("order", 3)),
                              cutoff_hz=float(block.get("cutoff_hz", 10.0)),
                              sample_rate_hz=float(block.get("sample_rate_hz", 100.0)))
    except ValueError as exc:
        raise ConfigError(f"filter: {exc}") from None


_OBSERVER_KEYS = {"grid_points", "refine_tol", "sigma_F", "sigma_Fdot",
                  "noise_L", "gradient_guard_ratio", "gradient_guard_inflation"}


def _observer_overrides(cfg: dict) -> dict:
    block = dict(cfg.get("observer") or {})
    unknown = set(block) - _OBSERVER_KEYS
    if unknown:
        raise ConfigError(f"observer: unknown keys {sorted(unknown)}")
    return block


def _gains_from(block, name) -> control.PidGains:
    try:
        return control.PidGains(kp=block.get("kp", 0.0), ki=block.get("ki", 0.0),
                                kd=block.get("kd", 0.0),
                                rate_hz=block.get("rate_hz", 20.0))
    except ValueError as exc:
        raise ConfigError(f"controller.{name}: {exc}") from None


def _build_setup(cfg: dict, pcfg: plant.PlantConfig) -> control.TrackingSetup:
    block = dict(cfg.get("controller") or {})
    allowed = {"force_gains", "disp_gains", "p_max", "integral_clamp_mpa",
               "load_nominal_scale", "sensor_noise_x"}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"controller: unknown keys {sorted(unknown)}")
    setup = control.TrackingSetup(plant_cfg=pcfg,
                                  observer_overrides=_observer_overrides(cfg),
                                  filter_spec=_build_filter_spec(cfg))
    if "force_gains" in block:
        setup.gains_force = _gains_from(block["force_gains"], "force_gains")
    if "disp_gains" in block:
        setup.gains_disp = _gains_from(block["disp_gains"], "disp_gains")
    setup.p_max = float(block.get("p_max", setup.p_max))
    setup.integral_clamp_mpa = float(block.get("integral_clamp_mpa", setup.integral_clamp_mpa))
    setup.sensor_noise_x = float(block.get("sensor_noise_x", setup.sensor_noise_x))
    setup.load_nominal_scale = float(block.get("load_nominal_scale", 1.0))
    return setup


_SCENARIO_FACTORIES = {
    "calibration_grid": plant.Scenario.calibration_grid,
    "isobaric_sweep": plant.Scenario.isobaric_sweep,
    "isometric_sweep": plant.Scenario.isometric_sweep,
    "cyclic_estimation": plant.Scenario.cyclic_estimation,
    "force_tracking": plant.Scenario.force_tracking,
    "displacement_tracking": plant.Scenario.displacement_tracking,
    "load_perturbation": plant.Scenario.load_perturbation,
}


def scenario_from_config(block: dict) -> plant.Scenario:
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigError(f"scenario blocks need a 'kind': {block}")
    kind = block["kind"]
    factory = _SCENARIO_FACTORIES.get(kind)
    if factory is None:
        raise ConfigError(f"unknown scenario kind '{kind}' "
                          f"(known: {sorted(_SCENARIO_FACTORIES)})")
    params = dict(block)
    params.pop("kind")
    sig_params = set(inspect.signature(factory).parameters)
    unknown = set(params) - sig_params
    if unknown:
        raise ConfigError(f"scenario '{kind}': unknown keys {sorted(unknown)}")
    try:
        return factory(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario '{kind}': {exc}") from None


def validate_config(cfg: dict) -> dict:
    """Build every block once; raises ConfigError before any side effects.

    Returns the resolved objects for reuse by the commands.
    """
    pcfg = _build_plant_config(cfg)
    resolved = {
        "plant": pcfg,
        "filter": _build_filter_spec(cfg),
        "observer": _observer_overrides(cfg),
        "setup": _build_setup(cfg, pcfg),
        "scenarios": [scenario_from_config(b) for b in (cfg.get("scenarios") or [])],
        "paths": dict(cfg.get("paths") or {}),
    }
    return resolved


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _provenance(cfg: dict) -> dict:
    return {"config_hash": _config_hash(cfg), "seed": cfg.get("seed", 0),
            "version": __version__}


def _out_dir(cfg: dict, args) -> str:
    out = args.out or cfg.get("out_dir") or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_series_csv(path: str, columns: dict) -> None:
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=float) for n in names]
    lines = [",".join(names)]
    for i in range(arrays[0].size):
        lines.append(",".join(format(float(a[i]), ".12g") for a in arrays))
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Commands

def _load_dataset(args, resolved) -> ident.Dataset:
    path = getattr(args, "data", None) or resolved["paths"].get("data")
    if not path:
        raise ConfigError("no dataset given ( --data or paths.data )")
    return ident.read_csv(path)


def cmd_fit(args, cfg, resolved) -> int:
    ds = _load_dataset(args, resolved)
    out = _out_dir(cfg, args)
    if args.model == "dynamic":
        report = ident.fit_dynamic(ds)
        model.save_dynamic_params(report.params, os.path.join(out, "dynamic_params.json"))
        report.to_json(os.path.join(out, "fit_dynamic_report.json"))
        print(f"fit dynamic: k={report.params.k:.6g} x0={report.params.x0:.6g} "
              f"c={report.params.c:.6g}  rmse={report.rmse:.6g} r2={report.r2:.6g}")
        return EXIT_OK
    init = ident.heuristic_inductance_init(ds)
    report = ident.fit_inductance(ds, init, seed=int(cfg.get("seed", 0)))
    model.save_inductance_params(report.params, os.path.join(out, "inductance_params.json"))
    report.to_json(os.path.join(out, "fit_inductance_report.json"))
    print(f"fit inductance: rmse={report.rmse:.6g} r2={report.r2:.6g} "
          f"iterations={report.iterations} converged={report.converged}")
    return EXIT_OK if report.converged else EXIT_NOCONV


def _nominal_models(resolved):
    paths = resolved["paths"]
    dyn = (model.load_dynamic_params(paths["dynamic_params"])
           if "dynamic_params" in paths else plant.reference_dynamic_params())
    ind_p = (model.load_inductance_params(paths["inductance_params"])
             if "inductance_params" in paths else plant.reference_inductance_params())
    return dyn, ind_p


def _reversal_stats(ds: ident.Dataset, err: np.ndarray, window_s: float = 0.25) -> dict:
    """Error split around motion reversals of the length channel."""
    signs = np.sign(np.diff(ds.x))
    idx = np.where(signs != 0)[0]
    rev = np.zeros(len(ds), dtype=bool)
    n_rev = 0
    if idx.size > 1:
        flips = idx[1:][signs[idx[1:]] != signs[idx[:-1]]]
        n_rev = int(flips.size)
        dt = float(np.median(np.diff(ds.t)))
        half = max(1, int(round(window_s / dt)))
        for i in flips:
            rev[max(0, i - half): i + half + 1] = True
    out = {"window_s": window_s, "n_reversals": n_rev}
    if rev.any() and (~rev).any():
        out["rmse_near_reversal"] = float(np.sqrt(np.mean(err[rev] ** 2)))
        out["rmse_elsewhere"] = float(np.sqrt(np.mean(err[~rev] ** 2)))
    return out


def cmd_estimate(args, cfg, resolved) -> int:
    ds = _load_dataset(args, resolved)
    out = _out_dir(cfg, args)
    dyn, ind_p = _nominal_models(resolved)
    fspec = _build_filter_spec(cfg, args)
    dt_data = float(np.median(np.diff(ds.t))) if len(ds) > 1 else 1.0 / fspec.sample_rate_hz
    env = _build_envelope(cfg)
    ocfg = observer.make_observer_config(ind_p, env, dt=dt_data,
                                         noise_L=_build_plant_config(cfg).noise_L,
                                         **resolved["observer"])
    est = observer.run_estimation(ds, ind_p, dyn, ocfg, filter_spec=fspec)
    ident.write_csv(ds, os.path.join(out, "estimates.csv"),
                    extra={"F_hat": est["F_hat"], "x_hat": est["x_hat"]})
    metrics: dict = {"provenance": _provenance(cfg)}
    if ds.F is not None:
        g = ident.goodness(est["F_hat"], ds.F)
        metrics["force"] = g.as_dict()
    else:
        metrics["force"] = "unavailable (no F column)"
    if ds.x is not None:
        g = ident.goodness(est["x_hat"], ds.x)
        metrics["displacement"] = g.as_dict()
        if ds.F is not None:
            metrics["force_reversal_windows"] = _reversal_stats(ds, est["F_hat"] - ds.F)
    else:
        metrics["displacement"] = "unavailable (no x column)"
    _dump_json(metrics, os.path.join(out, "estimate_metrics.json"))
    print(f"estimate: wrote {len(ds)} rows; force metrics "
          f"{'available' if ds.F is not None else 'unavailable'}")
    return EXIT_OK


def _simulate_one(scenario, pcfg, out):
    ds = plant.run_scenario(scenario, pcfg)
    path = os.path.join(out, f"{scenario.name}.csv")
    ident.write_csv(ds, path)
    return scenario.name, len(ds)


def cmd_simulate(args, cfg, resolved) -> int:
    out = _out_dir(cfg, args)
    pcfg = resolved["plant"]
    scenarios = [s for s in resolved["scenarios"]
                 if s.kind not in ("force_tracking", "displacement_tracking")]
    if getattr(args, "scenario", None):
        scenarios = [s for s in scenarios if s.name == args.scenario or s.kind == args.scenario]
    if not scenarios:
        raise ConfigError("no dataset scenarios selected (config 'scenarios' block)")
    jobs = max(1, args.jobs)
    if jobs == 1 or len(scenarios) == 1:
        done = [_simulate_one(s, pcfg, out) for s in scenarios]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(lambda s: _simulate_one(s, pcfg, out), scenarios))
    for name, n in done:
        print(f"simulate: {name}: {n} rows")
    return EXIT_OK


def _default_tracking_scenarios() -> list:
    out = [plant.Scenario.force_tracking(w, f)
           for w in ("sine", "triangle") for f in (0.2, 0.05)]
    out += [plant.Scenario.displacement_tracking(frequency_hz=f) for f in (0.05, 0.2)]
    return out


def _track_one(scenario, setup, out):
    results = control.compare_tracking(scenario, setup)
    for mode, res in results.items():
        _write_series_csv(os.path.join(out, f"{scenario.name}_{mode}.csv"),
                          {"t": res.t, "reference": res.reference, "truth": res.truth,
                           "estimate": res.estimate, "command": res.command})
    return scenario, results


def _table_rows(scenario, results) -> list:
    rows = []
    for mode in control.MODES:
        if mode not in results:
            continue
        r = results[mode]
        rows.append({
            "trajectory": scenario.name, "method": mode,
            "rmse": r.metrics.rmse, "mae": r.metrics.mae,
            "improvement_pct": r.improvement_pct,
        })
    return rows


def _format_table(rows) -> str:
    lines = [f"{'Trajectory':24s} {'Method':14s} {'RMSE':>10s} {'MAE':>10s} {'Imp.(%)':>8s}",
             "-" * 70]
    for row in rows:
        imp = "-" if row["improvement_pct"] is None else f"{row['improvement_pct']:.1f}"
        lines.append(f"{row['trajectory']:24s} {row['method']:14s} "
                     f"{row['rmse']:10.4f} {row['mae']:10.4f} {imp:>8s}")
    return "\n".join(lines) + "\n"


def cmd_track(args, cfg, resolved) -> int:
    out = _out_dir(cfg, args)
    setup = resolved["setup"]
    scenarios = [s for s in resolved["scenarios"]
                 if s.kind in ("force_tracking", "displacement_tracking")]
    if not scenarios:
        scenarios = _default_tracking_scenarios()
    if getattr(args, "scenario", None):
        scenarios = [s for s in scenarios if s.name == args.scenario]
        if not scenarios:
            raise ConfigError(f"no tracking scenario named '{args.scenario}'")
    setup = control.resolve_setup(setup)
    jobs = max(1, args.jobs)
    if jobs == 1 or len(scenarios) == 1:
        done = [_track_one(s, setup, out) for s in scenarios]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(lambda s: _track_one(s, setup, out), scenarios))
    rows = []
    for scenario, results in done:
        rows.extend(_table_rows(scenario, results))
    table = _format_table(rows)
    _atomic_write(os.path.join(out, "tracking_table.txt"), table)
    _dump_json({"rows": rows, "provenance": _provenance(cfg)},
               os.path.join(out, "tracking_metrics.json"))
    print(table, end="")
    return EXIT_OK


def cmd_perturb(args, cfg, resolved) -> int:
    out = _out_dir(cfg, args)
    setup = resolved["setup"]
    scenarios = [s for s in resolved["scenarios"] if s.kind == "load_perturbation"]
    scenario = scenarios[0] if scenarios else plant.Scenario.load_perturbation()
    res = control.run_perturbation(setup, scenario)
    _write_series_csv(os.path.join(out, "perturbation.csv"),
                      {"t": res.t, "reference": res.reference, "truth": res.truth,
                       "estimate": res.estimate, "command": res.command})
    summary = {
        "estimation": res.estimation,
        "length_rmse_m": res.meta["x_rmse"],
        "metrics_estimate_vs_truth": res.metrics.as_dict(),
        "provenance": _provenance(cfg),
    }
    _dump_json(summary, os.path.join(out, "perturb_summary.json"))
    e = res.estimation
    print(f"perturb: max|err|={e['max_abs_error']:.4f} N  rmse={e['rmse']:.4f} N  "
          f"drift={e['drift']:.5f} N")
    return EXIT_OK


_REPORT_FILES = ("estimate_metrics.json", "tracking_metrics.json",
                 "perturb_summary.json", "fit_dynamic_report.json",
                 "fit_inductance_report.json")


def cmd_report(args, cfg, resolved) -> int:
    out = _out_dir(cfg, args)
    sections = {}
    for name in _REPORT_FILES:
        path = os.path.join(out, name)
        if os.path.exists(path):
            with open(path) as fh:
                sections[name.rsplit(".", 1)[0]] = json.load(fh)
    doc = {"provenance": _provenance(cfg), "sections": sections}
    _dump_json(doc, os.path.join(out, "report.json"))
    lines = [f"coilsense report (version {__version__}, "
             f"config {doc['provenance']['config_hash']}, seed {doc['provenance']['seed']})"]
    for key in sorted(sections):
        lines.append(f"  - {key}")
    text = "\n".join(lines) + "\n"
    _atomic_write(os.path.join(out, "report.txt"), text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point

def _build_parser() -> _Parser:
    parser = _Parser(prog="coilsense",
                     description="Self-sensing actuator toolkit: fit, estimate, "
                                 "simulate, track, perturb, report.")
    parser.add_argument("--config", help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel scenarios")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="identify model parameters from a dataset CSV")
    p.add_argument("--model", choices=("dynamic", "inductance"), required=True)
    p.add_argument("--data", help="dataset CSV (t,P,L[,F][,x])")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="run the observer over a dataset CSV")
    p.add_argument("--data", help="dataset CSV (t,P,L[,F][,x])")
    p.add_argument("--fc", type=float, help="filter cutoff Hz (default 10)")
    p.add_argument("--fs", type=float, help="filter sample rate Hz (default 100)")
    p.add_argument("--order", type=int, help="filter order (default 3)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="generate plant datasets for config scenarios")
    p.add_argument("--scenario", help="only this scenario name or kind")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="three-mode tracking comparison")
    p.add_argument("--scenario", help="only this scenario name")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("perturb", help="load-perturbation robustness run")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("report", help="aggregate metric files into a report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        resolved = validate_config(cfg)
        return args.func(args, cfg, resolved)
    except (ConfigError, model.EnvelopeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ident.DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ident.NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV


if __name__ == "__main__":
    sys.exit(main())
