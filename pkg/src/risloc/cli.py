"""Command-line frontend: bounds tables, Monte Carlo sweeps, CSV output.

Subcommands
-----------
* ``bounds <config>``    -- PEB/CEB per SNR grid point.
* ``simulate <config>``  -- per-trial records + RMSE summary vs SNR.
* ``sweep-g <config>``   -- RMSE vs transmission count for each RIS size.

The config file is plain ``key = value`` text (``#`` comments); keys carry
unit suffixes and are converted to SI on parse.  Every run writes a JSON
manifest next to its CSVs; all randomness flows from the single
``master_seed`` key, so repeated runs produce bitwise-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

from . import __version__
from ._kernels import ACTIVE_BACKEND
from .bounds import SingularFim, compute_bounds
from .model import ScenarioConfig, default_precoding, geometry_to_params
from .montecarlo import (
    ExperimentConfig,
    _trial_rngs,
    snr_to_power,
    sweep_g,
    sweep_snr,
)


class ConfigError(Exception):
    """Invalid configuration file; carries a line/field diagnostic."""


_FLOAT_KEYS = {
    "qx_m": 0.0, "qy_m": 0.0,
    "rx_m": 12.0, "ry_m": 7.0,
    "px_m": 5.0, "py_m": 5.0,
    "fc_ghz": 60.0, "bw_mhz": 40.0,
    "delta_ns": 93.75,
    "sigma2_w": 1.0,
    "ris_amplitude_scale": 1.0,
    "gsweep_snr_db": -5.0,
}
_INT_KEYS = {
    "n_subcarriers": 30, "n_transmissions": 5,
    "n_bs_antennas": 20, "n_ris_elements": 20, "n_beams": 10,
    "master_seed": 1, "trials": 200, "grid_points": 50,
}
_FLOAT_LIST_KEYS = {"snr_grid_db": (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0)}
_INT_LIST_KEYS = {"g_grid": (2, 3, 4, 5, 6, 7), "nr_grid": (20, 40)}
_AUTO_KEYS = {"workers": "auto", "search_halfwidth_m": "auto"}

_ALL_KEYS = (set(_FLOAT_KEYS) | set(_INT_KEYS) | set(_FLOAT_LIST_KEYS)
             | set(_INT_LIST_KEYS) | set(_AUTO_KEYS))


def default_config():
    cfg = {}
    cfg.update(_FLOAT_KEYS)
    cfg.update(_INT_KEYS)
    cfg.update({k: list(v) for k, v in _FLOAT_LIST_KEYS.items()})
    cfg.update({k: list(v) for k, v in _INT_LIST_KEYS.items()})
    cfg.update(_AUTO_KEYS)
    return cfg


def _parse_value(key, raw, line_no):
    def fail(msg):
        raise ConfigError(f"line {line_no}, key {key!r}: {msg}")

    parts = raw.split()
    if key in _FLOAT_KEYS:
        if len(parts) != 1:
            fail("expected a single number")
        try:
            return float(parts[0])
        except ValueError:
            fail(f"not a number: {parts[0]!r}")
    if key in _INT_KEYS:
        if len(parts) != 1:
            fail("expected a single integer")
        try:
            return int(parts[0])
        except ValueError:
            fail(f"not an integer: {parts[0]!r}")
    if key in _FLOAT_LIST_KEYS:
        if not parts:
            fail("expected at least one number")
        try:
            return [float(p) for p in parts]
        except ValueError:
            fail("not a list of numbers")
    if key in _INT_LIST_KEYS:
        if not parts:
            fail("expected at least one integer")
        try:
            return [int(p) for p in parts]
        except ValueError:
            fail("not a list of integers")
    if key in _AUTO_KEYS:
        if len(parts) != 1:
            fail("expected a single value")
        if parts[0] == "auto":
            return "auto"
        try:
            if key == "workers":
                value = int(parts[0])
                if value < 1:
                    fail("workers must be >= 1 or 'auto'")
                return value
            return float(parts[0])
        except ValueError:
            fail(f"expected 'auto' or a number, got {parts[0]!r}")
    fail("unknown key")


def parse_config_text(text):
    """Parse config text into a normalized key/value mapping."""
    cfg = default_config()
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        seen.add(key)
        cfg[key] = _parse_value(key, raw, line_no)
    return cfg


def parse_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text)


def experiment_from_mapping(cfg):
    """Build the experiment (scenario plus sweep axes) from a parsed mapping."""
    try:
        scenario = ScenarioConfig(
            q=[cfg["qx_m"], cfg["qy_m"]],
            r=[cfg["rx_m"], cfg["ry_m"]],
            p=[cfg["px_m"], cfg["py_m"]],
            fc=cfg["fc_ghz"] * 1e9,
            bw=cfg["bw_mhz"] * 1e6,
            n_sub=cfg["n_subcarriers"],
            n_tx=cfg["n_transmissions"],
            n_bs=cfg["n_bs_antennas"],
            n_ris=cfg["n_ris_elements"],
            n_beams=cfg["n_beams"],
            power=1.0,  # replaced per SNR point
            sigma2=cfg["sigma2_w"],
            delta=cfg["delta_ns"] * 1e-9,
            rng_seed=cfg["master_seed"],
            ris_scale=cfg["ris_amplitude_scale"],
        )
        workers = cfg["workers"]
        if workers == "auto":
            workers = os.cpu_count() or 1
        halfwidth = cfg["search_halfwidth_m"]
        if halfwidth == "auto":
            halfwidth = None
        return ExperimentConfig(
            base=scenario,
            snr_grid_db=tuple(cfg["snr_grid_db"]),
            g_grid=tuple(cfg["g_grid"]),
            nr_grid=tuple(cfg["nr_grid"]),
            trials=cfg["trials"],
            master_seed=cfg["master_seed"],
            gsweep_snr_db=cfg["gsweep_snr_db"],
            workers=workers,
            grid_points=cfg["grid_points"],
            search_halfwidth=halfwidth,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _write_csv(path, manifest_name, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# manifest: {manifest_name}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(out_dir, name, command, config_path, cfg, overrides, outputs):
    manifest = {
        "command": command,
        "config_file": os.path.abspath(config_path),
        "config": cfg,
        "overrides": overrides,
        "master_seed": cfg["master_seed"],
        "package_version": __version__,
        "kernel_backend": ACTIVE_BACKEND,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
    }
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _progress(label):
    def report(axis, count):
        print(f"[risloc] {label}: axis={axis:g} done ({count} trials)",
              file=sys.stderr, flush=True)
    return report


def cmd_bounds(cfg, experiment, out_dir, config_path, overrides):
    rows = []
    for snr_db in experiment.snr_grid_db:
        scenario = replace(experiment.base,
                           power=snr_to_power(experiment.base, snr_db))
        # trial-0 draw, matching the bounds reported by the sweeps
        rng_phase, rng_precode, _ = _trial_rngs(experiment.master_seed, 0)
        params, known = geometry_to_params(scenario, rng=rng_phase)
        precoding = default_precoding(scenario, known, rng=rng_precode)
        try:
            rep = compute_bounds(scenario, precoding, params=params, known=known)
            rows.append((float(snr_db), rep.peb, rep.ceb, "ok"))
        except SingularFim:
            rows.append((float(snr_db), math.nan, math.nan, "singular-fim"))
    manifest_name = "bounds_manifest.json"
    csv_path = os.path.join(out_dir, "bounds.csv")
    _write_csv(csv_path, manifest_name,
               ["snr_db", "peb_m", "ceb_s", "status"], rows)
    _write_manifest(out_dir, manifest_name, "bounds", config_path, cfg,
                    overrides, ["bounds.csv"])
    return [csv_path]


def cmd_simulate(cfg, experiment, out_dir, config_path, overrides):
    summaries, records = sweep_snr(experiment, progress=_progress("simulate"))
    manifest_name = "simulate_manifest.json"
    trials_path = os.path.join(out_dir, "trials.csv")
    _write_csv(trials_path, manifest_name,
               ["trial", "snr_db", "estimator", "px_hat", "py_hat",
                "delta_hat_s", "p_err_m", "delta_err_s", "converged", "cost"],
               [(r.trial, r.snr_db, r.estimator, r.px_hat, r.py_hat,
                 r.delta_hat, r.p_err, r.delta_err, r.converged, r.cost)
                for r in records])
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, manifest_name,
               ["snr_db", "estimator", "rmse_p_m", "rmse_delta_s", "peb_m",
                "ceb_s", "trials_used", "flagged", "rmse_p_converged_m",
                "rmse_delta_converged_s", "status"],
               [(s.axis, s.estimator, s.rmse_p, s.rmse_delta, s.peb, s.ceb,
                 s.trials_used, s.flagged, s.rmse_p_converged,
                 s.rmse_delta_converged, s.status)
                for s in summaries])
    _write_manifest(out_dir, manifest_name, "simulate", config_path, cfg,
                    overrides, ["trials.csv", "summary.csv"])
    return [trials_path, summary_path]


def cmd_sweep_g(cfg, experiment, out_dir, config_path, overrides):
    summaries, _records = sweep_g(experiment, progress=_progress("sweep-g"))
    manifest_name = "sweep_g_manifest.json"
    csv_path = os.path.join(out_dir, "sweep_g.csv")
    _write_csv(csv_path, manifest_name,
               ["g", "n_r", "rmse_p_m", "peb_m", "trials", "estimator", "status"],
               [(int(s.axis), s.n_ris, s.rmse_p, s.peb, s.trials_used,
                 s.estimator, s.status)
                for s in summaries])
    _write_manifest(out_dir, manifest_name, "sweep-g", config_path, cfg,
                    overrides, ["sweep_g.csv"])
    return [csv_path]


_COMMANDS = {"bounds": cmd_bounds, "simulate": cmd_simulate, "sweep-g": cmd_sweep_g}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="risloc",
        description="RIS-aided joint localization and synchronization simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("bounds", "write PEB/CEB per SNR grid point"),
                            ("simulate", "Monte Carlo RMSE vs SNR"),
                            ("sweep-g", "Monte Carlo RMSE vs transmission count")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="path to the key=value config file")
        cmd.add_argument("--out", default="./results", help="output directory")
        cmd.add_argument("--trials", type=int, default=None,
                         help="override the trial count")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the master seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config_file(args.config)
        overrides = {}
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be >= 1")
            cfg["trials"] = args.trials
            overrides["trials"] = args.trials
        if args.seed is not None:
            cfg["master_seed"] = args.seed
            overrides["master_seed"] = args.seed
        experiment = experiment_from_mapping(cfg)
    except ConfigError as exc:
        print(f"risloc: config error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    try:
        outputs = _COMMANDS[args.command](cfg, experiment, args.out,
                                          args.config, overrides)
    except Exception as exc:  # runtime failure: partial results may exist
        print(f"risloc: runtime failure in {args.command!r}: {exc}",
              file=sys.stderr)
        print(f"risloc: partial results (if any) are under {args.out!r}",
              file=sys.stderr)
        return 3
    for path in outputs:
        print(path)
    return 0


def entry():
    raise SystemExit(main())
