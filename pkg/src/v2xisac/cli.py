"""Command-line orchestration: simulate, fit, compare, sweep, scene-dump.

The config file is a single JSON document whose keys mirror the scenario
parameter names with explicit units (``lambda_R_per_km``, ``P_V_dBm``,
``f_c_GHz``, ...); unspecified keys take the reference defaults.  All batch
outputs start with a header comment carrying the resolved config digest so
any result can be traced to the exact configuration that produced it.

Exit codes: 0 success, 2 usage, 3 configuration, 4 I/O, 5 numeric failure.
The ``V2XISAC_WORKERS`` environment variable sets the default worker count
for batch commands (results are identical for any worker count).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, engines, fitting, metrics
from .propagation import FadingSpec, LinkPropagation, PathLossParams, dbm_to_watt, linear_to_db, rho_factor, watt_to_dbm
from .scene import ConfigurationError, RtSettings, SystemConfig, build_line_scene, build_rt_scene

_LINKS = ("radar", "comm", "interference")


# ---------------------------------------------------------------------------
# Config file schema
# ---------------------------------------------------------------------------

def _params_to_file(p):
    return None if p is None else {"alpha": p.alpha, "beta_dB": p.beta_db}


def _link_to_file(lp):
    return {
        "mixed": _params_to_file(lp.mixed),
        "los": _params_to_file(lp.los),
        "nlos": _params_to_file(lp.nlos),
        "d1_m": lp.d1,
        "d2_m": lp.d2,
        "fading": {"kind": lp.fading.kind, "k_factor": lp.fading.k_factor},
    }


def config_to_file_dict(cfg: SystemConfig) -> dict:
    rt = cfg.rt
    return {
        "lambda_R_per_km": cfg.lambda_r * 1000.0,
        "lambda_C_per_km": cfg.lambda_c * 1000.0,
        "lambda_I_per_km": cfg.lambda_i * 1000.0,
        "p_I": cfg.p_i,
        "P_V_dBm": watt_to_dbm(cfg.p_v),
        "P_L_dBm": watt_to_dbm(cfg.p_l),
        "G_R": cfg.g_r,
        "G_C": cfg.g_c,
        "G_I": cfg.g_i,
        "f_c_GHz": cfg.f_c / 1e9,
        "phi_Vt_deg": math.degrees(cfg.phi_vt),
        "phi_Vr_deg": math.degrees(cfg.phi_vr),
        "phi_Lt_deg": math.degrees(cfg.phi_lt),
        "d_C_m": cfg.d_c,
        "d_I_m": cfg.d_i,
        "r_Rmin_m": cfg.r_rmin,
        "r_Rmax_m": cfg.r_rmax,
        "r_Cmin_m": cfg.r_cmin,
        "r_Imin_m": cfg.r_imin,
        "street_length_m": cfg.street_length,
        "street_width_m": cfg.street_width,
        "lambda_cross_per_km": cfg.lambda_cross,
        "propagation": {name: _link_to_file(getattr(cfg, name)) for name in _LINKS},
        "rt": {
            "radar_tx_m": list(rt.radar_tx),
            "radar_rx_m": list(rt.radar_rx),
            "rsu_y_m": rt.rsu_y,
            "rsu_height_m": rt.rsu_height,
            "opposite_lane_y_m": rt.opposite_lane_y,
            "interferer_height_m": rt.interferer_height,
            "same_lane_y_m": rt.same_lane_y,
            "vehicle_length_m": rt.vehicle_length,
            "vehicle_width_m": rt.vehicle_width,
            "vehicle_height_m": rt.vehicle_height,
            "building_depth_m": rt.building_depth,
            "building_height_m": rt.building_height,
            "street_y_min_m": rt.street_y_min,
            "street_y_max_m": rt.street_y_max,
            "reflection_coeff_mag": rt.reflection_coeff_mag,
            "reflection_coeff_phase_deg": rt.reflection_coeff_phase_deg,
            "diffraction_floor_dB": rt.diffraction_floor_db,
            "max_order": rt.max_order,
            "coherent_sum": rt.coherent_sum,
            "clutter_filtered_detection": rt.clutter_filtered_detection,
        },
    }


_NULLABLE = {
    "r_Cmin_m", "r_Imin_m",
    *(f"propagation.{ln}.{k}" for ln in _LINKS for k in ("los", "nlos", "d1_m", "d2_m")),
}


def _merge_validate(user, base, path=""):
    """Recursively overlay a user dict on the defaults, rejecting unknown
    keys and type mismatches with the offending field path."""
    if not isinstance(user, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected an object")
    merged = {}
    for key, default in base.items():
        here = f"{path}.{key}" if path else key
        if key not in user:
            merged[key] = default
            continue
        value = user[key]
        if value is None:
            if here in _NULLABLE:
                merged[key] = None
                continue
            raise ConfigurationError(f"{here}: must not be null")
        if isinstance(default, dict) or (default is None and isinstance(value, dict)):
            template = default if isinstance(default, dict) else {"alpha": 0.0, "beta_dB": 0.0}
            merged[key] = _merge_validate(value, template, here)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{here}: expected true/false")
            merged[key] = value
        elif isinstance(default, (int, float)) or default is None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{here}: expected a number")
            merged[key] = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigurationError(f"{here}: expected a string")
            merged[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list) or len(value) != len(default):
                raise ConfigurationError(f"{here}: expected a list of {len(default)} numbers")
            merged[key] = [float(v) for v in value]
        else:
            raise ConfigurationError(f"{here}: unsupported value")
    unknown = set(user) - set(base)
    if unknown:
        known = ", ".join(sorted(base))
        bad = sorted(unknown)[0]
        where = f"{path}.{bad}" if path else bad
        raise ConfigurationError(f"{where}: unknown key (known keys: {known})")
    return merged


def _file_params(d):
    return None if d is None else PathLossParams(alpha=d["alpha"], beta_db=d["beta_dB"])


def _file_link(d, path):
    try:
        fading = FadingSpec(kind=d["fading"]["kind"], k_factor=d["fading"]["k_factor"])
        return LinkPropagation(
            mixed=_file_params(d["mixed"]),
            los=_file_params(d["los"]),
            nlos=_file_params(d["nlos"]),
            fading=fading,
            d1=d["d1_m"],
            d2=d["d2_m"],
        )
    except ValueError as exc:
        raise ConfigurationError(f"propagation.{path}: {exc}") from exc


def config_from_file_dict(user: dict) -> SystemConfig:
    merged = _merge_validate(user, config_to_file_dict(SystemConfig()))
    rt = merged["rt"]
    try:
        return SystemConfig(
            lambda_r=merged["lambda_R_per_km"] / 1000.0,
            lambda_c=merged["lambda_C_per_km"] / 1000.0,
            lambda_i=merged["lambda_I_per_km"] / 1000.0,
            p_i=merged["p_I"],
            p_v=dbm_to_watt(merged["P_V_dBm"]),
            p_l=dbm_to_watt(merged["P_L_dBm"]),
            g_r=merged["G_R"], g_c=merged["G_C"], g_i=merged["G_I"],
            f_c=merged["f_c_GHz"] * 1e9,
            phi_vt=math.radians(merged["phi_Vt_deg"]),
            phi_vr=math.radians(merged["phi_Vr_deg"]),
            phi_lt=math.radians(merged["phi_Lt_deg"]),
            d_c=merged["d_C_m"], d_i=merged["d_I_m"],
            r_rmin=merged["r_Rmin_m"], r_rmax=merged["r_Rmax_m"],
            r_cmin=merged["r_Cmin_m"], r_imin=merged["r_Imin_m"],
            street_length=merged["street_length_m"],
            street_width=merged["street_width_m"],
            lambda_cross=merged["lambda_cross_per_km"] / 1000.0,
            radar=_file_link(merged["propagation"]["radar"], "radar"),
            comm=_file_link(merged["propagation"]["comm"], "comm"),
            interference=_file_link(merged["propagation"]["interference"], "interference"),
            rt=RtSettings(
                radar_tx=tuple(rt["radar_tx_m"]),
                radar_rx=tuple(rt["radar_rx_m"]),
                rsu_y=rt["rsu_y_m"],
                rsu_height=rt["rsu_height_m"],
                opposite_lane_y=rt["opposite_lane_y_m"],
                interferer_height=rt["interferer_height_m"],
                same_lane_y=rt["same_lane_y_m"],
                vehicle_length=rt["vehicle_length_m"],
                vehicle_width=rt["vehicle_width_m"],
                vehicle_height=rt["vehicle_height_m"],
                building_depth=rt["building_depth_m"],
                building_height=rt["building_height_m"],
                street_y_min=rt["street_y_min_m"],
                street_y_max=rt["street_y_max_m"],
                reflection_coeff_mag=rt["reflection_coeff_mag"],
                reflection_coeff_phase_deg=rt["reflection_coeff_phase_deg"],
                diffraction_floor_db=rt["diffraction_floor_dB"],
                max_order=int(rt["max_order"]),
                coherent_sum=rt["coherent_sum"],
                clutter_filtered_detection=rt["clutter_filtered_detection"],
            ),
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> SystemConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_file_dict(data)


# ---------------------------------------------------------------------------
# Helpers shared by the commands
# ---------------------------------------------------------------------------

def _grid_from_args(args) -> metrics.ThresholdGrid:
    return metrics.ThresholdGrid.from_db(
        eta_c_db=[float(v) for v in args.eta_c_db.split(",")],
        eta_r_db=[float(v) for v in args.eta_r_db.split(",")],
        gamma_r_dbm=[float(v) for v in args.gamma_r_dbm.split(",")],
    )


def _write_manifest(out_dir: Path, engine, cfg, seed, n, config_path):
    manifest = {
        "tool": "v2xisac",
        "version": __version__,
        "engine": engine,
        "seed": seed,
        "n": n,
        "config_digest": cfg.digest(),
        "config_path": str(config_path) if config_path else None,
        "config_file": config_to_file_dict(cfg),
    }
    with open(out_dir / f"manifest_{engine}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_samples(path) -> engines.SampleSet:
    path = Path(path)
    if path.suffix == ".bin":
        with open(path, "rb") as fh:
            return engines.samples_from_binary(fh)
    with open(path, "r", encoding="utf-8") as fh:
        return engines.samples_from_csv(fh)


def _gap_rows(tables: dict):
    """Max absolute estimate gap per metric for every engine pair."""
    names = sorted(tables)
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            by_key_a = {(r.metric, r.eta_c_db, r.eta_r_db, r.gamma_r_dbm): r.estimate for r in tables[a]}
            by_key_b = {(r.metric, r.eta_c_db, r.eta_r_db, r.gamma_r_dbm): r.estimate for r in tables[b]}
            if set(by_key_a) != set(by_key_b):
                raise ValueError(f"threshold grids of {a} and {b} do not match")
            per_metric = {}
            for key, est in by_key_a.items():
                gap = abs(est - by_key_b[key])
                metric = key[0]
                if metric not in per_metric or gap > per_metric[metric][0]:
                    per_metric[metric] = (gap, key)
            for metric, (gap, key) in sorted(per_metric.items()):
                rows.append({"metric": metric, "engine_a": a, "engine_b": b,
                             "max_abs_gap": gap,
                             "eta_c_db": key[1], "eta_r_db": key[2], "gamma_r_dbm": key[3]})
    return rows


def _write_gaps(rows, fh, meta=""):
    fh.write(f"# v2xisac-gaps {meta}\n")
    fh.write("metric,engine_a,engine_b,max_abs_gap,eta_c_db,eta_r_db,gamma_r_dbm\n")
    for r in rows:
        def f(v):
            return "" if v is None else f"{v:.6f}"
        fh.write(f"{r['metric']},{r['engine_a']},{r['engine_b']},{r['max_abs_gap']:.8f},"
                 f"{f(r['eta_c_db'])},{f(r['eta_r_db'])},{f(r['gamma_r_dbm'])}\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    engine = args.engine
    if engine == "mc":  # surface missing-model problems before the batch
        engines._require_los_model(cfg, "comm")
        engines._require_los_model(cfg, "interference")
    if engine == "rt":
        sample_set, obs, counts = engines.run_rt_batch_with_observations(
            cfg, args.n, args.seed, workers=args.workers)
        meta = f"engine=rt seed={args.seed} n={args.n} digest={cfg.digest()}"
        with open(out_dir / "observations_rt.csv", "w", encoding="utf-8") as fh:
            fitting.observations_to_csv(obs, fh, meta=meta)
        with open(out_dir / "counts_rt.csv", "w", encoding="utf-8") as fh:
            engines.counts_to_csv(counts, fh)
    else:
        sample_set = engines.run_batch(engine, cfg, args.n, args.seed, workers=args.workers)
    with open(out_dir / f"samples_{engine}.csv", "w", encoding="utf-8") as fh:
        engines.samples_to_csv(sample_set, fh)
    with open(out_dir / f"samples_{engine}.bin", "wb") as fh:
        engines.samples_to_binary(sample_set, fh)
    _write_manifest(out_dir, engine, cfg, args.seed, args.n, args.config)
    print(f"wrote {args.n} {engine} samples to {out_dir}")
    return 0


def _fit_report(cfg: SystemConfig, observations, counts):
    """All fits from one rt dataset: Table-shaped path-loss laws, LoS d2
    values, fading kinds and densities."""
    by_kind = {k: [o for o in observations if o.kind == k] for k in _LINKS}
    ref = {
        "radar": linear_to_db(rho_factor(cfg.p_v, cfg.g_r, cfg.f_c, 0.0)),
        "comm": linear_to_db(rho_factor(cfg.p_l, cfg.g_c, cfg.f_c, 0.0)),
        "interference": linear_to_db(rho_factor(cfg.p_v, cfg.g_i, cfg.f_c, 0.0)),
    }
    report = {}
    for kind in _LINKS:
        rows = by_kind[kind]
        fits = fitting.split_and_fit(rows, ref_power_db=ref[kind])
        if kind == "radar":
            fits["los"] = fits["nlos"] = None  # forward echo is single-regime
        entry = {"fits": fits, "d2": None, "fading": None, "n": len(rows)}
        if kind != "radar" and rows:
            d1 = cfg.r_cmin if kind == "comm" else cfg.r_imin
            entry["d2"] = fitting.fit_los_d2(rows, d1=d1)
            entry["d1"] = d1
        if fits["mixed"] is not None:
            entry["fading"] = fitting.estimate_fading(rows, fits["mixed"])
        report[kind] = entry
    dens_vehicle = fitting.estimate_density(
        [c.same_lane for c in counts], [c.lane_length for c in counts])
    dens_intf = fitting.estimate_density(
        [c.interferers for c in counts], [c.lane_length for c in counts])
    report["densities"] = {"vehicles": dens_vehicle, "interferers": dens_intf}
    return report


def _report_text(report) -> str:
    lines = ["link           set    alpha    beta_dB  rms_dB   n"]
    for kind in _LINKS:
        for name in ("mixed", "los", "nlos"):
            fit = report[kind]["fits"][name]
            if fit is None:
                lines.append(f"{kind:<14} {name:<6} ---      ---      ---      ---")
            else:
                lines.append(f"{kind:<14} {name:<6} {fit.alpha_hat:<8.3f} {fit.beta_hat_db:<8.3f} "
                             f"{fit.rms_db:<8.3f} {fit.n}")
    for kind in ("comm", "interference"):
        if report[kind]["d2"] is not None:
            lines.append(f"{kind}: d1 = {report[kind]['d1']:.3f} m (fixed), "
                         f"d2_hat = {report[kind]['d2']:.3f} m")
    for kind in _LINKS:
        fad = report[kind]["fading"]
        if fad is not None:
            extra = f" (K = {fad.k_factor:.3f})" if fad.kind == "rician" else ""
            lines.append(f"{kind}: fading {fad.kind}{extra}")
    dv = report["densities"]["vehicles"]
    di = report["densities"]["interferers"]
    lines.append(f"vehicle density: {dv.value * 1000:.3f} per km "
                 f"[{dv.ci_low * 1000:.3f}, {dv.ci_high * 1000:.3f}]")
    lines.append(f"interferer density: {di.value * 1000:.3f} per km "
                 f"[{di.ci_low * 1000:.3f}, {di.ci_high * 1000:.3f}]")
    return "\n".join(lines) + "\n"


def _fitted_params_dict(report) -> dict:
    """Config-schema fragment with the fitted values, ready to merge into a
    simulation config."""
    prop = {}
    for kind in _LINKS:
        fits = report[kind]["fits"]
        if fits["mixed"] is None:
            continue
        entry = {
            "mixed": {"alpha": fits["mixed"].alpha_hat, "beta_dB": fits["mixed"].beta_hat_db},
            "los": None, "nlos": None, "d1_m": None, "d2_m": None,
        }
        if fits["los"] is not None and fits["nlos"] is not None:
            entry["los"] = {"alpha": fits["los"].alpha_hat, "beta_dB": fits["los"].beta_hat_db}
            entry["nlos"] = {"alpha": fits["nlos"].alpha_hat, "beta_dB": fits["nlos"].beta_hat_db}
            entry["d1_m"] = report[kind].get("d1")
            entry["d2_m"] = report[kind]["d2"]
        fad = report[kind]["fading"]
        if fad is not None:
            entry["fading"] = {"kind": fad.kind, "k_factor": fad.k_factor}
        prop[kind] = entry
    return {
        "lambda_R_per_km": report["densities"]["vehicles"].value * 1000.0,
        "lambda_I_per_km": report["densities"]["interferers"].value * 1000.0,
        "propagation": prop,
    }


def cmd_fit(args) -> int:
    rt_dir = Path(args.rt_dir)
    obs_path = rt_dir / "observations_rt.csv"
    counts_path = rt_dir / "counts_rt.csv"
    manifest_path = rt_dir / "manifest_rt.json"
    for p in (obs_path, counts_path, manifest_path):
        if not p.exists():
            raise FileNotFoundError(f"missing rt artifact: {p}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = config_from_file_dict(manifest["config_file"])
    with open(obs_path, "r", encoding="utf-8") as fh:
        observations = fitting.observations_from_csv(fh)
    with open(counts_path, "r", encoding="utf-8") as fh:
        counts = engines.counts_from_csv(fh)
    if not observations:
        raise ValueError(f"no observations in {obs_path}")
    report = _fit_report(cfg, observations, counts)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = _report_text(report)
    with open(out_dir / "fit_report.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# v2xisac-fit digest={manifest['config_digest']}\n")
        fh.write(text)
    with open(out_dir / "fitted_params.json", "w", encoding="utf-8") as fh:
        json.dump(_fitted_params_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(text, end="")
    return 0


def cmd_compare(args) -> int:
    if len(args.samples) < 2:
        raise ConfigurationError("compare needs at least two sample files")
    grid = _grid_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = {}
    digests = {}
    for spec in args.samples:
        label, _, path = spec.partition("=")
        if not path:
            label, path = None, spec
        sample_set = _load_samples(path)
        label = label or sample_set.engine
        if label in tables:
            raise ConfigurationError(f"duplicate engine label {label!r}")
        tables[label] = metrics.sweep(sample_set, grid)
        digests[label] = sample_set.config_digest
        with open(out_dir / f"curves_{label}.csv", "w", encoding="utf-8") as fh:
            metrics.curves_to_csv(tables[label], fh,
                                  meta=f"engine={label} digest={sample_set.config_digest}")
    rows = _gap_rows(tables)
    with open(out_dir / "gaps.csv", "w", encoding="utf-8") as fh:
        meta = " ".join(f"{k}={v}" for k, v in sorted(digests.items()))
        _write_gaps(rows, fh, meta=meta)
    for r in rows:
        print(f"{r['metric']:<10} {r['engine_a']} vs {r['engine_b']}: "
              f"max gap {r['max_abs_gap']:.4f}")
    return 0


def _set_by_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    here = d
    for k in keys[:-1]:
        if not isinstance(here, dict) or k not in here:
            raise ConfigurationError(
                f"{dotted}: unknown config path (failed at {k!r}; known keys: "
                f"{', '.join(sorted(here)) if isinstance(here, dict) else 'none'})")
        here = here[k]
    last = keys[-1]
    if not isinstance(here, dict) or last not in here:
        raise ConfigurationError(
            f"{dotted}: unknown config path (known keys: "
            f"{', '.join(sorted(here)) if isinstance(here, dict) else 'none'})")
    here[last] = value


def cmd_sweep(args) -> int:
    values = [float(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigurationError("sweep needs a non-empty value list")
    engine_list = [e.strip() for e in args.engines.split(",")]
    with open(args.config, "r", encoding="utf-8") as fh:
        base = json.load(fh)
    base = _merge_validate(base, config_to_file_dict(SystemConfig()))
    grid = _grid_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for value in values:
        file_dict = json.loads(json.dumps(base))
        _set_by_path(file_dict, args.param, value)
        cfg = config_from_file_dict(file_dict)
        sub = out_dir / f"{args.param.replace('.', '_')}={value:g}"
        sub.mkdir(parents=True, exist_ok=True)
        for engine in engine_list:
            sample_set = engines.run_batch(engine, cfg, args.n, args.seed,
                                           workers=args.workers)
            with open(sub / f"samples_{engine}.csv", "w", encoding="utf-8") as fh:
                engines.samples_to_csv(sample_set, fh)
            with open(sub / f"samples_{engine}.bin", "wb") as fh:
                engines.samples_to_binary(sample_set, fh)
            _write_manifest(sub, engine, cfg, args.seed, args.n, args.config)
            for row in metrics.sweep(sample_set, grid):
                all_rows.append((value, engine, row))
    with open(out_dir / "sweep_curves.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# v2xisac-sweep param={args.param}\n")
        fh.write("param_value,engine,metric,eta_c_db,eta_r_db,gamma_r_dbm,"
                 "estimate,ci_low,ci_high,n_effective\n")
        for value, engine, r in all_rows:
            def f(v):
                return "" if v is None else f"{v:.6f}"
            fh.write(f"{value:g},{engine},{r.metric},{f(r.eta_c_db)},{f(r.eta_r_db)},"
                     f"{f(r.gamma_r_dbm)},{r.estimate:.8f},{r.ci_low:.8f},"
                     f"{r.ci_high:.8f},{r.n_effective}\n")
    print(f"swept {args.param} over {len(values)} values x {len(engine_list)} engines")
    return 0


def cmd_scene_dump(args) -> int:
    cfg = load_config(args.config)
    rng = engines.substream(args.seed, 0)
    if args.kind == "rt":
        payload = build_rt_scene(cfg, rng).to_dict()
    else:
        payload = build_line_scene(cfg, rng).to_dict()
    payload["config_digest"] = cfg.digest()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.kind} scene to {out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _build_parser():
    parser = argparse.ArgumentParser(prog="v2xisac", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"v2xisac {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_batch_flags(p):
        p.add_argument("--n", type=_positive_int, default=1000, help="realizations")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--workers", type=int, default=None,
                       help=f"parallel workers (default ${engines.WORKERS_ENV} or 1)")

    def add_grid_flags(p):
        p.add_argument("--eta-c-db", default="-20,-15,-10,-5,0,5,10,15,20")
        p.add_argument("--eta-r-db", default="-30,-25,-20,-15,-10,-5,0,5,10")
        p.add_argument("--gamma-r-dbm", default="-110,-105,-100,-95,-90,-85,-80,-75,-70")

    p = sub.add_parser("simulate", help="run one engine and write sample files")
    p.add_argument("--config", required=True)
    p.add_argument("--engine", choices=engines.ENGINES, required=True)
    add_batch_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit model parameters from an rt sample directory")
    p.add_argument("--rt-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="metric curves and gaps across engines")
    p.add_argument("--samples", nargs="+", required=True,
                   help="sample files, optionally label=path")
    p.add_argument("--out", required=True)
    add_grid_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="re-simulate while varying one config parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="config path, e.g. lambda_I_per_km")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--engines", default="sg,mc")
    add_batch_flags(p)
    add_grid_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scene-dump", help="write one sampled scene as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("rt", "line"), default="rt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene_dump)
    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main():
    sys.exit(run())


if __name__ == "__main__":
    console_main()
