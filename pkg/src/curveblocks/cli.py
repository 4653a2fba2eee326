"""Batch command-line front end.

Subcommands: ``simulate`` (write a synthetic grid plus truth labels),
``fit`` (estimate one model and write partitions, trace, block means and a
run report), ``select`` (grid search over K, L and random effect
configurations, ranked by ICL) and ``score`` (CARI between two saved
co-partitions). Settings come from flags, then a JSON config file, then
defaults; the report echoes every resolved value so a run can be reproduced
bit for bit. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import CurveGrid, load_csv, preprocess, save_csv
from .datagen import ScenarioSpec, generate
from .errors import ConfigError, CurveblocksError, DataError, DomainError, NumericError
from .metrics import cari
from .msem import FitResult, MsemConfig, run
from .selection import ICL_BIAS_WARNING, ModelGrid, SearchResult, model_search, score_fit
from .sim_model import RandomEffectConfig
from .splines import SplineSpec, clipped_shape_values

MEAN_GRID_POINTS = 101

CONFIG_DEFAULTS = {
    "K": None,
    "L": None,
    "re_config": "TTT",
    "mc_samples": 100,
    "gibbs_sweeps": 3,
    "iterations": 100,
    "burn_in": 50,
    "n_starts": 1,
    "init": "kmeans",
    "seed": 0,
    "knots": 4,
    "degree": 3,
    "threads": None,  # resolved to the available core count
    "nlme_tol": 1e-6,
    "nlme_max_iter": 50,
}

_CONFIG_TYPES = {
    "K": int, "L": int, "re_config": str, "mc_samples": int, "gibbs_sweeps": int,
    "iterations": int, "burn_in": int, "n_starts": int, "init": str, "seed": int,
    "knots": int, "degree": int, "threads": int, "nlme_tol": float, "nlme_max_iter": int,
}


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(raw) - set(CONFIG_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    return raw


def _resolve_config(args) -> dict:
    """Merge flag > file > default for every config key."""
    from_file = _load_config_file(args.config) if args.config else {}
    resolved = {}
    for key, default in CONFIG_DEFAULTS.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in from_file:
            try:
                resolved[key] = _CONFIG_TYPES[key](from_file[key])
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key} has invalid value {from_file[key]!r}") from None
        else:
            resolved[key] = default
    if resolved["threads"] is None:
        resolved["threads"] = os.cpu_count() or 1
    return resolved


def _msem_config(resolved: dict, grid: CurveGrid) -> MsemConfig:
    if resolved["K"] is None or resolved["L"] is None:
        raise ConfigError("K and L must be given (flag or config file)")
    lo, hi = grid.observed_time_range()
    if not lo < hi:
        raise ConfigError("cannot infer a spline domain from a single time point")
    spec = SplineSpec(
        degree=int(resolved["degree"]),
        interior_knot_count=int(resolved["knots"]),
        domain=(lo, hi),
    )
    return MsemConfig(
        K=int(resolved["K"]),
        L=int(resolved["L"]),
        re_config=RandomEffectConfig.from_string(resolved["re_config"]),
        spline=spec,
        mc_samples=int(resolved["mc_samples"]),
        gibbs_sweeps=int(resolved["gibbs_sweeps"]),
        iterations=int(resolved["iterations"]),
        burn_in=int(resolved["burn_in"]),
        n_starts=int(resolved["n_starts"]),
        init=resolved["init"],
        seed=int(resolved["seed"]),
        nlme_tol=float(resolved["nlme_tol"]),
        nlme_max_iter=int(resolved["nlme_max_iter"]),
        threads=int(resolved["threads"]),
    )


def _load_grid(args) -> CurveGrid:
    grid = load_csv(args.data)
    steps = [s for s in (args.preprocess or "").split(",") if s]
    if steps:
        grid = preprocess(grid, steps)
    return grid


def _write_partition(path, ids, labels, id_header: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{id_header},cluster\n")
        for unit, lab in zip(ids, labels):
            fh.write(f"{unit},{int(lab)}\n")


def _read_partition(path, id_header: str) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2 or header[1] != "cluster":
            raise DataError(f"{path}: expected header <id>,cluster")
        for lineno, fields in enumerate(reader, start=2):
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            try:
                out[fields[0]] = int(fields[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer cluster id {fields[1]!r}") from None
    if not out:
        raise DataError(f"{path}: empty partition")
    return out


def _write_report(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    lines = []

    def flatten(prefix, obj):
        if isinstance(obj, dict):
            for key in sorted(obj):
                flatten(f"{prefix}{key}." if prefix else f"{key}.", obj[key]) if isinstance(
                    obj[key], dict
                ) else flatten_leaf(f"{prefix}{key}", obj[key])
        else:
            flatten_leaf(prefix.rstrip("."), obj)

    def flatten_leaf(key, value):
        if isinstance(value, dict):
            flatten(key + ".", value)
        elif isinstance(value, (list, tuple)):
            lines.append(f"{key}: {json.dumps(value, default=_json_default)}")
        else:
            lines.append(f"{key}: {_fmt(value) if isinstance(value, float) else value}")

    flatten("", payload)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _fit_payload(resolved: dict, args, grid: CurveGrid, fit: FitResult,
                 icl_value: float, lc: float, nu: int) -> dict:
    warnings = [ICL_BIAS_WARNING]
    warnings += [f"block ({k},{l}): {msg}" for k, l, msg in fit.block_flags]
    return {
        "config": dict(resolved),
        "preprocess": args.preprocess or "",
        "data": {
            "path": str(args.data),
            "n": grid.n,
            "d": grid.d,
            "observations": grid.total_observations(),
        },
        "result": {
            "icl": icl_value,
            "loglik_c": lc,
            "nu": nu,
            "mean_postburn_loglik": fit.mean_loglik,
            "iterations_run": fit.iterations_run,
            "early_stopped": fit.early_stopped,
            "selected_chain": fit.chain_index,
            "pi": fit.pi.tolist(),
            "rho": fit.rho.tolist(),
        },
        "warnings": warnings,
        "version": __version__,
    }


def _cmd_fit(args) -> int:
    resolved = _resolve_config(args)
    grid = _load_grid(args)
    cfg = _msem_config(resolved, grid)
    fit = run(grid, cfg)
    icl_value, lc, nu = score_fit(grid, fit, cfg)
    os.makedirs(args.out, exist_ok=True)
    _write_partition(os.path.join(args.out, "row_partition.csv"), grid.row_ids, fit.z_hat, "row_id")
    _write_partition(os.path.join(args.out, "col_partition.csv"), grid.col_ids, fit.w_hat, "col_id")
    with open(os.path.join(args.out, "loglik_trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("iteration,loglik\n")
        for h, ll in enumerate(fit.loglik_trace, start=1):
            fh.write(f"{h},{_fmt(ll)}\n")
    lo, hi = cfg.spline.domain
    dense = np.linspace(lo, hi, MEAN_GRID_POINTS)
    with open(os.path.join(args.out, "block_means.csv"), "w", encoding="utf-8") as fh:
        fh.write("k,l,t,mean_value\n")
        for k in range(cfg.K):
            for l in range(cfg.L):
                vals = clipped_shape_values(cfg.spline, fit.blocks[k][l].beta, dense)
                for t, v in zip(dense, vals):
                    fh.write(f"{k + 1},{l + 1},{_fmt(t)},{_fmt(v)}\n")
    _write_report(args.out, _fit_payload(resolved, args, grid, fit, icl_value, lc, nu))
    print(f"fit complete: ICL {_fmt(icl_value)}, partitions written to {args.out}")
    return 0


def _parse_int_list(text: str, what: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated integer list, got {text!r}") from None


def _cmd_select(args) -> int:
    resolved = _resolve_config(args)
    grid = _load_grid(args)
    K_values = _parse_int_list(args.K_values, "--K_values")
    L_values = _parse_int_list(args.L_values, "--L_values")
    if args.re_configs.strip().lower() == "all":
        configs = RandomEffectConfig.all_configs()
    else:
        configs = [RandomEffectConfig.from_string(s) for s in args.re_configs.split(",") if s.strip()]
    base = dict(resolved)
    base["K"], base["L"] = K_values[0], L_values[0]  # placeholders, replaced per point
    cfg_base = _msem_config(base, grid)
    search = model_search(grid, ModelGrid(K_values, L_values, configs, cfg_base))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "icl_ranking.csv"), "w", encoding="utf-8") as fh:
        fh.write("rank,K,L,re_config,icl,loglik_c,nu\n")
        for rank, sm in enumerate(search.ranked, start=1):
            fh.write(
                f"{rank},{sm.K},{sm.L},{sm.re_config.to_string()},"
                f"{_fmt(sm.icl)},{_fmt(sm.loglik_c)},{sm.nu}\n"
            )
    best = search.best()
    payload = {
        "config": dict(resolved),
        "preprocess": args.preprocess or "",
        "grid": {
            "K_values": K_values,
            "L_values": L_values,
            "re_configs": [c.to_string() for c in configs],
            "re_config_mode": "searched" if len(configs) > 1 else "fixed",
        },
        "data": {"path": str(args.data), "n": grid.n, "d": grid.d},
        "best": {"K": best.K, "L": best.L, "re_config": best.re_config.to_string(), "icl": best.icl},
        "failures": [
            {"K": f.K, "L": f.L, "re_config": f.re_config.to_string(), "error": f.error}
            for f in search.failures
        ],
        "warnings": [ICL_BIAS_WARNING],
        "version": __version__,
    }
    _write_report(args.out, payload)
    print(
        f"selected K={best.K}, L={best.L}, config {best.re_config.to_string()} "
        f"(ICL {_fmt(best.icl)}); ranking written to {args.out}"
    )
    return 0


def _cmd_simulate(args) -> int:
    spec = ScenarioSpec(n=args.n, d=args.d, T=args.T, seed=args.seed)
    grid, z_true, w_true = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    save_csv(grid, os.path.join(args.out, "data.csv"))
    _write_partition(os.path.join(args.out, "row_truth.csv"), grid.row_ids, z_true, "row_id")
    _write_partition(os.path.join(args.out, "col_truth.csv"), grid.col_ids, w_true, "col_id")
    print(f"simulated {spec.n}x{spec.d} grid (T={spec.T}, seed={spec.seed}) written to {args.out}")
    return 0


def _aligned_labels(part_a: dict, part_b: dict, what: str):
    if set(part_a) != set(part_b):
        raise DataError(f"{what} partitions cover different id sets")
    ids = sorted(part_a)
    return (
        np.array([part_a[i] for i in ids]),
        np.array([part_b[i] for i in ids]),
    )


def _cmd_score(args) -> int:
    rows_a = _read_partition(args.rows_a, "row_id")
    cols_a = _read_partition(args.cols_a, "col_id")
    rows_b = _read_partition(args.rows_b, "row_id")
    cols_b = _read_partition(args.cols_b, "col_id")
    z1, z2 = _aligned_labels(rows_a, rows_b, "row")
    w1, w2 = _aligned_labels(cols_a, cols_b, "column")
    print(_fmt(cari(z1, w1, z2, w2)))
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--preprocess", help="comma-separated steps: log, log1p, standardize, aggregate:W")
    for key, typ in _CONFIG_TYPES.items():
        parser.add_argument(f"--{key}", type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curveblocks",
        description="Co-clustering of time-dependent curve grids into blocks of homogeneous curves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one (K, L, config) model")
    p_fit.add_argument("--data", required=True, help="long-format CSV: row_id,col_id,t,value")
    p_fit.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_fit)
    p_fit.set_defaults(func=_cmd_fit)

    p_sel = sub.add_parser("select", help="grid search over K, L and random effect configs")
    p_sel.add_argument("--data", required=True)
    p_sel.add_argument("--out", required=True)
    p_sel.add_argument("--K_values", required=True, help="comma-separated, e.g. 3,4,5")
    p_sel.add_argument("--L_values", required=True)
    p_sel.add_argument("--re_configs", default=None,
                       help="comma-separated T/F triples, or 'all'; default: the re_config key")
    _add_config_flags(p_sel)
    p_sel.set_defaults(func=_cmd_select)

    p_sim = sub.add_parser("simulate", help="write a synthetic scenario dataset plus truth")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--n", type=int, default=100)
    p_sim.add_argument("--d", type=int, default=20)
    p_sim.add_argument("--T", type=int, default=15)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.set_defaults(func=_cmd_simulate)

    p_score = sub.add_parser("score", help="CARI between two saved co-partitions")
    p_score.add_argument("rows_a")
    p_score.add_argument("cols_a")
    p_score.add_argument("rows_b")
    p_score.add_argument("cols_b")
    p_score.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "select" and args.re_configs is None:
        args.re_configs = args.re_config if args.re_config else CONFIG_DEFAULTS["re_config"]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except CurveblocksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
