"""Command-line interface: simulate, fit, tune, stabsel, predict, summarize.

Every subcommand reads a JSON config and/or prior artifacts and writes
deterministic output: JSON with sorted keys and compact separators, CSV
with shortest round-trip floats.  Outputs embed the sha256 hash of the
canonical config (or of the model artifact for prediction commands) and
the seed where one is used, so a result can always be traced to its
inputs.  Handled errors print one structured line to stderr and exit 1.

Heavy imports happen inside the subcommands so that --threads can cap
the BLAS pool through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

__all__ = ["main", "build_parser"]

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _config_hash(cfg) -> str:
    return _sha256(_canonical(cfg))


def _file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ValueError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return cfg


def _section(cfg, name, required=False) -> dict:
    part = cfg.get(name, None)
    if part is None:
        if required:
            raise ValueError(f"config is missing the {name!r} section")
        return {}
    if not isinstance(part, dict):
        raise ValueError(f"config section {name!r} must be a JSON object")
    return part


def _write_json(payload, path) -> None:
    with open(path, "w") as fh:
        fh.write(_canonical(payload))
        fh.write("\n")


def _spline_cfgs(model_cfg):
    from hurdleboost.basis import DEFAULT_SPLINE, DEFAULT_TENSOR, SplineConfig

    spline = model_cfg.get("spline")
    tensor = model_cfg.get("tensor")
    return (
        SplineConfig.from_dict(spline) if spline else DEFAULT_SPLINE,
        SplineConfig.from_dict(tensor) if tensor else DEFAULT_TENSOR,
    )


def _load_data(path, schema, winter_start):
    from hurdleboost.data import load_dataset

    return load_dataset(path, schema, winter_start=tuple(winter_start))


def _formulas(model_cfg):
    from hurdleboost.hurdle import FULL_SURVEY_FORMULA

    formula = model_cfg.get("formula", FULL_SURVEY_FORMULA)
    return (
        formula,
        model_cfg.get("formula_mu", formula),
        model_cfg.get("formula_sigma", formula),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from hurdleboost.data import SimulationConfig, save_dataset, simulate_hurdle_dataset

    cfg = _load_config(args.config)
    sim = SimulationConfig.from_dict(_section(cfg, "simulation", required=True))
    ds, truth = simulate_hurdle_dataset(sim, seed=args.seed)
    comment = f"config_sha256={_config_hash(cfg)} seed={args.seed}"
    save_dataset(ds, args.out, header_comment=comment)
    if args.truth_out:
        from hurdleboost.data import write_table

        write_table(truth, args.truth_out, header_comment=comment)
    print(f"wrote {len(ds.frame)} rows to {args.out}")
    return 0


def cmd_fit(args) -> int:
    from hurdleboost.hurdle import fit_hurdle

    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model")
    spline_cfg, tensor_cfg = _spline_cfgs(model_cfg)
    formula, formula_mu, formula_sigma = _formulas(model_cfg)
    m_occ, m_mu, m_sigma = _resolve_mstop(args.mstop, model_cfg)
    ds = _load_data(
        args.data, _section(cfg, "schema", required=True), model_cfg.get("winter_start", (10, 15))
    )
    model = fit_hurdle(
        ds,
        formula=formula,
        formula_mu=formula_mu,
        formula_sigma=formula_sigma,
        m_occ=m_occ,
        m_mu=m_mu,
        m_sigma=m_sigma,
        nu=model_cfg.get("nu", 0.1),
        spline_cfg=spline_cfg,
        tensor_cfg=tensor_cfg,
    )
    artifact = model.to_dict()
    artifact["provenance"] = {
        "config_sha256": _config_hash(cfg),
        "m_stop": {"occupancy": m_occ, "mu": m_mu, "sigma": m_sigma},
    }
    _write_json(artifact, args.out)
    print(
        f"fitted on {model.n_rows} rows ({model.n_positive} positive); "
        f"model written to {args.out}"
    )
    return 0


def _resolve_mstop(flag, model_cfg):
    if flag:
        parts = [int(p) for p in flag.split(",")]
        if len(parts) == 1:
            return parts[0], parts[0], parts[0]
        if len(parts) == 3:
            return tuple(parts)
        raise ValueError("--mstop takes one value or occ,mu,sigma")
    return (
        int(model_cfg.get("m_occ", 100)),
        int(model_cfg.get("m_mu", 100)),
        int(model_cfg.get("m_sigma", 100)),
    )


def cmd_tune(args) -> int:
    from hurdleboost.hurdle import tune_count_mstop, tune_occupancy_mstop

    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model")
    tuning = _section(cfg, "tuning")
    spline_cfg, tensor_cfg = _spline_cfgs(model_cfg)
    formula, formula_mu, formula_sigma = _formulas(model_cfg)
    ds = _load_data(
        args.data,
        _section(cfg, "schema", required=True),
        model_cfg.get("winter_start", (10, 15)),
    )
    occ = tune_occupancy_mstop(
        ds,
        formula=formula,
        grid=tuning.get("grid"),
        n_folds=args.folds,
        nu=model_cfg.get("nu", 0.1),
        seed=args.seed,
        spline_cfg=spline_cfg,
        tensor_cfg=tensor_cfg,
    )
    counts = tune_count_mstop(
        ds,
        formula_mu=formula_mu,
        formula_sigma=formula_sigma,
        grid_mu=tuning.get("grid_mu"),
        grid_sigma=tuning.get("grid_sigma"),
        n_folds=args.folds,
        nu=model_cfg.get("nu", 0.1),
        seed=args.seed + 1,
        spline_cfg=spline_cfg,
        tensor_cfg=tensor_cfg,
    )
    payload = {
        "config_sha256": _config_hash(cfg),
        "seed": args.seed,
        "n_folds": args.folds,
        "occupancy": {
            "m_stop": occ.m_stop,
            "grid": [int(g) for g in occ.grid],
            "oob_risk": [float(r) for r in occ.oob_risk],
            "n_resampled": occ.n_resampled,
        },
        "counts": {
            "m_mu": counts.m_mu,
            "m_sigma": counts.m_sigma,
            "grid_mu": [int(g) for g in counts.grid_mu],
            "grid_sigma": [int(g) for g in counts.grid_sigma],
            "risk": [[float(v) for v in row] for row in counts.risk],
            "n_resampled": counts.n_resampled,
        },
    }
    _write_json(payload, args.out)
    print(
        f"tuned m_stop: occupancy={occ.m_stop}, mu={counts.m_mu}, sigma={counts.m_sigma}; "
        f"written to {args.out}"
    )
    return 0


def cmd_stabsel(args) -> int:
    from hurdleboost.hurdle import select_stable_learners
    from hurdleboost.stabsel import StabSelConfig

    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model")
    sel_cfg = _section(cfg, "stabsel", required=True)
    spline_cfg, tensor_cfg = _spline_cfgs(model_cfg)
    formula, formula_mu, formula_sigma = _formulas(model_cfg)
    try:
        sconf = StabSelConfig(**sel_cfg)
    except TypeError as e:
        raise ValueError(f"bad stabsel section: {e}") from e
    ds = _load_data(
        args.data,
        _section(cfg, "schema", required=True),
        model_cfg.get("winter_start", (10, 15)),
    )
    results = select_stable_learners(
        ds,
        sconf,
        formula=formula,
        formula_mu=formula_mu,
        formula_sigma=formula_sigma,
        seed=args.seed,
        spline_cfg=spline_cfg,
        tensor_cfg=tensor_cfg,
    )
    payload = {
        "config_sha256": _config_hash(cfg),
        "seed": args.seed,
        "occupancy": results["occupancy"].to_dict(),
        "mu": results["mu"].to_dict(),
        "sigma": results["sigma"].to_dict(),
    }
    _write_json(payload, args.out)
    stable = {k: results[k].stable_names for k in ("occupancy", "mu", "sigma")}
    print(f"stable sets: {stable}; written to {args.out}")
    return 0


def _prediction_table(args, model):
    """(identifier frame, covariate table) for predict/summarize."""
    ds = _load_data(args.data, model.schema, model.winter_start)
    if args.winter is not None:
        from hurdleboost.hurdle import prediction_grid

        grid = prediction_grid(ds, args.winter, n_dates=args.dates)
        ids = grid[["segment_id", "date", "winter", "time"]].copy()
        return ds, ids, grid
    ids = ds.frame[["segment_id", "survey_id", "date"]].copy()
    return ds, ids, ds.frame


def cmd_predict(args) -> int:
    import pandas as pd

    from hurdleboost.data import write_table
    from hurdleboost.hurdle import HurdleModel

    model = HurdleModel.load(args.model)
    _, ids, table = _prediction_table(args, model)
    pred = model.predict(table)
    out = pd.concat([ids.reset_index(drop=True), pred], axis=1)
    write_table(out, args.out, header_comment=f"model_sha256={_file_hash(args.model)}")
    print(f"wrote {len(out)} predictions to {args.out}")
    return 0


def cmd_summarize(args) -> int:
    from hurdleboost.data import write_table
    from hurdleboost.hurdle import HurdleModel, export_geojson, summarize_segments

    if args.winter is None:
        raise ValueError("summarize needs --winter to build the seasonal grid")
    model = HurdleModel.load(args.model)
    _, _, grid = _prediction_table(args, model)
    summary = summarize_segments(grid, model.predict(grid), quantity=args.quantity)
    comment = (
        f"model_sha256={_file_hash(args.model)} winter={args.winter} quantity={args.quantity}"
    )
    write_table(summary, args.out, header_comment=comment)
    if args.geojson:
        export_geojson(summary, args.geojson)
    print(
        f"wrote {len(summary)} segment summaries to {args.out}"
        + (f" and {args.geojson}" if args.geojson else "")
    )
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hurdleboost",
        description="Boosted hurdle model for survey counts: occupancy times "
        "zero-truncated size, with subsampled stopping and stability selection.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap the BLAS/OpenMP thread pools (set before numpy loads)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic survey dataset")
    p.add_argument("--config", required=True, help="JSON config with a 'simulation' section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--truth-out", default=None, help="optional CSV of true parameters")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the hurdle model at fixed stopping iterations")
    p.add_argument("--data", required=True, help="survey CSV")
    p.add_argument("--config", required=True, help="JSON config with 'schema' (+ 'model')")
    p.add_argument("--mstop", default=None, help="override: one value or occ,mu,sigma")
    p.add_argument("--out", required=True, help="model artifact path (JSON)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", help="subsampled search for the stopping iterations")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--folds", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("stabsel", help="stability selection for all three predictors")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="JSON config with a 'stabsel' section")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stabsel)

    p = sub.add_parser("predict", help="predict on survey rows or a seasonal grid")
    p.add_argument("--model", required=True, help="model artifact from fit")
    p.add_argument("--data", required=True)
    p.add_argument("--winter", default=None, help="predict on this winter's grid instead")
    p.add_argument("--dates", type=int, default=10, help="grid dates per winter")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("summarize", help="per-segment seasonal summaries (+ GeoJSON)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--winter", required=True)
    p.add_argument("--dates", type=int, default=10)
    p.add_argument(
        "--quantity",
        default="abundance",
        choices=("pi", "mu", "sigma", "cond_abundance", "abundance"),
        help="predicted quantity to summarize",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--geojson", default=None, help="optional GeoJSON output path")
    p.set_defaults(func=cmd_summarize)

    return parser


# Schema/Validation/Family/Basis errors all subclass ValueError.
HANDLED_ERRORS = (ValueError, RuntimeError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: ValueError: --threads must be positive", file=sys.stderr)
            return 1
        for var in THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except HANDLED_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
