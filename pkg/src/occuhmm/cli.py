"""Command-line entry point.

Subcommands: ``preprocess`` (raw tracking CSV -> aligned canonical CSV),
``fit`` (canonical CSV -> model + fit report), ``occupancy`` (fitted model
-> occupancy curve CSV + SVG for one estimator), ``simulate`` (replicated
estimator-comparison experiment), ``decode`` (most likely state sequence +
coloured track). Every command takes a YAML config file, writes a resolved
copy of it into the output directory, and is deterministic given that
resolved config. Exit codes: 0 success, 2 input/validation error,
3 numerical failure (including non-convergence under ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np
import pandas as pd
import yaml

from .dirichlet import DirichletConfig, fit_dirichlet_smooth, predict_occupancy
from .errors import InputError, NumericalError, OccuHmmError, SingularMatrixError
from .estimation import FitConfig, default_init, fit_mle, standard_errors
from .hmm import propagate_state_probs, viterbi
from .model import HmmModel
from .movement import (
    PreprocessConfig,
    RawTrack,
    preprocess_track,
    read_canonical_csv,
    write_canonical_csv,
)
from .occupancy import BinningConfig, hypothetical_stationary_curve, monte_carlo_truth
from .resampling import (
    ArModel,
    BlockBootstrapConfig,
    block_bootstrap,
    fit_ar,
    fit_seasonal_trend,
    occupancy_via_resampling,
    simulate_ar,
)
from .simharness import load_setting, replicate_seeds, run_experiment, generate_setting
from .svgplot import PALETTE, Line, Scatter, plot_lines, plot_track

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

METHOD_NAMES = {
    "stationary": "stationary",
    "ar": "ar-resample",
    "bb": "block-bootstrap",
    "dirichlet": "dirichlet",
    "mc": "monte-carlo",
}

MAX_SCATTER_POINTS = 5000


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occuhmm",
        description="Covariate-driven HMMs and state occupancy estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "preprocess": "raw tracking CSV -> canonical aligned-series CSV",
        "fit": "fit the model to a canonical CSV",
        "occupancy": "occupancy curve for one estimator",
        "simulate": "replicated estimator-comparison experiment",
        "decode": "most likely state sequence",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--strict", action="store_true",
                        help="treat non-convergence as a failure (exit 3)")
        if name == "occupancy":
            sp.add_argument("--method", choices=sorted(METHOD_NAMES),
                            help="estimator to run")
        if name == "simulate":
            sp.add_argument("--setting", choices=["I", "II", "III"])
            sp.add_argument("--replicates", type=int)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise InputError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError(f"config {path} must be a mapping at the top level")
    return cfg


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.out:
        cfg["output_dir"] = args.out
    if args.strict:
        cfg["strict"] = True
    if getattr(args, "method", None):
        cfg.setdefault("occupancy", {})["method"] = args.method
    if getattr(args, "setting", None):
        cfg.setdefault("simulate", {})["setting"] = args.setting
    if getattr(args, "replicates", None):
        cfg.setdefault("simulate", {})["replicates"] = int(args.replicates)
    cfg.setdefault("seed", 0)
    cfg.setdefault("strict", False)
    return cfg


def _prepare_outdir(cfg: dict) -> str:
    outdir = cfg.get("output_dir")
    if not outdir:
        raise InputError("config needs an output_dir (or pass --out)")
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "resolved_config.yaml"), "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
    return outdir


def _save_model(model: HmmModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def _load_model(path: str) -> HmmModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"model file {path} is not valid JSON: {exc}") from exc
    return HmmModel.from_dict(doc)


def _load_data(cfg: dict):
    data_cfg = cfg.get("data", {})
    path = data_cfg.get("canonical")
    if not path:
        raise InputError("config needs data.canonical (path to the aligned-series CSV)")
    model_cfg = cfg.get("model", {})
    obs_cols = tuple(model_cfg.get("observation_columns", ("step", "angle")))
    cov_cols = model_cfg.get("covariate_columns")
    return read_canonical_csv(
        path, obs_cols, tuple(cov_cols) if cov_cols is not None else None
    )


def cmd_preprocess(cfg: dict, outdir: str) -> None:
    pre = cfg.get("preprocess", {})
    src = pre.get("input")
    if not src:
        raise InputError("config needs preprocess.input (raw tracking CSV)")
    track = RawTrack.from_csv(
        src,
        time_col=pre.get("time_column", "timestamp"),
        x_col=pre.get("x_column", "x"),
        y_col=pre.get("y_column", "y"),
        covariate_cols=tuple(pre.get("covariate_columns", ())),
        geographic=bool(pre.get("geographic", False)),
    )
    config = PreprocessConfig(
        interval_s=float(pre.get("interval_s", 3600.0)),
        snap_tolerance_s=float(pre.get("snap_tolerance_s", 300.0)),
        max_covariate_gap=int(pre.get("max_covariate_gap", 6)),
        min_segment_length=int(pre.get("min_segment_length", 50)),
        speed_threshold=float(pre.get("speed_threshold", np.inf)),
    )
    result = preprocess_track(track, config)
    write_canonical_csv(result, os.path.join(outdir, "canonical.csv"))
    with open(os.path.join(outdir, "positions.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y"])
        for r in range(len(result.obs)):
            stamp = pd.Timestamp(result.times[r], unit="s").isoformat()
            writer.writerow([
                stamp,
                "" if np.isnan(result.positions[r, 0]) else repr(float(result.positions[r, 0])),
                "" if np.isnan(result.positions[r, 1]) else repr(float(result.positions[r, 1])),
            ])
    with open(os.path.join(outdir, "preprocess_log.json"), "w") as fh:
        json.dump(result.log, fh, indent=1)
    print(f"wrote {result.log['rows_out']} rows in {result.log['n_segments']} segments "
          f"-> {os.path.join(outdir, 'canonical.csv')}")


def cmd_fit(cfg: dict, outdir: str) -> None:
    obs, cov, names, _ = _load_data(cfg)
    model_cfg = cfg.get("model", {})
    families = list(model_cfg.get("families", ("gamma", "vonmises")))
    init_path = model_cfg.get("init")
    if init_path:
        init = _load_model(init_path)
    else:
        init = default_init(obs, cov, int(model_cfg.get("n_states", 3)), families)
    fit_cfg = cfg.get("fit", {})
    config = FitConfig(
        rel_tol=float(fit_cfg.get("rel_tol", 1e-9)),
        grad_tol=float(fit_cfg.get("grad_tol", 1e-5)),
        max_iter=int(fit_cfg.get("max_iter", 1000)),
        n_restarts=int(fit_cfg.get("n_restarts", 5)),
        restart_scale=float(fit_cfg.get("restart_scale", 0.1)),
        seed=int(cfg["seed"]),
        start=fit_cfg.get("start", "stationary"),
        estimate_initial=bool(fit_cfg.get("estimate_initial", False)),
    )
    fit = fit_mle(obs, cov, init, config)
    if not fit.converged:
        message = "fit did not converge within the iteration cap"
        if cfg["strict"]:
            raise NumericalError(message)
        logger.warning(message)
    ses, se_note = None, None
    try:
        ses = standard_errors(fit).tolist()
    except (SingularMatrixError, InputError) as exc:
        se_note = str(exc)
        logger.warning("standard errors unavailable: %s", exc)
    _save_model(fit.model, os.path.join(outdir, "model.json"))
    report = {
        "loglik": fit.loglik,
        "aic": fit.aic,
        "n_params": fit.n_params,
        "converged": fit.converged,
        "n_evaluations": fit.n_evaluations,
        "working_params": fit.working_params.values.tolist(),
        "standard_errors": ses,
        "standard_error_note": se_note,
        "families": families,
        "covariate_columns": names,
        "seed": cfg["seed"],
    }
    with open(os.path.join(outdir, "fit_report.json"), "w") as fh:
        json.dump(report, fh, indent=1)
    print(f"loglik {fit.loglik:.6f}  aic {fit.aic:.6f}  converged {fit.converged}  "
          f"-> {os.path.join(outdir, 'model.json')}")


def _binning_from(occ: dict) -> BinningConfig:
    return BinningConfig(
        n_bins=int(occ.get("n_bins", 50)),
        range_policy=occ.get("range_policy", "central"),
        min_count=int(occ.get("min_count", 5)),
    )


def _day_of_year(times: np.ndarray, period: float) -> np.ndarray:
    """Phase variable for seasonal detrending: day-of-year when t looks like
    epoch seconds, plain t modulo period otherwise."""
    times = np.asarray(times, dtype=float)
    if times.size and times.max() > 1e8:  # epoch seconds
        stamps = pd.to_datetime(times, unit="s")
        return (stamps.dayofyear + stamps.hour / 24.0).to_numpy(dtype=float)
    return np.mod(times, period)


def _mc_generator(gen_cfg: dict, z: np.ndarray, max_order: int):
    kind = gen_cfg.get("type")
    if kind == "ar" and gen_cfg.get("fit_from_data"):
        ar = fit_ar(z, max_order=max_order)
        return lambda n, rng: simulate_ar(ar, n, int(rng.integers(2**31)))
    if kind == "ar":
        phi = np.asarray(gen_cfg["phi"], dtype=float)
        mean = float(gen_cfg.get("mean", 0.0))
        ar = ArModel(phi.size, phi, mean * (1.0 - phi.sum()), float(gen_cfg["noise_sd"]))
        return lambda n, rng: simulate_ar(ar, n, int(rng.integers(2**31)))
    if kind == "trig":
        amp, period = float(gen_cfg["amplitude"]), float(gen_cfg["period"])
        noise = float(gen_cfg["noise_sd"])

        def gen(n, rng):
            t = np.arange(n, dtype=float)
            return amp * np.sin(2.0 * np.pi * t / period) + rng.normal(0.0, noise, n)

        return gen
    raise InputError("occupancy.mc_generator must have type 'ar' or 'trig'")


def cmd_occupancy(cfg: dict, outdir: str) -> None:
    occ = cfg.get("occupancy", {})
    method = occ.get("method")
    if method not in METHOD_NAMES:
        raise InputError(
            f"occupancy.method (or --method) must be one of {sorted(METHOD_NAMES)}, "
            f"got {method!r}"
        )
    model_path = occ.get("model", os.path.join(outdir, "model.json"))
    model = _load_model(model_path)
    obs, cov, names, times = _load_data(cfg)
    if names:
        z_name = occ.get("covariate", names[0])
        if z_name not in names:
            raise InputError(f"covariate {z_name!r} not in data columns {names}")
        z_index = names.index(z_name)
    else:
        raise InputError("occupancy estimation needs at least one covariate column")
    z = cov.values[:, z_index]
    binning = _binning_from(occ)
    burn_in = int(occ.get("burn_in", 1000))
    seed = int(cfg["seed"])
    resample_length = int(occ.get("resample_length", 1_000_000))
    max_order = int(occ.get("ar_max_order", 5))

    if method != "stationary" and model.n_covariates != 1:
        raise InputError(
            f"the {method} estimator resamples a single covariate; the model uses "
            f"{model.n_covariates} (fit a one-covariate model or use 'stationary')"
        )

    edges = binning.edges(z)
    grid = 0.5 * (edges[:-1] + edges[1:])

    if method == "stationary":
        fixed = cov.values.mean(axis=0)
        curve = hypothetical_stationary_curve(model, grid, fixed, z_index)
    elif method == "ar":
        ar = fit_ar(z, max_order=max_order)
        path = simulate_ar(ar, resample_length, seed=seed)
        curve = occupancy_via_resampling(model, path, binning, "ar-resample", burn_in)
    elif method == "bb":
        block = int(occ.get("bb_block_length", 100))
        detrend_cfg = occ.get("detrend")
        detrend, doy = None, None
        if detrend_cfg:
            period = float(detrend_cfg.get("period", 365.0))
            doy = _day_of_year(times, period)
            detrend = fit_seasonal_trend(z, doy, period)
        bb_cfg = BlockBootstrapConfig(
            block, max(resample_length // block, 1), detrend=detrend
        )
        path = block_bootstrap(z, bb_cfg, seed=seed, timestamps=doy)
        curve = occupancy_via_resampling(model, path, binning, "block-bootstrap", burn_in)
    elif method == "dirichlet":
        probs = propagate_state_probs(model, cov)
        d_cfg = occ.get("dirichlet", {})
        dfit = fit_dirichlet_smooth(probs, z, DirichletConfig(
            n_basis=int(d_cfg.get("n_basis", 10)),
            burn_in=int(d_cfg.get("burn_in", 100)),
        ))
        dfit.save(os.path.join(outdir, "dirichlet_fit.json"))
        lo, hi = dfit.basis.support
        inside = (grid >= lo) & (grid <= hi)
        if not np.any(inside):
            raise InputError("no grid point falls inside the smooth's support")
        curve = predict_occupancy(dfit, grid[inside])
    else:  # mc
        gen_cfg = occ.get("mc_generator")
        if not gen_cfg:
            raise InputError("occupancy.mc_generator is required for method 'mc'")
        gen = _mc_generator(gen_cfg, z, max_order)
        curve = monte_carlo_truth(
            model, gen, length=int(occ.get("mc_length", 10_000_000)),
            config=binning, seed=seed, burn_in=burn_in,
        )

    csv_path = os.path.join(outdir, f"occupancy_{method}.csv")
    curve.to_csv(csv_path)

    probs = propagate_state_probs(model, cov)
    stride = max(1, int(np.ceil(len(probs) / MAX_SCATTER_POINTS)))
    sub = slice(0, None, stride)
    scatters = [
        Scatter(z[sub], probs.values[sub, i], color=PALETTE[i % len(PALETTE)],
                label=f"state {i + 1} (data)")
        for i in range(model.n_states)
    ]
    lines = [
        Line(curve.grid, curve.probs[:, i], color=PALETTE[i % len(PALETTE)],
             width=2.5, label=f"state {i + 1} ({curve.method})")
        for i in range(model.n_states)
    ]
    plot_lines(
        os.path.join(outdir, f"occupancy_{method}.svg"),
        lines, scatters,
        x_label=z_name, y_label="Pr(state | z)",
        title=f"state occupancy — {curve.method}", y_range=(0.0, 1.0),
    )
    print(f"wrote {csv_path}")


def cmd_simulate(cfg: dict, outdir: str) -> None:
    sim = cfg.get("simulate", {})
    setting_id = sim.get("setting", "I")
    spec = load_setting(
        setting_id,
        series_length=sim.get("series_length"),
        n_replicates=sim.get("replicates"),
    )
    estimators = tuple(sim.get("estimators", ("stationary", "ar-resample")))
    fit_cfg = cfg.get("fit", {})
    report = run_experiment(
        spec,
        estimators,
        base_seed=int(cfg["seed"]),
        resample_length=int(sim.get("resample_length", 1_000_000)),
        mc_length=int(sim.get("mc_length", 10_000_000)),
        binning=_binning_from(sim),
        fit_config=FitConfig(
            n_restarts=int(fit_cfg.get("n_restarts", 1)),
            max_iter=int(fit_cfg.get("max_iter", 1000)),
        ),
        init_mode=sim.get("init", "warm"),
        ar_max_order=int(sim.get("ar_max_order", 5)),
    )
    prefix = os.path.join(outdir, f"setting_{setting_id}")
    report.save_curves_csv(f"{prefix}_curves.csv")
    report.save_summary(f"{prefix}_summary.json")

    n_states = spec.true_model.n_states
    for method in report.methods():
        lines = []
        for r in range(report.interpolated[method].shape[0]):
            for i in range(n_states):
                lines.append(Line(
                    report.grid, report.interpolated[method][r, :, i],
                    color=PALETTE[i % len(PALETTE)], width=0.7, opacity=0.25,
                ))
        for i in range(n_states):
            lines.append(Line(
                report.grid, report.truth.probs[:, i], color="#111111",
                width=2.5, label="MC truth" if i == 0 else "",
            ))
        plot_lines(
            f"{prefix}_{method}.svg", lines,
            x_label="z", y_label="Pr(state | z)",
            title=f"Setting {setting_id} — {method} ({len(report.replicates)} replicates)",
            y_range=(0.0, 1.0),
        )

    n_export = int(sim.get("export_replicates", 0))
    for r in range(min(n_export, len(report.replicates))):
        gen_seed = replicate_seeds(int(cfg["seed"]), r)[0]
        obs, cov = generate_setting(spec, gen_seed)
        with open(f"{prefix}_replicate_{r:03d}_data.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            channels = [f"x{c + 1}" for c in range(obs.n_channels)]
            writer.writerow(["t", "segment", *channels, "z"])
            for t in range(len(obs)):
                writer.writerow(
                    [t, int(obs.segment_ids[t])]
                    + [repr(float(v)) for v in obs.values[t]]
                    + [repr(float(cov.values[t, 0]))]
                )
    if len(report.excluded) and cfg["strict"]:
        raise NumericalError(
            f"{len(report.excluded)} replicate fits failed under --strict"
        )
    print(f"setting {setting_id}: {len(report.replicates)} replicates, "
          f"{len(report.excluded)} excluded -> {prefix}_summary.json")


def cmd_decode(cfg: dict, outdir: str) -> None:
    dec = cfg.get("decode", {})
    model = _load_model(dec.get("model", os.path.join(outdir, "model.json")))
    obs, cov, _, times = _load_data(cfg)
    states = viterbi(model, obs, cov, start=dec.get("start", "stationary"))
    out_csv = os.path.join(outdir, "decoded.csv")
    big = np.asarray(times, dtype=float).max() > 1e8 if len(times) else False
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "segment", "state"])
        for r in range(len(obs)):
            stamp = (pd.Timestamp(times[r], unit="s").isoformat() if big
                     else repr(float(times[r])))
            writer.writerow([stamp, int(obs.segment_ids[r]), int(states[r]) + 1])

    positions_path = dec.get("positions")
    if positions_path:
        frame = pd.read_csv(positions_path)
        if len(frame) != len(obs):
            raise InputError(
                f"positions file has {len(frame)} rows, data has {len(obs)}"
            )
        plot_track(
            os.path.join(outdir, "track.svg"),
            frame["x"].to_numpy(dtype=float),
            frame["y"].to_numpy(dtype=float),
            states,
            title="most likely state sequence",
        )
    print(f"wrote {out_csv}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        outdir = _prepare_outdir(cfg)
        handler = {
            "preprocess": cmd_preprocess,
            "fit": cmd_fit,
            "occupancy": cmd_occupancy,
            "simulate": cmd_simulate,
            "decode": cmd_decode,
        }[args.command]
        handler(cfg, outdir)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OccuHmmError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
