"""Replicated simulation experiments comparing the occupancy estimators.

Three shipped covariate regimes stress the estimators differently: a highly
persistent AR(1) (Setting I, where the frozen-covariate stationary
approximation is nearly fine), a moderately persistent AR(1) (Setting II,
where it is badly biased), and a noisy deterministic cycle (Setting III,
where parametric AR resampling misses the periodicity but the block
bootstrap keeps it). All numeric parameters live in ``settings.json`` next
to this module; they were calibrated once against the package's own Monte
Carlo oracle and are not taken from anywhere else.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._kernels import sample_states
from .errors import InputError, NumericalError, OccuHmmError
from .estimation import FitConfig, fit_mle, transform, untransform, default_init
from .hmm import propagate_state_probs, start_distribution
from .model import CovariateSeries, HmmModel, ObservationSeries
from .occupancy import (
    BinningConfig,
    OccupancyCurve,
    count_mass_range,
    hypothetical_stationary_curve,
    monte_carlo_truth,
)
from .resampling import (
    ArModel,
    BlockBootstrapConfig,
    block_bootstrap,
    fit_ar,
    occupancy_via_resampling,
    simulate_ar,
)

logger = logging.getLogger(__name__)

ESTIMATORS = ("stationary", "ar-resample", "block-bootstrap", "dirichlet")
SETTING_IDS = ("I", "II", "III")


@dataclass(frozen=True)
class SettingSpec:
    """One simulation regime: a true model plus a covariate generator.

    ``covariate`` is either ``{"type": "ar", "phi": [...], "noise_sd": s,
    "mean": m}`` or ``{"type": "trig", "amplitude": a, "period": p,
    "noise_sd": s}``.
    """

    id: str
    covariate: dict
    true_model: HmmModel
    series_length: int = 2000
    n_replicates: int = 200
    bb_block_length: int = 100

    def __post_init__(self):
        if self.id not in SETTING_IDS:
            raise InputError(f"setting id must be one of {SETTING_IDS}, got {self.id!r}")
        kind = self.covariate.get("type")
        if kind == "ar":
            # constructing the ArModel validates stationarity
            self.ar_model()
        elif kind == "trig":
            if self.covariate["period"] <= 0 or self.covariate["noise_sd"] < 0:
                raise InputError("trig generator needs positive period and noise sd")
        else:
            raise InputError(f"unknown covariate generator type {kind!r}")
        if self.series_length < 10 or self.n_replicates < 1:
            raise InputError("series_length/n_replicates too small")

    def ar_model(self) -> ArModel:
        c = self.covariate
        if c.get("type") != "ar":
            raise InputError(
                f"setting {self.id} uses a {c.get('type')!r} covariate generator, "
                "not an AR process"
            )
        phi = np.asarray(c["phi"], dtype=float)
        mean = float(c.get("mean", 0.0))
        return ArModel(phi.size, phi, mean * (1.0 - phi.sum()), float(c["noise_sd"]))

    def covariate_path(self, length: int, seed: int) -> np.ndarray:
        """Simulate one covariate trajectory; deterministic given seed."""
        c = self.covariate
        if c["type"] == "ar":
            return simulate_ar(self.ar_model(), length, seed)
        t = np.arange(length, dtype=float)
        cycle = c["amplitude"] * np.sin(2.0 * np.pi * t / c["period"])
        rng = np.random.default_rng(seed)
        return cycle + rng.normal(0.0, c["noise_sd"], size=length)


def load_setting(
    setting_id: str,
    series_length: int | None = None,
    n_replicates: int | None = None,
) -> SettingSpec:
    """Load a shipped setting (I, II or III) from the packaged settings file."""
    doc = json.loads(resources.files("occuhmm").joinpath("settings.json").read_text())
    if setting_id not in doc["settings"]:
        raise InputError(f"unknown setting {setting_id!r}; shipped: {sorted(doc['settings'])}")
    return SettingSpec(
        id=setting_id,
        covariate=doc["settings"][setting_id],
        true_model=HmmModel.from_dict(doc["model"]),
        series_length=series_length or int(doc["series_length"]),
        n_replicates=n_replicates or int(doc["replicates"]),
        bb_block_length=int(doc["bb_block_length"]),
    )


def simulate_series(
    model: HmmModel,
    covariate_path: np.ndarray,
    seed: int,
    start: str = "stationary",
) -> tuple[ObservationSeries, CovariateSeries, np.ndarray]:
    """Sample states and observations along a given covariate path.

    Returns the observation series, the covariate series, and the simulated
    state sequence (0-based) for oracle comparisons.
    """
    z = np.asarray(covariate_path, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    t_len = z.shape[0]
    seg = np.zeros(t_len, dtype=np.int64)
    cov = CovariateSeries(z, seg)
    rng = np.random.default_rng(seed)
    delta0 = start_distribution(model, z[0], start)
    s0 = int(rng.choice(model.n_states, p=delta0))
    states = sample_states(model.transition.dense(), z, rng.random(t_len), s0)
    values = np.empty((t_len, model.n_channels))
    for c, ch in enumerate(model.emissions.channels):
        if ch.family == "gaussian":
            values[:, c] = rng.normal(ch.mean[states], ch.sd[states])
        elif ch.family == "gamma":
            shape = (ch.mean / ch.sd) ** 2
            scale = ch.sd**2 / ch.mean
            values[:, c] = rng.gamma(shape[states], scale[states])
        else:
            draw = rng.vonmises(ch.mean[states], ch.concentration[states])
            values[:, c] = np.where(draw <= -np.pi, np.pi, draw)
    return ObservationSeries(values, seg), cov, states


def generate_setting(
    spec: SettingSpec, seed: int
) -> tuple[ObservationSeries, CovariateSeries]:
    """Generate one replicate dataset for a setting; deterministic given seed."""
    ss = np.random.SeedSequence([int(seed), 0x5E7])
    cov_seed, emit_seed = (int(s) for s in ss.generate_state(2))
    path = spec.covariate_path(spec.series_length, cov_seed)
    obs, cov, _ = simulate_series(spec.true_model, path, emit_seed)
    return obs, cov


def replicate_seeds(base_seed: int, replicate: int) -> tuple[int, int, int, int, int]:
    """Per-replicate derived seeds (generate, init, ar, bootstrap, fit).

    Shared by :func:`run_experiment` and anything that needs to replay a
    single replicate (e.g. data export) on the exact same stream.
    """
    ss = np.random.SeedSequence([base_seed, replicate])
    return tuple(int(s) for s in ss.generate_state(5))


def setting_truth(
    spec: SettingSpec,
    length: int = 10_000_000,
    seed: int = 0,
    binning: BinningConfig | None = None,
) -> OccupancyCurve:
    """Monte Carlo occupancy truth for a setting's covariate regime."""
    return monte_carlo_truth(
        spec.true_model,
        lambda n, rng: spec.covariate_path(n, int(rng.integers(2**31))),
        length=length,
        config=binning,
        seed=seed,
    )


@dataclass
class ReplicateRecord:
    """One replicate's fit summary and estimator curves (on their own grids)."""

    index: int
    loglik: float
    aic: float
    converged: bool
    n_evaluations: int
    curves: dict[str, OccupancyCurve]
    ar_model: ArModel | None = None


@dataclass
class ExperimentReport:
    """Replicated estimator comparison against one Monte Carlo truth curve.

    All aggregate statistics live on the truth's grid; replicate curves are
    interpolated onto it (NaN outside their own support).
    """

    spec: SettingSpec
    truth: OccupancyCurve
    replicates: list[ReplicateRecord]
    excluded: list[tuple[int, str]]
    base_seed: int
    resample_length: int
    interpolated: dict[str, np.ndarray] = field(default_factory=dict)  # (R,G,N)
    interp_counts: dict[str, np.ndarray] = field(default_factory=dict)  # (R,G)

    @property
    def grid(self) -> np.ndarray:
        return self.truth.grid

    def methods(self) -> list[str]:
        return sorted(self.interpolated)

    def mean_curve(self, method: str, weighted: bool = False) -> np.ndarray:
        """Replicate-averaged curve on the common grid, NaN where undefined.

        ``weighted=True`` weights each replicate's bin by its sample count
        (falls back to the plain mean for analytic curves with no counts).
        """
        probs = self.interpolated[method]
        counts = self.interp_counts[method]
        if weighted and counts.sum() > 0:
            w = np.where(np.isnan(probs[:, :, 0]), 0.0, counts)
            num = np.nansum(np.where(np.isnan(probs), 0.0, probs) * w[:, :, None], axis=0)
            den = w.sum(axis=0)
            out = np.full(probs.shape[1:], np.nan)
            ok = den > 0
            out[ok] = num[ok] / den[ok, None]
            return out
        with np.errstate(invalid="ignore"):
            return np.nanmean(probs, axis=0)

    def envelope(self, method: str, lo: float = 2.5, hi: float = 97.5):
        probs = self.interpolated[method]
        with np.errstate(invalid="ignore"):
            return (np.nanpercentile(probs, lo, axis=0),
                    np.nanpercentile(probs, hi, axis=0))

    def _range_mask(self, z_range: tuple[float, float] | None) -> np.ndarray:
        mask = self.truth.defined()
        if z_range is not None:
            mask &= (self.grid >= z_range[0]) & (self.grid <= z_range[1])
        return mask

    def bias(self, method: str, weighted: bool = False) -> np.ndarray:
        return self.mean_curve(method, weighted) - self.truth.probs

    def max_abs_bias(
        self,
        method: str,
        z_range: tuple[float, float] | None = None,
        weighted: bool = False,
    ) -> float:
        """Largest pointwise |mean curve - truth| over states and grid."""
        b = self.bias(method, weighted)
        mask = self._range_mask(z_range) & ~np.isnan(b).any(axis=1)
        if not np.any(mask):
            raise InputError(f"no common support for method {method!r} in {z_range}")
        return float(np.abs(b[mask]).max())

    def mean_abs_bias(
        self,
        method: str,
        z_range: tuple[float, float] | None = None,
        weighted: bool = False,
    ) -> float:
        b = self.bias(method, weighted)
        mask = self._range_mask(z_range) & ~np.isnan(b).any(axis=1)
        if not np.any(mask):
            raise InputError(f"no common support for method {method!r} in {z_range}")
        return float(np.abs(b[mask]).mean())

    def envelope_coverage(
        self, method: str, z_range: tuple[float, float] | None = None
    ) -> float:
        """Fraction of grid points whose 2.5-97.5% envelope contains the truth."""
        lo, hi = self.envelope(method)
        mask = self._range_mask(z_range) & ~np.isnan(lo).any(axis=1)
        if not np.any(mask):
            raise InputError(f"no common support for method {method!r}")
        inside = (self.truth.probs[mask] >= lo[mask]) & (self.truth.probs[mask] <= hi[mask])
        return float(inside.all(axis=1).mean())

    def central_range(self, frac: float) -> tuple[float, float]:
        return count_mass_range(self.truth, frac)

    def summary(self) -> dict:
        """JSON-ready aggregate: bias statistics plus plot-ready curves."""
        lo90 = self.central_range(0.9)
        lo50 = self.central_range(0.5)
        methods = {}
        for m in self.methods():
            lo_env, hi_env = self.envelope(m)
            methods[m] = {
                "max_abs_bias": self.max_abs_bias(m),
                "max_abs_bias_central90": self.max_abs_bias(m, lo90),
                "mean_abs_bias_central50": self.mean_abs_bias(m, lo50),
                "max_abs_bias_weighted": self.max_abs_bias(m, weighted=True),
                "envelope_coverage_central90": self.envelope_coverage(m, lo90),
                "mean_curve": _nan_to_none(self.mean_curve(m)),
                "weighted_mean_curve": _nan_to_none(self.mean_curve(m, weighted=True)),
                "envelope_lo": _nan_to_none(lo_env),
                "envelope_hi": _nan_to_none(hi_env),
            }
        return {
            "setting": self.spec.id,
            "series_length": self.spec.series_length,
            "n_replicates": len(self.replicates),
            "n_excluded": len(self.excluded),
            "excluded": [{"replicate": i, "reason": r} for i, r in self.excluded],
            "base_seed": self.base_seed,
            "resample_length": self.resample_length,
            "central90_range": list(lo90),
            "central50_range": list(lo50),
            "grid": self.grid.tolist(),
            "truth": self.truth.probs.tolist(),
            "truth_counts": self.truth.counts.tolist(),
            "methods": methods,
            "replicate_fits": [
                {
                    "index": r.index,
                    "loglik": r.loglik,
                    "aic": r.aic,
                    "converged": r.converged,
                    "n_evaluations": r.n_evaluations,
                    "ar_model": r.ar_model.to_dict() if r.ar_model else None,
                }
                for r in self.replicates
            ],
        }

    def save_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)

    def save_curves_csv(self, path) -> None:
        """Per-replicate curves, long format, on each curve's own grid."""
        n = self.spec.true_model.n_states
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["replicate", "method", "z", "count"] + [f"p_{i+1}" for i in range(n)]
            )
            for rec in self.replicates:
                for method, curve in sorted(rec.curves.items()):
                    for k in range(curve.grid.size):
                        if np.isnan(curve.probs[k]).any():
                            ps = [""] * n
                        else:
                            ps = [repr(float(p)) for p in curve.probs[k]]
                        writer.writerow(
                            [rec.index, method, repr(float(curve.grid[k])),
                             int(curve.counts[k])] + ps
                        )


def _nan_to_none(arr: np.ndarray) -> list:
    return [[None if np.isnan(v) else float(v) for v in row] for row in np.atleast_2d(arr)]


def _perturbed_init(model: HmmModel, seed: int, scale: float = 0.1) -> HmmModel:
    """Truth-adjacent starting model: relative Gaussian jitter in working space."""
    theta = transform(model).values
    rng = np.random.default_rng(seed)
    jitter = rng.normal(scale=scale * (1.0 + np.abs(theta)))
    return untransform(theta + jitter, model)


def run_experiment(
    spec: SettingSpec,
    estimators: tuple[str, ...] = ("stationary", "ar-resample"),
    n_replicates: int | None = None,
    base_seed: int = 0,
    resample_length: int = 1_000_000,
    mc_length: int = 10_000_000,
    binning: BinningConfig | None = None,
    fit_config: FitConfig | None = None,
    init_mode: str = "warm",
    ar_max_order: int = 5,
    truth: OccupancyCurve | None = None,
) -> ExperimentReport:
    """Run the replicate experiment for one setting.

    Per replicate: simulate a dataset, fit the model (default: initialized
    near the truth with seeded perturbation; ``init_mode="cold"`` uses the
    data-driven default init), compute each requested estimator's curve,
    and interpolate it onto the Monte Carlo truth grid. Failed or
    non-converged fits are excluded and logged; the experiment aborts if
    more than 20% of replicates fail. Fully deterministic given
    ``base_seed`` (a precomputed ``truth`` may be passed to share it across
    experiments; it must come from :func:`setting_truth` for this spec).

    Raises
    ------
    InputError
        Unknown estimator name or init mode.
    NumericalError
        More than 20% of replicate fits failed.
    """
    for m in estimators:
        if m not in ESTIMATORS:
            raise InputError(f"unknown estimator {m!r}; choose from {ESTIMATORS}")
    if init_mode not in ("warm", "cold"):
        raise InputError("init_mode must be 'warm' or 'cold'")
    n_rep = n_replicates or spec.n_replicates
    fit_config = fit_config or FitConfig(n_restarts=1)

    if truth is None:
        mc_seed = int(np.random.SeedSequence([base_seed, 0xD1CE]).generate_state(1)[0])
        logger.info("computing MC truth for setting %s (length %d)", spec.id, mc_length)
        truth = setting_truth(spec, length=mc_length, seed=mc_seed, binning=binning)

    replicates: list[ReplicateRecord] = []
    excluded: list[tuple[int, str]] = []
    interp: dict[str, list[np.ndarray]] = {m: [] for m in estimators}
    interp_counts: dict[str, list[np.ndarray]] = {m: [] for m in estimators}

    for r in range(n_rep):
        gen_seed, init_seed, ar_seed, bb_seed, fit_seed = replicate_seeds(base_seed, r)
        obs, cov = generate_setting(spec, gen_seed)
        try:
            if init_mode == "warm":
                init = _perturbed_init(spec.true_model, init_seed)
            else:
                init = default_init(
                    obs, cov, spec.true_model.n_states,
                    [ch.family for ch in spec.true_model.emissions.channels],
                )
            fit = fit_mle(obs, cov, init, FitConfig(
                rel_tol=fit_config.rel_tol,
                grad_tol=fit_config.grad_tol,
                max_iter=fit_config.max_iter,
                n_restarts=fit_config.n_restarts,
                restart_scale=fit_config.restart_scale,
                seed=fit_seed,
                start=fit_config.start,
                estimate_initial=fit_config.estimate_initial,
            ))
            if not fit.converged:
                raise NumericalError("optimizer did not converge")
        except OccuHmmError as exc:
            logger.warning("replicate %d excluded: %s", r, exc)
            excluded.append((r, str(exc)))
            continue

        record = ReplicateRecord(
            index=r, loglik=fit.loglik, aic=fit.aic, converged=fit.converged,
            n_evaluations=fit.n_evaluations, curves={},
        )
        z = cov.column(0)
        for method in estimators:
            if method == "stationary":
                curve = hypothetical_stationary_curve(fit.model, truth.grid)
            elif method == "ar-resample":
                ar = fit_ar(z, max_order=ar_max_order)
                record.ar_model = ar
                path = simulate_ar(ar, resample_length, seed=ar_seed)
                curve = occupancy_via_resampling(
                    fit.model, path, config=binning, method="ar-resample"
                )
            elif method == "block-bootstrap":
                cfg = BlockBootstrapConfig(
                    spec.bb_block_length,
                    max(resample_length // spec.bb_block_length, 1),
                )
                path = block_bootstrap(z, cfg, seed=bb_seed)
                curve = occupancy_via_resampling(
                    fit.model, path, config=binning, method="block-bootstrap"
                )
            else:  # dirichlet
                from .dirichlet import DirichletConfig, fit_dirichlet_smooth, predict_occupancy

                probs = propagate_state_probs(fit.model, cov)
                dfit = fit_dirichlet_smooth(probs, z, DirichletConfig())
                lo, hi = dfit.basis.support
                inside = (truth.grid >= lo) & (truth.grid <= hi)
                sub = predict_occupancy(dfit, truth.grid[inside])
                full = np.full((truth.grid.size, spec.true_model.n_states), np.nan)
                full[inside] = sub.probs
                curve = OccupancyCurve(
                    truth.grid, full, np.zeros(truth.grid.size, dtype=np.int64), "dirichlet"
                )
            record.curves[method] = curve
            probs_i, counts_i = curve.interp_to(truth.grid)
            interp[method].append(probs_i)
            interp_counts[method].append(counts_i)
        replicates.append(record)
        logger.info("replicate %d/%d done (loglik %.1f)", r + 1, n_rep, fit.loglik)

    if len(excluded) > 0.2 * n_rep:
        raise NumericalError(
            f"{len(excluded)}/{n_rep} replicate fits failed; experiment aborted "
            f"(reasons: {[rsn for _, rsn in excluded[:5]]}...)"
        )
    return ExperimentReport(
        spec=spec,
        truth=truth,
        replicates=replicates,
        excluded=excluded,
        base_seed=base_seed,
        resample_length=resample_length,
        interpolated={m: np.stack(v) for m, v in interp.items() if v},
        interp_counts={m: np.stack(v) for m, v in interp_counts.items() if v},
    )
