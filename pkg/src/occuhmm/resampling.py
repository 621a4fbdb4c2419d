"""Synthetic covariate trajectories and the occupancy estimators built on them.

Two generators match the empirical covariate dynamics: a parametric AR(p)
model estimated by conditional least squares, and a non-overlapping block
bootstrap with optional seasonal detrending. Either feeds
:func:`occupancy_via_resampling`, which propagates a fitted HMM along the
synthetic path and bins the resulting state probabilities.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfiltic

from .errors import InputError, NumericalError, SingularMatrixError
from .model import CovariateSeries, HmmModel
from .hmm import propagate_state_probs
from .occupancy import BinningConfig, OccupancyCurve, bin_occupancy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArModel:
    """Stationary AR(p) process Z_t = c + sum_i phi_i Z_{t-i} + eps_t."""

    order: int
    coefficients: np.ndarray
    intercept: float
    noise_sd: float

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if self.order < 0 or phi.shape != (self.order,):
            raise InputError(f"need exactly {self.order} coefficients for order {self.order}")
        if not np.all(np.isfinite(phi)) or not np.isfinite(self.intercept):
            raise InputError("AR parameters must be finite")
        if not self.noise_sd > 0:
            raise InputError("noise sd must be positive")
        if self.order > 0:
            # roots of 1 - phi_1 x - ... - phi_p x^p must lie outside the unit circle
            roots = np.roots(np.concatenate(([1.0], -phi))[::-1])
            if np.any(np.abs(roots) <= 1.0 + 1e-10):
                raise InputError(
                    f"AR({self.order}) coefficients are not stationary "
                    f"(root moduli {np.sort(np.abs(roots))})"
                )
        object.__setattr__(self, "coefficients", phi)

    @property
    def mean(self) -> float:
        return self.intercept / (1.0 - self.coefficients.sum())

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArModel":
        return cls(int(d["order"]), np.asarray(d["coefficients"], dtype=float),
                   float(d["intercept"]), float(d["noise_sd"]))


def fit_ar(series: np.ndarray, max_order: int = 5) -> ArModel:
    """Fit an AR(p) model, selecting p <= max_order by AIC.

    Conditional least squares on the mean-centered series. All candidate
    orders are scored on the same trailing sample (the first ``max_order``
    values condition every fit) so their AICs are comparable; the winner is
    then refit on its full usable sample. Non-stationary candidates are
    skipped in AIC order.

    Raises
    ------
    InputError
        Series too short (needs length > 10*max_order) or zero variance.
    NumericalError
        No candidate order yields a stationary model.
    """
    y = np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise InputError("series must be finite")
    if y.size <= 10 * max_order or y.size < 10:
        raise InputError(f"series of length {y.size} is too short for max_order={max_order}")
    mu = y.mean()
    yc = y - mu
    if yc.std() == 0:
        raise InputError("series has zero variance; nothing to fit")

    def cls_fit(p: int, offset: int) -> tuple[np.ndarray, float, int]:
        """least-squares phi, residual variance, effective sample size"""
        target = yc[offset:]
        n_eff = target.size
        if p == 0:
            return np.empty(0), float(np.mean(target**2)), n_eff
        design = np.column_stack([yc[offset - k : -k] for k in range(1, p + 1)])
        phi, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ phi
        return phi, float(np.mean(resid**2)), n_eff

    scored = []
    for p in range(max_order + 1):
        phi, sigma2, n_eff = cls_fit(p, max_order)
        aic = n_eff * np.log(max(sigma2, 1e-300)) + 2.0 * (p + 1)
        scored.append((aic, p))
    scored.sort()

    for aic, p in scored:
        phi, sigma2, _ = cls_fit(p, max(p, 1) if p > 0 else 0)
        if p > 0:
            roots = np.roots(np.concatenate(([1.0], -phi))[::-1])
            if np.any(np.abs(roots) <= 1.0 + 1e-10):
                logger.info("AR(%d) refit is non-stationary, trying next-best order", p)
                continue
        intercept = mu * (1.0 - phi.sum())
        logger.debug("selected AR(%d), aic=%.2f, sigma=%.4f", p, aic, np.sqrt(sigma2))
        return ArModel(p, phi, float(intercept), float(np.sqrt(sigma2)))
    raise NumericalError("no stationary AR candidate up to order %d" % max_order)


def simulate_ar(model: ArModel, length: int, seed: int) -> np.ndarray:
    """Simulate a stationary AR path of the given length.

    Gaussian innovations; the recursion starts at the process mean and a
    warm-up of 10*order + 100 steps is discarded, so the output is (near-)
    stationary from its first value. Deterministic given the seed.
    """
    if length < 1:
        raise InputError("length must be positive")
    rng = np.random.default_rng(seed)
    warmup = 10 * model.order + 100
    eps = rng.normal(scale=model.noise_sd, size=length + warmup)
    drive = model.intercept + eps
    if model.order == 0:
        return drive[warmup:]
    a = np.concatenate(([1.0], -model.coefficients))
    zi = lfiltic([1.0], a, y=np.full(model.order, model.mean))
    out, _ = lfilter([1.0], a, drive, zi=zi)
    return out[warmup:]


@dataclass(frozen=True)
class SeasonalTrend:
    """First-harmonic seasonal regression: b0 + b1*sin + b2*cos of 2*pi*doy/period."""

    period: float
    coefficients: np.ndarray  # (b0, b1, b2)
    residual_sd: float

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (3,) or not np.all(np.isfinite(coef)):
            raise InputError("need three finite trend coefficients")
        if not self.period > 0:
            raise InputError("period must be positive")
        object.__setattr__(self, "coefficients", coef)

    def predict(self, timestamps: np.ndarray) -> np.ndarray:
        t = np.asarray(timestamps, dtype=float)
        w = 2.0 * np.pi * t / self.period
        b0, b1, b2 = self.coefficients
        return b0 + b1 * np.sin(w) + b2 * np.cos(w)

    def residuals(self, series: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
        return np.asarray(series, dtype=float) - self.predict(timestamps)

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "coefficients": self.coefficients.tolist(),
            "residual_sd": self.residual_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeasonalTrend":
        return cls(float(d["period"]), np.asarray(d["coefficients"], dtype=float),
                   float(d["residual_sd"]))


def fit_seasonal_trend(
    series: np.ndarray, timestamps: np.ndarray, period: float = 365.0
) -> SeasonalTrend:
    """OLS fit of the first-harmonic seasonal regression.

    ``timestamps`` is the day-of-year (or phase variable) per index.

    Raises
    ------
    SingularMatrixError
        Collinear regressors, e.g. every observation at the same day-of-year.
    """
    y = np.asarray(series, dtype=float).ravel()
    t = np.asarray(timestamps, dtype=float).ravel()
    if y.size != t.size:
        raise InputError("series and timestamps must align")
    if y.size < 10:
        raise InputError("need at least 10 observations for a seasonal fit")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise InputError("series and timestamps must be finite")
    w = 2.0 * np.pi * t / period
    design = np.column_stack([np.ones_like(w), np.sin(w), np.cos(w)])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 3:
        raise SingularMatrixError(
            "seasonal regressors are collinear (design rank "
            f"{rank} < 3); are all timestamps equal?"
        )
    resid = y - design @ coef
    dof = max(y.size - 3, 1)
    return SeasonalTrend(period, coef, float(np.sqrt(resid @ resid / dof)))


@dataclass(frozen=True)
class BlockBootstrapConfig:
    """Non-overlapping block bootstrap settings.

    ``block_length`` consecutive values form one block; ``output_blocks``
    of them are drawn with replacement. If ``detrend`` is given the
    bootstrap runs on trend residuals and the trend is re-added on a
    synthetic timestamp sequence.
    """

    block_length: int
    output_blocks: int
    detrend: SeasonalTrend | None = None

    def __post_init__(self):
        if self.block_length < 1:
            raise InputError("block_length must be at least 1")
        if self.output_blocks < 1:
            raise InputError("output_blocks must be at least 1")


def _native_step(timestamps: np.ndarray, period: float) -> float:
    """Median sampling interval, tolerating wrap-around at the period."""
    diffs = np.diff(np.asarray(timestamps, dtype=float))
    diffs = np.where(diffs < -period / 2.0, diffs + period, diffs)
    diffs = diffs[diffs > 0]
    if diffs.size == 0:
        return 1.0
    return float(np.median(diffs))


def block_bootstrap(
    series: np.ndarray,
    config: BlockBootstrapConfig,
    seed: int,
    timestamps: np.ndarray | None = None,
) -> np.ndarray:
    """Resample a series into length block_length * output_blocks.

    The (detrended, if configured) series is cut into floor(T/L)
    consecutive non-overlapping blocks, the tail remainder is discarded,
    and ``output_blocks`` block indices are drawn uniformly with
    replacement. With detrending, the seasonal trend is re-added along a
    synthetic day-of-year sequence that restarts at the first observed
    timestamp and advances at the native sampling interval. Deterministic
    given the seed.
    """
    y = np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise InputError("series must be finite")
    if config.block_length > y.size:
        raise InputError(
            f"block length {config.block_length} exceeds series length {y.size}"
        )
    if config.detrend is not None:
        if timestamps is None:
            raise InputError("detrending requires timestamps")
        y = config.detrend.residuals(y, timestamps)
    n_blocks = y.size // config.block_length
    if n_blocks == 0:
        raise InputError("series yields zero complete blocks")
    blocks = y[: n_blocks * config.block_length].reshape(n_blocks, config.block_length)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_blocks, size=config.output_blocks)
    out = blocks[idx].reshape(-1)
    if config.detrend is not None:
        period = config.detrend.period
        step = _native_step(timestamps, period)
        t0 = float(np.asarray(timestamps, dtype=float).ravel()[0])
        synth = np.mod(t0 + step * np.arange(out.size), period)
        out = out + config.detrend.predict(synth)
    return out


def occupancy_via_resampling(
    model: HmmModel,
    synthetic_cov: np.ndarray,
    config: BinningConfig | None = None,
    method: str = "ar-resample",
    burn_in: int = 1000,
    start: str = "stationary",
) -> OccupancyCurve:
    """Occupancy curve from a synthetic covariate path.

    Propagates the model's state probabilities along the path (one
    uninterrupted segment — bootstrap seams are crossed directly and washed
    out by burn-in plus bin averaging) and bins them. Warns, with a
    bin-count report, when fewer than 80% of bins reach the count
    threshold.
    """
    if method not in ("ar-resample", "block-bootstrap"):
        raise InputError(f"method must be 'ar-resample' or 'block-bootstrap', got {method!r}")
    config = config or BinningConfig()
    path = np.asarray(synthetic_cov, dtype=float).ravel()
    series = CovariateSeries(path.reshape(-1, 1), np.zeros(path.size, dtype=np.int64))
    probs = propagate_state_probs(model, series, start=start)
    curve = bin_occupancy(probs, path, config=config, burn_in=burn_in)
    covered = np.count_nonzero(curve.counts >= config.min_count)
    if covered < 0.8 * config.n_bins:
        warnings.warn(
            f"only {covered}/{config.n_bins} bins reach min_count="
            f"{config.min_count}; counts: {curve.counts.tolist()}",
            stacklevel=2,
        )
    return OccupancyCurve(curve.grid, curve.probs, curve.counts, method)
