"""Model types: covariate-dependent transition structure, emission families,
aligned series containers, and the pointwise density/TPM operations.

Conventions
-----------
* Transition linear predictors: for each ordered state pair ``(i, j)`` with
  ``i != j`` there is one coefficient vector ``(b0, b1, ..., bP)`` so that
  ``eta_ij = b0 + sum_p bp * z[p]``; the diagonal predictors are fixed at 0.
  A row-wise softmax of ``eta`` yields the transition probability matrix.
* Missing observations are encoded as NaN and contribute a density factor
  of 1 (they carry no information about the active state).
* Time series are stored dense with an integer ``segment_ids`` column;
  likelihood and propagation restart at every segment boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, i0e

from .errors import InputError, NumericalError

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


def _pair_order(n_states: int) -> list[tuple[int, int]]:
    """Row-major ordering of off-diagonal state pairs, e.g. (0,1),(0,2),(1,0),..."""
    return [(i, j) for i in range(n_states) for j in range(n_states) if i != j]


@dataclass(frozen=True)
class TransitionCoefficients:
    """Coefficients of the multinomial-logit transition model.

    Parameters
    ----------
    n_states : int
        Number of states N, at least 2.
    n_covariates : int
        Number of covariates P entering each linear predictor (may be 0).
    coefficients : ndarray, shape (N*(N-1), P+1)
        One row per off-diagonal pair in :func:`_pair_order` order; column 0
        is the intercept, columns 1..P the covariate slopes.
    """

    n_states: int
    n_covariates: int
    coefficients: np.ndarray

    def __post_init__(self):
        if self.n_states < 2:
            raise InputError(f"need at least 2 states, got {self.n_states}")
        if self.n_covariates < 0:
            raise InputError("n_covariates must be non-negative")
        coef = np.asarray(self.coefficients, dtype=float)
        expected = (self.n_states * (self.n_states - 1), self.n_covariates + 1)
        if coef.shape != expected:
            raise InputError(
                f"coefficients must have shape {expected}, got {coef.shape}"
            )
        if not np.all(np.isfinite(coef)):
            raise InputError("transition coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return _pair_order(self.n_states)

    def dense(self) -> np.ndarray:
        """Coefficients as an (N, N, P+1) array with zero diagonal rows."""
        out = np.zeros((self.n_states, self.n_states, self.n_covariates + 1))
        for row, (i, j) in enumerate(self.pairs):
            out[i, j] = self.coefficients[row]
        return out

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_covariates": self.n_covariates,
            "coefficients": self.coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionCoefficients":
        return cls(d["n_states"], d["n_covariates"], np.asarray(d["coefficients"]))


def tpm_from_covariates(coeffs: TransitionCoefficients, z) -> np.ndarray:
    """Transition probability matrix at one covariate row.

    Applies a max-subtraction stabilized softmax to each row of linear
    predictors, with the diagonal predictor fixed at 0.

    Parameters
    ----------
    coeffs : TransitionCoefficients
    z : array_like, shape (P,)
        Covariate values; must be finite and match ``coeffs.n_covariates``.

    Returns
    -------
    ndarray, shape (N, N)
        Row-stochastic matrix with strictly positive entries for finite
        predictors.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (coeffs.n_covariates,):
        raise InputError(
            f"covariate row has shape {z.shape}, expected ({coeffs.n_covariates},)"
        )
    n = coeffs.n_states
    eta = np.zeros((n, n))
    zx = np.concatenate(([1.0], z))
    lin = coeffs.coefficients @ zx
    for row, (i, j) in enumerate(coeffs.pairs):
        eta[i, j] = lin[row]
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite transition predictor; check covariate scale")
    m = eta.max(axis=1, keepdims=True)
    ex = np.exp(eta - m)
    return ex / ex.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Emission families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianChannel:
    """Per-state normal distributions for one observed channel."""

    mean: np.ndarray
    sd: np.ndarray
    family = "gaussian"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if mean.shape != sd.shape or mean.ndim != 1:
            raise InputError("gaussian mean/sd must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sd))):
            raise InputError("gaussian parameters must be finite")
        if np.any(sd <= 0):
            raise InputError("gaussian sd must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @property
    def n_states(self) -> int:
        return self.mean.size

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Per-state log densities, shape (len(x), N); NaN rows are zero."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.size, self.n_states))
        ok = ~np.isnan(x)
        zz = (x[ok, None] - self.mean[None, :]) / self.sd[None, :]
        out[ok] = -0.5 * zz**2 - np.log(self.sd)[None, :] - 0.5 * _LOG_2PI
        return out

    def to_dict(self) -> dict:
        return {"family": self.family, "mean": self.mean.tolist(), "sd": self.sd.tolist()}


@dataclass(frozen=True)
class GammaChannel:
    """Per-state gamma distributions parameterized by mean and sd.

    Internally shape = mean^2/sd^2 and scale = sd^2/mean; support is x > 0.
    """

    mean: np.ndarray
    sd: np.ndarray
    family = "gamma"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if mean.shape != sd.shape or mean.ndim != 1:
            raise InputError("gamma mean/sd must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sd))):
            raise InputError("gamma parameters must be finite")
        if np.any(mean <= 0) or np.any(sd <= 0):
            raise InputError("gamma mean and sd must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @property
    def n_states(self) -> int:
        return self.mean.size

    @property
    def shape(self) -> np.ndarray:
        return self.mean**2 / self.sd**2

    @property
    def scale(self) -> np.ndarray:
        return self.sd**2 / self.mean

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.size, self.n_states))
        ok = ~np.isnan(x)
        bad = ok & (x <= 0)
        if np.any(bad):
            logger.warning("gamma channel: %d observations outside support (x <= 0)",
                           int(bad.sum()))
        pos = ok & (x > 0)
        k = self.shape[None, :]
        theta = self.scale[None, :]
        xv = x[pos, None]
        out[pos] = (k - 1) * np.log(xv) - xv / theta - k * np.log(theta) - gammaln(k)
        out[bad] = -np.inf
        return out

    def to_dict(self) -> dict:
        return {"family": self.family, "mean": self.mean.tolist(), "sd": self.sd.tolist()}


@dataclass(frozen=True)
class VonMisesChannel:
    """Per-state von Mises distributions on (-pi, pi].

    ``concentration == 0`` is the uniform circular distribution. The
    normalizer uses the exponentially scaled Bessel function ``i0e`` so large
    concentrations do not overflow.
    """

    mean: np.ndarray
    concentration: np.ndarray
    family = "vonmises"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        kappa = np.atleast_1d(np.asarray(self.concentration, dtype=float))
        if mean.shape != kappa.shape or mean.ndim != 1:
            raise InputError("von Mises mean/concentration must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(kappa))):
            raise InputError("von Mises parameters must be finite")
        if np.any(kappa < 0):
            raise InputError("von Mises concentration must be non-negative")
        if np.any((mean <= -np.pi) | (mean > np.pi)):
            raise InputError("von Mises mean direction must lie in (-pi, pi]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "concentration", kappa)

    @property
    def n_states(self) -> int:
        return self.mean.size

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.size, self.n_states))
        ok = ~np.isnan(x)
        bad = ok & ((x <= -np.pi) | (x > np.pi))
        if np.any(bad):
            logger.warning("von Mises channel: %d angles outside (-pi, pi]",
                           int(bad.sum()))
        sup = ok & ~bad
        kap = self.concentration[None, :]
        out[sup] = kap * (np.cos(x[sup, None] - self.mean[None, :]) - 1.0) - np.log(
            2.0 * np.pi * i0e(self.concentration)
        )[None, :]
        out[bad] = -np.inf
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "mean": self.mean.tolist(),
            "concentration": self.concentration.tolist(),
        }


Channel = GaussianChannel | GammaChannel | VonMisesChannel

_CHANNEL_FAMILIES = {
    "gaussian": GaussianChannel,
    "gamma": GammaChannel,
    "vonmises": VonMisesChannel,
}


def channel_from_dict(d: dict) -> Channel:
    fam = d.get("family")
    if fam == "vonmises":
        return VonMisesChannel(np.asarray(d["mean"]), np.asarray(d["concentration"]))
    if fam in ("gaussian", "gamma"):
        return _CHANNEL_FAMILIES[fam](np.asarray(d["mean"]), np.asarray(d["sd"]))
    raise InputError(f"unknown emission family {fam!r}")


@dataclass(frozen=True)
class EmissionSpec:
    """One emission family per observed channel, parameters per state."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise InputError("at least one emission channel is required")
        n = channels[0].n_states
        if any(c.n_states != n for c in channels):
            raise InputError("all channels must have parameters for the same states")
        object.__setattr__(self, "channels", channels)

    @property
    def n_states(self) -> int:
        return self.channels[0].n_states

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def log_density_matrix(self, values: np.ndarray) -> np.ndarray:
        """Summed per-state log densities over non-missing channels.

        Parameters
        ----------
        values : ndarray, shape (T, n_channels)

        Returns
        -------
        ndarray, shape (T, n_states)
        """
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.n_channels:
            raise InputError(
                f"observation matrix must have {self.n_channels} columns, "
                f"got shape {values.shape}"
            )
        out = np.zeros((values.shape[0], self.n_states))
        for c, channel in enumerate(self.channels):
            out += channel.log_density(values[:, c])
        return out

    def to_dict(self) -> dict:
        return {"channels": [c.to_dict() for c in self.channels]}

    @classmethod
    def from_dict(cls, d: dict) -> "EmissionSpec":
        return cls(tuple(channel_from_dict(c) for c in d["channels"]))


def emission_density(spec: EmissionSpec, state: int, x) -> float:
    """Joint density of one observation row in the given state.

    Missing channels (NaN) contribute a factor of 1; values outside a
    family's support give a density of exactly 0.
    """
    if not 0 <= state < spec.n_states:
        raise InputError(f"state index {state} out of range")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    logd = spec.log_density_matrix(x.reshape(1, -1))[0, state]
    return float(np.exp(logd))


# ---------------------------------------------------------------------------
# Series containers
# ---------------------------------------------------------------------------


def _check_segments(segment_ids: np.ndarray, length: int) -> np.ndarray:
    seg = np.asarray(segment_ids)
    if seg.shape != (length,):
        raise InputError(f"segment_ids must have shape ({length},), got {seg.shape}")
    seg = seg.astype(np.int64)
    if length and np.any(np.diff(seg) < 0):
        raise InputError("segment_ids must be non-decreasing")
    return seg


def segment_slices(segment_ids: np.ndarray) -> list[slice]:
    """Contiguous index slices, one per segment, in time order."""
    seg = np.asarray(segment_ids)
    if seg.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(seg) != 0) + 1
    bounds = np.concatenate(([0], breaks, [seg.size]))
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class ObservationSeries:
    """Observed channels over time; NaN marks missing cells.

    ``segment_ids`` partitions time into contiguous segments that are treated
    as independent by the likelihood.
    """

    values: np.ndarray
    segment_ids: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] == 0:
            raise InputError("observations must be a non-empty (T, C) array")
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "segment_ids", _check_segments(self.segment_ids, values.shape[0])
        )

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def segments(self) -> list[slice]:
        return segment_slices(self.segment_ids)


@dataclass(frozen=True)
class CovariateSeries:
    """Covariate columns over time, complete (no missing values).

    ``time_index`` optionally carries a fractional day-of-year (or other
    periodic clock) per row for seasonal modelling.
    """

    values: np.ndarray
    segment_ids: np.ndarray
    time_index: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] == 0:
            raise InputError("covariates must be a non-empty (T, P) array")
        if not np.all(np.isfinite(values)):
            raise InputError("covariates must be finite (impute or segment first)")
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "segment_ids", _check_segments(self.segment_ids, values.shape[0])
        )
        if self.time_index is not None:
            ti = np.asarray(self.time_index, dtype=float)
            if ti.shape != (values.shape[0],):
                raise InputError("time_index must align with the covariate rows")
            object.__setattr__(self, "time_index", ti)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]

    def segments(self) -> list[slice]:
        return segment_slices(self.segment_ids)

    def column(self, index: int = 0) -> np.ndarray:
        return self.values[:, index]


@dataclass(frozen=True)
class StateProbSeries:
    """Per-time state probability vectors (each row on the simplex)."""

    values: np.ndarray
    segment_ids: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] == 0:
            raise InputError("state probabilities must be a non-empty (T, N) array")
        if np.any(values < 0) or np.any(values > 1):
            raise InputError("state probabilities must lie in [0, 1]")
        err = np.abs(values.sum(axis=1) - 1.0)
        if np.any(err > 1e-10):
            t = int(np.argmax(err))
            raise InputError(
                f"row {t} of state probabilities sums to {values[t].sum():.12f}, not 1"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "segment_ids", _check_segments(self.segment_ids, values.shape[0])
        )

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def segments(self) -> list[slice]:
        return segment_slices(self.segment_ids)


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmmModel:
    """A covariate-driven hidden Markov model.

    ``initial_distribution`` is the stored start distribution; whether it is
    actually used at segment starts depends on the start policy of the
    consuming operation (see :mod:`occuhmm.hmm`).
    """

    n_states: int
    transition: TransitionCoefficients
    emissions: EmissionSpec
    initial_distribution: np.ndarray

    def __post_init__(self):
        if self.n_states != self.transition.n_states:
            raise InputError("transition coefficients disagree with n_states")
        if self.emissions.n_states != self.n_states:
            raise InputError("emission parameters disagree with n_states")
        delta = np.atleast_1d(np.asarray(self.initial_distribution, dtype=float))
        if delta.shape != (self.n_states,):
            raise InputError(
                f"initial distribution must have length {self.n_states}"
            )
        if np.any(delta < 0) or np.any(delta > 1):
            raise InputError("initial distribution entries must lie in [0, 1]")
        if abs(delta.sum() - 1.0) > 1e-12:
            raise InputError(
                f"initial distribution sums to {delta.sum():.15f}, not 1"
            )
        object.__setattr__(self, "initial_distribution", delta)

    @property
    def n_covariates(self) -> int:
        return self.transition.n_covariates

    @property
    def n_channels(self) -> int:
        return self.emissions.n_channels

    def tpm(self, z) -> np.ndarray:
        """Transition matrix at one covariate row."""
        return tpm_from_covariates(self.transition, z)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "transition": self.transition.to_dict(),
            "emissions": self.emissions.to_dict(),
            "initial_distribution": self.initial_distribution.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        return cls(
            n_states=d["n_states"],
            transition=TransitionCoefficients.from_dict(d["transition"]),
            emissions=EmissionSpec.from_dict(d["emissions"]),
            initial_distribution=np.asarray(d["initial_distribution"]),
        )
