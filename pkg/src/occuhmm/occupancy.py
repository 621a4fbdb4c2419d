"""Covariate-dependent state occupancy: stationary approximation, binning
estimator, and the Monte Carlo ground truth.

An :class:`OccupancyCurve` is the common output format of every estimator in
the package: a strictly increasing covariate grid with one probability
vector per grid point (NaN rows where a bin had too few samples), the
per-bin sample counts, and a method tag.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InputError, NonUniquenessError
from .hmm import propagate_state_probs
from .model import CovariateSeries, HmmModel, StateProbSeries

logger = logging.getLogger(__name__)

METHOD_TAGS = (
    "stationary",
    "binned",
    "ar-resample",
    "block-bootstrap",
    "dirichlet",
    "monte-carlo",
)


def stationary_distribution(tpm: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solves the linear system (I - G' + 1)x = 1, where 1 is the all-ones
    matrix; this folds the normalization constraint into the balance
    equations. The result is checked to satisfy x G = x to 1e-12 in max
    norm and to be a proper distribution.

    Raises
    ------
    NonUniquenessError
        If the system is singular or the residual check fails (reducible or
        periodic chain).
    """
    g = np.asarray(tpm, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise InputError(f"transition matrix must be square, got shape {g.shape}")
    n = g.shape[0]
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise InputError("transition matrix entries must be finite and non-negative")
    if np.any(np.abs(g.sum(axis=1) - 1.0) > 1e-8):
        raise InputError("transition matrix rows must sum to 1")
    a = np.eye(n) - g.T + np.ones((n, n))
    try:
        x = np.linalg.solve(a, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise NonUniquenessError(
            f"stationary distribution is not unique: {exc}"
        ) from exc
    residual = np.max(np.abs(x @ g - x))
    if residual > 1e-12 or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise NonUniquenessError(
            "stationary distribution is not unique or not reachable "
            f"(residual {residual:.3e}); is the chain irreducible and aperiodic?"
        )
    return x


@dataclass(frozen=True)
class BinningConfig:
    """How a covariate axis is cut into equidistant bins.

    ``range_policy`` is either ``"central"`` (default, the
    [``quantiles[0]``, ``quantiles[1]``] sample quantile range, which drops
    the rarely visited extreme tails) or ``"full"`` (observed min to max).
    Bins with fewer than ``min_count`` samples report a missing probability
    row but keep their count.
    """

    n_bins: int = 50
    range_policy: str = "central"
    quantiles: tuple[float, float] = (0.005, 0.995)
    min_count: int = 5

    def __post_init__(self):
        if self.n_bins < 2:
            raise InputError("at least 2 bins are required")
        if self.range_policy not in ("central", "full"):
            raise InputError(f"unknown range policy {self.range_policy!r}")
        lo, hi = self.quantiles
        if not 0.0 <= lo < hi <= 1.0:
            raise InputError("quantile bounds must satisfy 0 <= lo < hi <= 1")
        if self.min_count < 1:
            raise InputError("min_count must be at least 1")

    def edges(self, sample: np.ndarray) -> np.ndarray:
        """Bin edges (length n_bins + 1) for one covariate sample."""
        sample = np.asarray(sample, dtype=float)
        if self.range_policy == "central":
            lo, hi = np.quantile(sample, self.quantiles)
        else:
            lo, hi = sample.min(), sample.max()
        if not hi > lo:
            # degenerate sample; widen so a constant series occupies one bin
            span = max(abs(lo), 1.0) * 1e-9
            lo, hi = lo - span, hi + span
        return np.linspace(lo, hi, self.n_bins + 1)


@dataclass(frozen=True)
class OccupancyCurve:
    """State occupancy probabilities over a covariate grid.

    ``probs`` rows are NaN where a bin was below the count threshold;
    ``counts`` is 0 everywhere for analytic (sample-free) curves.
    """

    grid: np.ndarray
    probs: np.ndarray
    counts: np.ndarray
    method: str

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if grid.ndim != 1 or grid.size == 0:
            raise InputError("grid must be a non-empty 1-d array")
        if np.any(np.diff(grid) <= 0):
            raise InputError("grid must be strictly increasing")
        if probs.shape != (grid.size, probs.shape[1] if probs.ndim == 2 else -1):
            raise InputError("probs must be a (len(grid), N) array")
        if counts.shape != (grid.size,):
            raise InputError("counts must align with the grid")
        ok = ~np.isnan(probs).any(axis=1)
        if np.any(ok):
            sums = probs[ok].sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-10) or np.any(probs[ok] < -1e-15):
                raise InputError("non-missing probability rows must lie on the simplex")
        if self.method not in METHOD_TAGS:
            raise InputError(f"unknown method tag {self.method!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "counts", counts)

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    def defined(self) -> np.ndarray:
        """Boolean mask of grid points with a reported probability row."""
        return ~np.isnan(self.probs).any(axis=1)

    def interp_to(self, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of probs and counts onto another grid.

        Target points outside this curve's defined support come back NaN
        (probabilities) and 0 (counts).
        """
        grid = np.asarray(grid, dtype=float)
        ok = self.defined()
        probs = np.full((grid.size, self.n_states), np.nan)
        counts = np.zeros(grid.size)
        if ok.sum() == 0:
            return probs, counts
        x = self.grid[ok]
        inside = (grid >= x[0]) & (grid <= x[-1])
        for i in range(self.n_states):
            probs[inside, i] = np.interp(grid[inside], x, self.probs[ok, i])
        counts[inside] = np.interp(grid[inside], x, self.counts[ok].astype(float))
        return probs, counts

    def to_csv(self, path) -> None:
        """Write as CSV with fixed column order z, count, p_1..p_N, method."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["z", "count"] + [f"p_{i + 1}" for i in range(self.n_states)] + ["method"]
            )
            for k in range(self.grid.size):
                row = [repr(float(self.grid[k])), int(self.counts[k])]
                if np.isnan(self.probs[k]).any():
                    row += [""] * self.n_states
                else:
                    row += [repr(float(p)) for p in self.probs[k]]
                writer.writerow(row + [self.method])

    @classmethod
    def from_csv(cls, path) -> "OccupancyCurve":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n_states = len(header) - 3
            grid, probs, counts, method = [], [], [], None
            for row in reader:
                grid.append(float(row[0]))
                counts.append(int(row[1]))
                ps = row[2 : 2 + n_states]
                probs.append([float(p) if p else np.nan for p in ps])
                method = row[-1]
        return cls(np.array(grid), np.array(probs), np.array(counts), method)


def hypothetical_stationary_curve(
    model: HmmModel,
    grid: np.ndarray,
    fixed_covariates: np.ndarray | None = None,
    covariate_index: int = 0,
) -> OccupancyCurve:
    """Stationary distribution of the frozen-covariate TPM over a grid.

    For each grid value the covariate of interest is fixed at that value,
    any remaining covariates at ``fixed_covariates`` (typically their
    means), and the stationary distribution of the resulting constant TPM
    is computed. This ignores the dynamics of the covariate process
    entirely, which is exactly why it can be badly biased for volatile
    covariates.
    """
    grid = np.asarray(grid, dtype=float)
    p = model.n_covariates
    if fixed_covariates is None:
        fixed_covariates = np.zeros(p)
    fixed_covariates = np.atleast_1d(np.asarray(fixed_covariates, dtype=float))
    if fixed_covariates.shape != (p,):
        raise InputError(f"fixed_covariates must have length {p}")
    if not 0 <= covariate_index < p:
        raise InputError(f"covariate_index {covariate_index} out of range for P={p}")
    probs = np.empty((grid.size, model.n_states))
    for k, z in enumerate(grid):
        row = fixed_covariates.copy()
        row[covariate_index] = z
        probs[k] = stationary_distribution(model.tpm(row))
    return OccupancyCurve(grid, probs, np.zeros(grid.size, dtype=np.int64), "stationary")


def _drop_burn_in(segment_ids: np.ndarray, burn_in: int) -> np.ndarray:
    """Mask keeping indices at least burn_in steps into their segment."""
    keep = np.ones(segment_ids.size, dtype=bool)
    if burn_in <= 0:
        return keep
    from .model import segment_slices

    for seg in segment_slices(segment_ids):
        keep[seg.start : min(seg.start + burn_in, seg.stop)] = False
    return keep


def bin_occupancy(
    probs: StateProbSeries,
    cov: np.ndarray,
    config: BinningConfig | None = None,
    burn_in: int = 0,
) -> OccupancyCurve:
    """Mean state probability vector per covariate bin.

    The first ``burn_in`` indices of each segment are dropped so the
    segment-start policy cannot leak into the curve. Each remaining time
    point is assigned to the equidistant bin containing its covariate
    value; bins with at least ``config.min_count`` samples report the
    componentwise mean of the probability rows (itself on the simplex),
    the rest report a missing row. Covariate values outside the binning
    range are dropped with a logged count.
    """
    config = config or BinningConfig()
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 1 or cov.size != len(probs):
        raise InputError("covariate column must be 1-d and aligned with the probabilities")
    keep = _drop_burn_in(probs.segment_ids, burn_in)
    if not np.any(keep):
        raise InputError("burn-in removed every sample")
    values = cov[keep]
    rows = probs.values[keep]

    edges = config.edges(values)
    lo, hi = edges[0], edges[-1]
    width = (hi - lo) / config.n_bins
    inside = (values >= lo) & (values <= hi)
    n_dropped = int(values.size - inside.sum())
    if n_dropped:
        logger.info("binning dropped %d of %d values outside [%g, %g]",
                    n_dropped, values.size, lo, hi)
    values = values[inside]
    rows = rows[inside]
    if values.size == 0:
        raise InputError("no covariate values fall inside the binning range")

    idx = np.minimum(((values - lo) / width).astype(np.int64), config.n_bins - 1)
    counts = np.bincount(idx, minlength=config.n_bins)
    sums = np.zeros((config.n_bins, probs.n_states))
    for i in range(probs.n_states):
        sums[:, i] = np.bincount(idx, weights=rows[:, i], minlength=config.n_bins)
    out = np.full((config.n_bins, probs.n_states), np.nan)
    ok = counts >= config.min_count
    if not np.any(ok):
        raise InputError(
            f"every bin is below min_count={config.min_count}; series too short?"
        )
    out[ok] = sums[ok] / counts[ok, None]
    centers = 0.5 * (edges[:-1] + edges[1:])
    return OccupancyCurve(centers, out, counts, "binned")


def monte_carlo_truth(
    model: HmmModel,
    covariate_generator: Callable[[int, np.random.Generator], np.ndarray],
    length: int = 10_000_000,
    config: BinningConfig | None = None,
    seed: int = 0,
    burn_in: int = 1000,
    start: str = "stationary",
) -> OccupancyCurve:
    """Monte Carlo reference curve from one very long simulated covariate path.

    ``covariate_generator(length, rng)`` must return a stationary covariate
    column of the requested length. The model-implied state probabilities
    are propagated along the path and binned; with the default path length
    of 1e7 the Monte Carlo error is negligible next to the estimators under
    study. Deterministic given ``seed``.
    """
    if length < 2:
        raise InputError("length must be at least 2")
    rng = np.random.default_rng(seed)
    path = np.asarray(covariate_generator(length, rng), dtype=float)
    if path.ndim != 1 or path.size != length:
        raise InputError("covariate generator must return a 1-d array of the requested length")
    series = CovariateSeries(path.reshape(-1, 1), np.zeros(length, dtype=np.int64))
    probs = propagate_state_probs(model, series, start=start)
    curve = bin_occupancy(probs, path, config=config, burn_in=burn_in)
    return OccupancyCurve(curve.grid, curve.probs, curve.counts, "monte-carlo")


def count_mass_range(curve: OccupancyCurve, frac: float) -> tuple[float, float]:
    """Covariate interval holding the central ``frac`` of the curve's counts.

    Used to restrict comparisons to the well-sampled part of the axis
    ("central 90% range" means frac=0.9). Requires a curve with counts.
    """
    if not 0 < frac <= 1:
        raise InputError("frac must lie in (0, 1]")
    total = curve.counts.sum()
    if total <= 0:
        raise InputError("curve has no counts; cannot locate a central range")
    cum = np.cumsum(curve.counts) / total
    tail = (1.0 - frac) / 2.0
    lo_idx = int(np.searchsorted(cum, tail, side="left"))
    hi_idx = int(np.searchsorted(cum, 1.0 - tail, side="left"))
    hi_idx = min(hi_idx, curve.grid.size - 1)
    return float(curve.grid[lo_idx]), float(curve.grid[hi_idx])
