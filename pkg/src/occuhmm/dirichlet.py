"""Penalized Dirichlet regression of state probabilities on a covariate.

The propagated probability vectors delta(t) are treated as compositional
responses with delta(t) ~ Dirichlet(alpha(z_t)), alpha_i(z) = exp(f_i(z)),
and each f_i a cubic B-spline with a second-difference roughness penalty.
The Dirichlet mean alpha(z)/sum(alpha(z)) is then a smooth occupancy
estimate that needs no covariate resampling at all.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize
from scipy.special import digamma, gammaln

from .errors import DomainError, ExtrapolationError, InputError
from .model import StateProbSeries
from .occupancy import OccupancyCurve

logger = logging.getLogger(__name__)

_DEGREE = 3  # cubic


def dirichlet_logpdf(alpha: np.ndarray, x: np.ndarray) -> float:
    """Log density of Dirichlet(alpha) at an interior simplex point x.

    Raises
    ------
    InputError
        Non-positive alpha, mismatched lengths, or x off the simplex
        (sum deviates from 1 by more than 1e-8).
    DomainError
        Any component of x on or outside the boundary; clip first.
    """
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    if alpha.shape != x.shape or alpha.ndim != 1:
        raise InputError("alpha and x must be 1-d arrays of equal length")
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise InputError("alpha components must be positive and finite")
    if np.any(x <= 0) or np.any(x >= 1):
        raise DomainError(
            "x lies on the simplex boundary; clip it to the interior first"
        )
    if abs(x.sum() - 1.0) > 1e-8:
        raise InputError(f"x must sum to 1 (got {x.sum()!r})")
    return float(
        gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * np.log(x)).sum()
    )


def clip_simplex(x: np.ndarray, epsilon: float = 1e-6) -> np.ndarray:
    """Clamp a simplex vector to [epsilon, 1-epsilon] and renormalize."""
    if not 0 < epsilon < 0.5:
        raise InputError("epsilon must lie in (0, 0.5)")
    x = np.clip(np.asarray(x, dtype=float), epsilon, 1.0 - epsilon)
    return x / x.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SplineBasis:
    """Clamped cubic B-spline basis with a second-difference penalty.

    ``knots`` is the full clamped knot vector (length n_basis + 4); rows of
    the design matrix evaluate the n_basis functions at a point. Points
    outside [knots[0], knots[-1]] are rejected.
    """

    knots: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knots, dtype=float)
        if t.ndim != 1 or t.size < _DEGREE + 5:
            raise InputError("knot vector too short for a cubic basis")
        if np.any(np.diff(t) < 0) or not np.all(np.isfinite(t)):
            raise InputError("knots must be finite and non-decreasing")
        object.__setattr__(self, "knots", t)

    @classmethod
    def from_range(cls, lo: float, hi: float, n_basis: int = 10) -> "SplineBasis":
        if not hi > lo:
            raise InputError("basis range must have positive width")
        if n_basis < _DEGREE + 2:
            raise InputError(f"need at least {_DEGREE + 2} basis functions")
        inner = np.linspace(lo, hi, n_basis - _DEGREE + 1)
        t = np.concatenate([np.full(_DEGREE, lo), inner, np.full(_DEGREE, hi)])
        return cls(t)

    @classmethod
    def from_sample(
        cls,
        sample: np.ndarray,
        n_basis: int = 10,
        quantiles: tuple[float, float] = (0.005, 0.995),
    ) -> "SplineBasis":
        """Basis over the central quantile range of a covariate sample."""
        lo, hi = np.quantile(np.asarray(sample, dtype=float), quantiles)
        if not hi > lo:
            raise InputError("covariate sample is (nearly) constant; no range to span")
        return cls.from_range(float(lo), float(hi), n_basis)

    @property
    def n_basis(self) -> int:
        return self.knots.size - _DEGREE - 1

    @property
    def support(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def design(self, z: np.ndarray) -> np.ndarray:
        """Design matrix rows b(z), shape (len(z), n_basis)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        lo, hi = self.support
        bad = (z < lo) | (z > hi) | ~np.isfinite(z)
        if np.any(bad):
            raise ExtrapolationError(
                f"covariate value {z[bad][0]!r} outside the basis range [{lo}, {hi}]"
            )
        return BSpline.design_matrix(z, self.knots, _DEGREE, extrapolate=False).toarray()

    def penalty(self) -> np.ndarray:
        """Second-difference penalty matrix D'D (symmetric PSD)."""
        k = self.n_basis
        d = np.zeros((k - 2, k))
        for r in range(k - 2):
            d[r, r : r + 3] = (1.0, -2.0, 1.0)
        return d.T @ d

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist()}


@dataclass(frozen=True)
class DirichletConfig:
    """Settings for :func:`fit_dirichlet_smooth`."""

    n_basis: int = 10
    lambda_grid: tuple[float, ...] = tuple(10.0 ** np.arange(-3, 5, dtype=float))
    burn_in: int = 100
    clip_epsilon: float = 1e-6
    n_folds: int = 5
    max_iter: int = 500
    rel_tol: float = 1e-8
    basis_quantiles: tuple[float, float] = (0.005, 0.995)
    max_passes: int = 2

    def __post_init__(self):
        if self.n_folds < 2:
            raise InputError("cross-validation needs at least 2 folds")
        if len(self.lambda_grid) == 0 or any(l <= 0 for l in self.lambda_grid):
            raise InputError("lambda grid must be non-empty and positive")


@dataclass
class DirichletSmoothFit:
    """Fitted smooth Dirichlet regression.

    ``coefficients`` has one row of spline coefficients per state;
    ``lambdas`` the selected per-state smoothing parameters.
    """

    basis: SplineBasis
    coefficients: np.ndarray
    lambdas: np.ndarray
    penalized_loglik: float
    clip_epsilon: float
    converged: bool

    @property
    def n_states(self) -> int:
        return self.coefficients.shape[0]

    def alpha(self, z: np.ndarray) -> np.ndarray:
        """Concentration vectors alpha(z) = exp(B(z) C'), shape (len(z), N)."""
        return np.exp(self.basis.design(z) @ self.coefficients.T)

    def save(self, path) -> None:
        doc = {
            "basis": self.basis.to_dict(),
            "coefficients": self.coefficients.tolist(),
            "lambdas": self.lambdas.tolist(),
            "penalized_loglik": self.penalized_loglik,
            "clip_epsilon": self.clip_epsilon,
            "converged": self.converged,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path) -> "DirichletSmoothFit":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            basis=SplineBasis(np.asarray(doc["basis"]["knots"], dtype=float)),
            coefficients=np.asarray(doc["coefficients"], dtype=float),
            lambdas=np.asarray(doc["lambdas"], dtype=float),
            penalized_loglik=float(doc["penalized_loglik"]),
            clip_epsilon=float(doc["clip_epsilon"]),
            converged=bool(doc["converged"]),
        )


def _neg_penalized(
    cvec: np.ndarray,
    design: np.ndarray,
    log_delta: np.ndarray,
    lambdas: np.ndarray,
    penalty: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Negative penalized Dirichlet log-likelihood and its gradient.

    The response enters only through log delta; the gradient in the spline
    coefficients c_i is B'[alpha_i * (psi(A) - psi(alpha_i) + log delta_i)]
    minus the penalty pull lambda_i P c_i.
    """
    coef = cvec.reshape(-1, design.shape[1])
    eta = design @ coef.T
    with np.errstate(over="ignore"):
        alpha = np.exp(eta)
    a_tot = alpha.sum(axis=1)
    if not np.all(np.isfinite(alpha)) or not np.all(np.isfinite(a_tot)):
        return 1e12, np.zeros_like(cvec)
    loglik = float(
        gammaln(a_tot).sum() - gammaln(alpha).sum() + (alpha * log_delta).sum()
        - log_delta.sum()
    )
    rough_pull = np.einsum("ik,kl,il->i", coef, penalty, coef)
    value = -(loglik - 0.5 * float(lambdas @ rough_pull))
    if not np.isfinite(value):
        return 1e12, np.zeros_like(cvec)
    weight = alpha * (digamma(a_tot)[:, None] - digamma(alpha) + log_delta)
    grad = -(weight.T @ design) + lambdas[:, None] * (coef @ penalty)
    return value, grad.ravel()


def _optimize(design, log_delta, lambdas, penalty, c0, config) -> tuple[np.ndarray, float, bool]:
    res = minimize(
        _neg_penalized,
        c0.ravel(),
        args=(design, log_delta, lambdas, penalty),
        method="L-BFGS-B",
        jac=True,
        options={"ftol": config.rel_tol, "maxiter": config.max_iter},
    )
    return res.x.reshape(c0.shape), float(res.fun), bool(res.success)


def _fold_slices(n: int, n_folds: int) -> list[np.ndarray]:
    """Contiguous index blocks, respecting the serial dependence of delta."""
    edges = np.linspace(0, n, n_folds + 1).astype(int)
    return [np.arange(edges[k], edges[k + 1]) for k in range(n_folds)]


def fit_dirichlet_smooth(
    probs: StateProbSeries,
    cov: np.ndarray,
    config: DirichletConfig | None = None,
) -> DirichletSmoothFit:
    """Fit the penalized Dirichlet regression of delta(t) on a covariate.

    Drops the first ``config.burn_in`` indices of each segment, clips the
    probability rows into the simplex interior, and maximizes the penalized
    log-likelihood over spline coefficients. Per-state smoothing parameters
    come from a grid search over ``config.lambda_grid`` minimizing 5-fold
    cross-validated held-out negative log-likelihood, sweeping one state at
    a time (other states' lambdas held fixed) for up to ``max_passes``
    rounds. Training points outside the basis range are dropped with a log
    message.

    Raises
    ------
    InputError
        Too little data for the basis dimension (needs at least
        10 * n_basis usable rows).
    """
    config = config or DirichletConfig()
    cov = np.asarray(cov, dtype=float).ravel()
    if cov.size != len(probs):
        raise InputError("covariate column must align with the probability series")
    from .occupancy import _drop_burn_in

    keep = _drop_burn_in(probs.segment_ids, config.burn_in)
    z = cov[keep]
    delta = probs.values[keep]
    if z.size < 10 * config.n_basis:
        raise InputError(
            f"{z.size} usable rows cannot support a basis of dimension {config.n_basis}"
        )
    basis = SplineBasis.from_sample(z, config.n_basis, config.basis_quantiles)
    lo, hi = basis.support
    inside = (z >= lo) & (z <= hi)
    if np.count_nonzero(~inside):
        logger.info("dropping %d training rows outside the basis range [%g, %g]",
                    np.count_nonzero(~inside), lo, hi)
    z, delta = z[inside], delta[inside]
    delta = clip_simplex(delta, config.clip_epsilon)
    log_delta = np.log(delta)
    design = basis.design(z)
    penalty = basis.penalty()
    n_states, k = delta.shape[1], config.n_basis

    folds = _fold_slices(z.size, config.n_folds)
    grid = np.asarray(config.lambda_grid, dtype=float)

    def cv_score(lambdas: np.ndarray, warms: list[np.ndarray]) -> float:
        total = 0.0
        for f, hold in enumerate(folds):
            train = np.setdiff1d(np.arange(z.size), hold, assume_unique=True)
            coef, _, _ = _optimize(
                design[train], log_delta[train], lambdas, penalty, warms[f], config
            )
            warms[f] = coef
            alpha = np.exp(design[hold] @ coef.T)
            if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
                return np.inf
            total -= float(
                gammaln(alpha.sum(axis=1)).sum()
                - gammaln(alpha).sum()
                + ((alpha - 1.0) * log_delta[hold]).sum()
            )
        return total

    lambdas = np.ones(n_states)
    warms = {float(l): [np.zeros((n_states, k)) for _ in folds] for l in grid}
    for sweep in range(config.max_passes):
        changed = False
        for i in range(n_states):
            best_l, best_score = lambdas[i], np.inf
            for l in grid:
                trial = lambdas.copy()
                trial[i] = l
                score = cv_score(trial, warms[float(l)])
                if score < best_score:
                    best_score, best_l = score, l
            if best_l != lambdas[i]:
                changed = True
            lambdas[i] = best_l
        logger.debug("lambda sweep %d: %s", sweep, lambdas)
        if not changed:
            break

    coef, neg_val, converged = _optimize(
        design, log_delta, lambdas, penalty, np.zeros((n_states, k)), config
    )
    if not converged:
        logger.warning("final penalized optimization did not fully converge")
    return DirichletSmoothFit(
        basis=basis,
        coefficients=coef,
        lambdas=lambdas,
        penalized_loglik=-neg_val,
        clip_epsilon=config.clip_epsilon,
        converged=converged,
    )


def predict_occupancy(fit: DirichletSmoothFit, grid: np.ndarray) -> OccupancyCurve:
    """Predicted occupancy curve (Dirichlet mean) on an in-range grid.

    Raises
    ------
    ExtrapolationError
        Any grid point outside the training/basis range (named in the
        message); refit rather than extrapolate a penalized spline.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    alpha = fit.alpha(grid)  # raises ExtrapolationError on out-of-range points
    probs = alpha / alpha.sum(axis=1, keepdims=True)
    return OccupancyCurve(grid, probs, np.zeros(grid.size, dtype=np.int64), "dirichlet")
