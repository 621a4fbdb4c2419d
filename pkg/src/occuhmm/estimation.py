"""Maximum-likelihood fitting over unconstrained working parameters.

The natural parameters (positive scales, simplex rows, circular means) are
packed into a flat real vector so a quasi-Newton optimizer can run without
constraints. Packing order:

1. transition coefficients, pair-by-pair in row-major off-diagonal order,
   each pair contributing its intercept and P slopes (already unconstrained);
2. per emission channel, in channel order:
   gaussian — state means raw, then log sds;
   gamma    — log means, then log sds;
   vonmises — mean directions raw (wrapped back to (-pi, pi] on the way
              out), then log concentrations;
3. if the initial distribution is estimated: N-1 multinomial logits with
   the last state as reference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InputError, OccuHmmError, SingularMatrixError
from .hmm import forward_loglik
from .model import (
    Channel,
    CovariateSeries,
    EmissionSpec,
    GammaChannel,
    GaussianChannel,
    HmmModel,
    ObservationSeries,
    TransitionCoefficients,
    VonMisesChannel,
)

logger = logging.getLogger(__name__)


def _wrap_angle(x: np.ndarray) -> np.ndarray:
    """Map angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class WorkingParams:
    """Flat unconstrained parameter vector; layout given by a template model."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise InputError("working parameters must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def transform(model: HmmModel, estimate_initial: bool = False) -> WorkingParams:
    """Pack a model into its unconstrained working-parameter vector."""
    parts = [np.asarray(model.transition.coefficients, dtype=float).ravel()]
    for ch in model.emissions.channels:
        if ch.family == "gaussian":
            parts += [ch.mean, np.log(ch.sd)]
        elif ch.family == "gamma":
            parts += [np.log(ch.mean), np.log(ch.sd)]
        elif ch.family == "vonmises":
            parts += [ch.mean, np.log(ch.concentration)]
        else:  # pragma: no cover - families are closed by the model layer
            raise InputError(f"unknown channel family {ch.family!r}")
    if estimate_initial:
        delta = model.initial_distribution
        parts.append(np.log(delta[:-1]) - np.log(delta[-1]))
    return WorkingParams(np.concatenate(parts))


def untransform(
    params: WorkingParams | np.ndarray,
    template: HmmModel,
    estimate_initial: bool = False,
) -> HmmModel:
    """Rebuild a model from working parameters, using the template's shapes.

    Exact inverse of :func:`transform` for mean directions already in
    (-pi, pi]; positive parameters round-trip through log/exp.
    """
    theta = params.values if isinstance(params, WorkingParams) else np.asarray(params, dtype=float)
    n, p = template.n_states, template.n_covariates
    expected = n_working_params(template, estimate_initial)
    if theta.size != expected:
        raise InputError(f"expected {expected} working parameters, got {theta.size}")
    pos = n * (n - 1) * (p + 1)
    coeffs = TransitionCoefficients(n, p, theta[:pos].reshape(n * (n - 1), p + 1))
    channels: list[Channel] = []
    for ch in template.emissions.channels:
        a, b = theta[pos : pos + n], theta[pos + n : pos + 2 * n]
        pos += 2 * n
        if ch.family == "gaussian":
            channels.append(GaussianChannel(a, np.exp(b)))
        elif ch.family == "gamma":
            channels.append(GammaChannel(np.exp(a), np.exp(b)))
        elif ch.family == "vonmises":
            channels.append(VonMisesChannel(_wrap_angle(a), np.exp(b)))
        else:  # pragma: no cover
            raise InputError(f"unknown channel family {ch.family!r}")
    if estimate_initial:
        logits = np.append(theta[pos:], 0.0)
        logits -= logits.max()
        delta = np.exp(logits)
        delta /= delta.sum()
    else:
        delta = template.initial_distribution
    return HmmModel(n, coeffs, EmissionSpec(tuple(channels)), delta)


def n_working_params(template: HmmModel, estimate_initial: bool = False) -> int:
    n, p = template.n_states, template.n_covariates
    k = n * (n - 1) * (p + 1) + 2 * n * template.n_channels
    return k + (n - 1 if estimate_initial else 0)


def fd_gradient(fun: Callable[[np.ndarray], float], theta: np.ndarray,
                step_scale: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with step h_k = step_scale*(1+|theta_k|)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.size)
    for k in range(theta.size):
        h = step_scale * (1.0 + abs(theta[k]))
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


def fd_hessian(fun: Callable[[np.ndarray], float], theta: np.ndarray,
               step_scale: float = 1e-4) -> np.ndarray:
    """Symmetric finite-difference Hessian with per-coordinate scaled steps."""
    theta = np.asarray(theta, dtype=float)
    k = theta.size
    h = step_scale * (1.0 + np.abs(theta))
    hess = np.empty((k, k))
    f0 = fun(theta)
    for i in range(k):
        up, dn = theta.copy(), theta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        hess[i, i] = (fun(up) - 2.0 * f0 + fun(dn)) / h[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            pp, pm, mp, mm = (theta.copy() for _ in range(4))
            pp[[i, j]] += [h[i], h[j]]
            pm[i] += h[i]
            pm[j] -= h[j]
            mp[i] -= h[i]
            mp[j] += h[j]
            mm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (
                fun(pp) - fun(pm) - fun(mp) + fun(mm)
            ) / (4.0 * h[i] * h[j])
    return hess


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings for :func:`fit_mle`.

    Convergence requires the relative log-likelihood improvement to fall
    below ``rel_tol`` and the gradient max-norm below ``grad_tol``, subject
    to the iteration cap. ``n_restarts`` perturbed starts (the first one is
    the unperturbed init) defend against local optima; the best final
    log-likelihood wins.
    """

    rel_tol: float = 1e-9
    grad_tol: float = 1e-5
    max_iter: int = 1000
    n_restarts: int = 5
    restart_scale: float = 0.1
    seed: int = 0
    start: str = "stationary"
    estimate_initial: bool = False
    sort_by_first_channel: bool = True

    def __post_init__(self):
        if self.max_iter < 1 or self.n_restarts < 1:
            raise InputError("max_iter and n_restarts must be positive")
        if self.rel_tol <= 0 or self.grad_tol <= 0:
            raise InputError("tolerances must be positive")


@dataclass
class FitResult:
    """Outcome of a maximum-likelihood fit.

    ``working_covariance`` stays None until :func:`standard_errors` inverts
    the observed information. ``aic = -2*loglik + 2*n_params`` always holds.
    """

    model: HmmModel
    loglik: float
    converged: bool
    n_evaluations: int
    aic: float
    n_params: int
    working_params: WorkingParams
    working_covariance: np.ndarray | None = None
    _nll: Callable[[np.ndarray], float] | None = field(
        default=None, repr=False, compare=False
    )


_PENALTY_NLL = 1e12


def fit_mle(
    obs: ObservationSeries,
    cov: CovariateSeries,
    init: HmmModel,
    config: FitConfig | None = None,
) -> FitResult:
    """Fit a covariate-driven HMM by numerical likelihood maximization.

    Parameters
    ----------
    obs, cov
        Aligned observation and covariate series (same length, same
        segmentation).
    init
        Valid starting model; supplies shapes, channel families and (unless
        estimated) the initial distribution.
    config
        Optimizer settings; defaults to :class:`FitConfig`.

    Returns
    -------
    FitResult
        Best model over all restarts, never worse than the init (falls back
        to the initializer if the optimizer only moved downhill). States are
        relabeled by ascending first-channel mean unless disabled.

    Raises
    ------
    InputError
        Fewer than two states, or non-finite log-likelihood at the init.
    """
    config = config or FitConfig()
    if init.n_states < 2:
        raise InputError("fitting requires at least 2 states (no transitions otherwise)")

    n_evals = 0

    def nll(theta: np.ndarray) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            model = untransform(theta, init, config.estimate_initial)
            value = -forward_loglik(model, obs, cov, start=config.start)
        except (OccuHmmError, FloatingPointError):
            return _PENALTY_NLL
        if not np.isfinite(value):
            return _PENALTY_NLL
        return value

    theta0 = transform(init, config.estimate_initial).values
    f0 = nll(theta0)
    if f0 >= _PENALTY_NLL:
        raise InputError("log-likelihood is not finite at the initial model")

    rng = np.random.default_rng(config.seed)
    best_theta, best_f, best_converged = theta0, f0, False
    for r in range(config.n_restarts):
        start = theta0 if r == 0 else theta0 + rng.normal(
            scale=config.restart_scale * (1.0 + np.abs(theta0))
        )
        res = minimize(
            nll,
            start,
            method="L-BFGS-B",
            jac=lambda th: fd_gradient(nll, th),
            options={
                "ftol": config.rel_tol,
                "gtol": config.grad_tol,
                "maxiter": config.max_iter,
            },
        )
        logger.debug("restart %d: nll %.6f converged=%s (%s)",
                     r, res.fun, res.success, res.message)
        if res.fun < best_f:
            best_theta, best_f, best_converged = res.x, res.fun, bool(res.success)
        elif r == 0 and res.fun == f0:
            best_converged = bool(res.success)

    model = untransform(best_theta, init, config.estimate_initial)
    if config.sort_by_first_channel:
        model = sort_states(model)
        best_theta = transform(model, config.estimate_initial).values
    k = best_theta.size
    loglik = -best_f
    return FitResult(
        model=model,
        loglik=loglik,
        converged=best_converged,
        n_evaluations=n_evals,
        aic=-2.0 * loglik + 2.0 * k,
        n_params=k,
        working_params=WorkingParams(best_theta),
        _nll=nll,
    )


def standard_errors(fit: FitResult) -> np.ndarray:
    """Working-scale standard errors from the observed information.

    Inverts the finite-difference Hessian of the negative log-likelihood at
    the fitted optimum; also caches the full covariance on the fit.

    Raises
    ------
    InputError
        If the fit did not converge.
    SingularMatrixError
        If the information matrix has a non-positive or numerically zero
        eigenvalue (flat direction, e.g. collinear covariates); the message
        reports the eigenvalue range.
    """
    if not fit.converged:
        raise InputError("standard errors require a converged fit")
    if fit._nll is None:
        raise InputError("fit carries no likelihood context (deserialized result?)")
    hess = fd_hessian(fit._nll, fit.working_params.values)
    hess = 0.5 * (hess + hess.T)
    eigvals = np.linalg.eigvalsh(hess)
    emin, emax = eigvals[0], eigvals[-1]
    if emin <= 0 or emin <= emax * 1e-10:
        raise SingularMatrixError(
            "observed information is singular or indefinite "
            f"(eigenvalues in [{emin:.3e}, {emax:.3e}]); "
            "some parameter direction is flat"
        )
    cov = np.linalg.inv(hess)
    fit.working_covariance = cov
    return np.sqrt(np.diag(cov))


def sort_states(model: HmmModel) -> HmmModel:
    """Relabel states by ascending mean of the first emission channel.

    Keeps every run's "state 1" comparable (least active first for movement
    data, where channel 0 is the step length). No-op if already ordered.
    """
    first = model.emissions.channels[0]
    perm = np.argsort(first.mean, kind="stable")
    if np.array_equal(perm, np.arange(model.n_states)):
        return model
    n, p = model.n_states, model.n_covariates
    dense = model.transition.dense()
    permuted = dense[np.ix_(perm, perm)]
    rows = [permuted[i, j, :] for i in range(n) for j in range(n) if i != j]
    coeffs = TransitionCoefficients(n, p, np.vstack(rows))
    channels: list[Channel] = []
    for ch in model.emissions.channels:
        if ch.family == "gaussian":
            channels.append(GaussianChannel(ch.mean[perm], ch.sd[perm]))
        elif ch.family == "gamma":
            channels.append(GammaChannel(ch.mean[perm], ch.sd[perm]))
        else:
            channels.append(VonMisesChannel(ch.mean[perm], ch.concentration[perm]))
    return HmmModel(
        n, coeffs, EmissionSpec(tuple(channels)), model.initial_distribution[perm]
    )


def default_init(
    obs: ObservationSeries,
    cov: CovariateSeries,
    n_states: int,
    families: Sequence[str],
) -> HmmModel:
    """Data-driven starting model for :func:`fit_mle`.

    Each channel's non-missing values are split into ``n_states`` quantile
    bands; state i takes the i-th band's location and spread. Transition
    intercepts start at logit(0.1) (sticky states), slopes at zero, the
    initial distribution uniform.
    """
    if n_states < 2:
        raise InputError("need at least 2 states")
    if len(families) != obs.n_channels:
        raise InputError(
            f"got {len(families)} families for {obs.n_channels} observation channels"
        )
    channels: list[Channel] = []
    for c, family in enumerate(families):
        xs = obs.values[:, c]
        xs = xs[~np.isnan(xs)]
        if xs.size < 2 * n_states:
            raise InputError(f"channel {c} has too few observed values to initialize")
        edges = np.quantile(xs, np.linspace(0.0, 1.0, n_states + 1))
        overall = float(np.std(xs))
        means, spreads = np.empty(n_states), np.empty(n_states)
        for i in range(n_states):
            band = xs[(xs >= edges[i]) & (xs <= edges[i + 1])]
            if band.size == 0:
                band = xs
            means[i] = band.mean()
            spreads[i] = max(float(band.std()), 0.05 * overall, 1e-3)
        if family == "gaussian":
            channels.append(GaussianChannel(means, spreads))
        elif family == "gamma":
            if np.any(xs <= 0):
                raise InputError(f"channel {c}: gamma family needs positive values")
            channels.append(GammaChannel(np.maximum(means, 1e-6), spreads))
        elif family == "vonmises":
            # quantile bands are a crude device on the circle, but only the
            # rough location matters for a starting value
            dirs = np.empty(n_states)
            for i in range(n_states):
                band = xs[(xs >= edges[i]) & (xs <= edges[i + 1])]
                if band.size == 0:
                    band = xs
                dirs[i] = np.arctan2(np.mean(np.sin(band)), np.mean(np.cos(band)))
            channels.append(VonMisesChannel(_wrap_angle(dirs), np.ones(n_states)))
        else:
            raise InputError(f"unknown channel family {family!r}")
    n_pairs = n_states * (n_states - 1)
    coeffs = np.zeros((n_pairs, cov.n_covariates + 1))
    coeffs[:, 0] = np.log(0.1 / 0.9)
    return HmmModel(
        n_states,
        TransitionCoefficients(n_states, cov.n_covariates, coeffs),
        EmissionSpec(tuple(channels)),
        np.full(n_states, 1.0 / n_states),
    )
