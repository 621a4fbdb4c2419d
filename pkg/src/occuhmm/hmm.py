"""Likelihood, decoding, and state-probability propagation.

Timing convention: the covariate row at time t parameterizes the transition
matrix governing the move from t-1 into t, so a segment starting at index s
uses its start distribution at s and the TPM at z_{s+1} for the first
transition. Segments are independent; the log-likelihood is the sum of
segment log-likelihoods.

Start policies (what the chain is assumed to follow at each segment start):

* ``"stationary"``: the stationary distribution of the TPM at the segment's
  first covariate row (default; forgets itself after a short burn-in).
* ``"uniform"``: 1/N for every state.
* ``"model"``: the model's stored ``initial_distribution``.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InputError, LikelihoodUnderflowError
from .model import CovariateSeries, HmmModel, ObservationSeries, StateProbSeries

START_POLICIES = ("stationary", "uniform", "model")


def start_distribution(model: HmmModel, z_first: np.ndarray, policy: str) -> np.ndarray:
    """Distribution used at a segment start under the given policy."""
    if policy == "stationary":
        from .occupancy import stationary_distribution

        return stationary_distribution(model.tpm(z_first))
    if policy == "uniform":
        return np.full(model.n_states, 1.0 / model.n_states)
    if policy == "model":
        return model.initial_distribution.copy()
    raise InputError(f"unknown start policy {policy!r}; expected one of {START_POLICIES}")


def _check_aligned(model: HmmModel, obs: ObservationSeries | None, cov: CovariateSeries):
    if obs is not None:
        if len(obs) != len(cov):
            raise InputError(
                f"observations (T={len(obs)}) and covariates (T={len(cov)}) differ in length"
            )
        if not np.array_equal(obs.segment_ids, cov.segment_ids):
            raise InputError("observations and covariates carry different segment ids")
        if obs.n_channels != model.n_channels:
            raise InputError(
                f"model expects {model.n_channels} observation channels, data has {obs.n_channels}"
            )
    if cov.n_covariates != model.n_covariates:
        raise InputError(
            f"model expects {model.n_covariates} covariates, data has {cov.n_covariates}"
        )


def forward_loglik(
    model: HmmModel,
    obs: ObservationSeries,
    cov: CovariateSeries,
    start: str = "stationary",
) -> float:
    """Log-likelihood via the scaled forward recursion, summed over segments.

    Raises
    ------
    LikelihoodUnderflowError
        If every state density is zero at some time step (e.g. an
        observation outside the support of all emission components).
    """
    _check_aligned(model, obs, cov)
    beta = model.transition.dense()
    logdens = model.emissions.log_density_matrix(obs.values)
    total = 0.0
    for seg in cov.segments():
        z = cov.values[seg]
        delta0 = start_distribution(model, z[0], start)
        ll, fail = _kernels.forward_scaled(beta, z, logdens[seg], delta0)
        if fail >= 0:
            t = seg.start + fail
            raise LikelihoodUnderflowError(
                f"likelihood underflow at t={t}: all state densities are zero "
                "(observation outside every state's support?)",
                t=t,
            )
        total += ll
    return float(total)


def viterbi(
    model: HmmModel,
    obs: ObservationSeries,
    cov: CovariateSeries,
    start: str = "stationary",
) -> np.ndarray:
    """Most probable state sequence per segment (0-based states).

    Ties are broken toward the lower state index, deterministically.
    """
    _check_aligned(model, obs, cov)
    beta = model.transition.dense()
    logdens = model.emissions.log_density_matrix(obs.values)
    out = np.empty(len(obs), dtype=np.int64)
    with np.errstate(divide="ignore"):
        for seg in cov.segments():
            z = cov.values[seg]
            delta0 = start_distribution(model, z[0], start)
            ld = logdens[seg]
            if np.any(np.all(np.isneginf(ld), axis=1)):
                t = seg.start + int(np.argmax(np.all(np.isneginf(ld), axis=1)))
                raise LikelihoodUnderflowError(
                    f"likelihood underflow at t={t}: all state densities are zero", t=t
                )
            out[seg] = _kernels.viterbi_path(beta, z, ld, np.log(delta0))
    return out


def propagate_state_probs(
    model: HmmModel, cov: CovariateSeries, start: str = "stationary"
) -> StateProbSeries:
    """Marginal state probabilities implied by the covariate path alone.

    Row t is the segment-start distribution pushed through the TPMs at
    z_{s+1}, ..., z_t. This conditions on covariates only, never on
    observations.
    """
    _check_aligned(model, None, cov)
    beta = model.transition.dense()
    out = np.empty((len(cov), model.n_states))
    for seg in cov.segments():
        z = cov.values[seg]
        delta0 = start_distribution(model, z[0], start)
        out[seg] = _kernels.propagate(beta, z, delta0)
    return StateProbSeries(out, cov.segment_ids.copy())
