"""Shared fixtures and the acceptance-report terminal section.

The simulation-study fixtures are session-scoped because they are by far
the most expensive thing the suite does; the acceptance tests and a few
unit tests all read from the same runs.
"""

import time

import numpy as np
import pytest

from occuhmm.estimation import FitConfig, fit_mle, standard_errors
from occuhmm.simharness import (
    _perturbed_init,
    generate_setting,
    load_setting,
    replicate_seeds,
    run_experiment,
    setting_truth,
)

BASE_SEED = 2026
MLE_STUDY_SEED = 4242

_acceptance_lines: list[tuple[float, str]] = []


def record_criterion(number: int, label: str, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}  {label}: {detail}"
    _acceptance_lines.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)


def _timed_experiment(setting_id, estimators):
    t0 = time.time()
    spec = load_setting(setting_id, n_replicates=20)
    report = run_experiment(
        spec,
        estimators,
        base_seed=BASE_SEED,
        resample_length=1_000_000,
        mc_length=10_000_000,
    )
    return report, time.time() - t0


@pytest.fixture(scope="session")
def experiment_i():
    """Setting I, 20 replicates, stationary vs AR-resample."""
    return _timed_experiment("I", ("stationary", "ar-resample"))


@pytest.fixture(scope="session")
def experiment_ii():
    """Setting II, 20 replicates, stationary vs AR-resample."""
    return _timed_experiment("II", ("stationary", "ar-resample"))


@pytest.fixture(scope="session")
def experiment_iii():
    """Setting III, 20 replicates, AR-resample vs block bootstrap."""
    return _timed_experiment("III", ("ar-resample", "block-bootstrap"))


@pytest.fixture(scope="session")
def truth_ii():
    """Monte Carlo occupancy truth for the Setting II covariate regime."""
    return setting_truth(load_setting("II"), length=10_000_000, seed=BASE_SEED)


@pytest.fixture(scope="session")
def mle_study():
    """50 Setting-I replicates: fitted model + standard errors each.

    Returns (spec, list of (fit, se) pairs, elapsed seconds).
    """
    t0 = time.time()
    spec = load_setting("I")
    results = []
    for r in range(50):
        gen_seed, init_seed, *_ = replicate_seeds(MLE_STUDY_SEED, r)
        obs, cov = generate_setting(spec, gen_seed)
        init = _perturbed_init(spec.true_model, init_seed)
        fit = fit_mle(obs, cov, init, FitConfig(n_restarts=1))
        se = standard_errors(fit) if fit.converged else None
        results.append((fit, se))
    return spec, results, time.time() - t0


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
