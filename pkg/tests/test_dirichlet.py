import numpy as np
import pytest
from scipy.integrate import quad

from occuhmm.dirichlet import (
    DirichletConfig,
    DirichletSmoothFit,
    SplineBasis,
    _neg_penalized,
    clip_simplex,
    dirichlet_logpdf,
    fit_dirichlet_smooth,
    predict_occupancy,
)
from occuhmm.errors import DomainError, ExtrapolationError, InputError
from occuhmm.estimation import fd_gradient
from occuhmm.model import StateProbSeries


class TestLogPdf:
    def test_known_value(self):
        got = dirichlet_logpdf(np.array([2.0, 2.0]), np.array([0.5, 0.5]))
        assert got == pytest.approx(np.log(1.5), abs=1e-14)

    def test_uniform_alpha_is_flat(self):
        a = np.ones(3)
        lp1 = dirichlet_logpdf(a, np.array([0.2, 0.3, 0.5]))
        lp2 = dirichlet_logpdf(a, np.array([0.6, 0.1, 0.3]))
        assert lp1 == pytest.approx(lp2, abs=1e-14)
        assert lp1 == pytest.approx(np.log(2.0), abs=1e-14)  # 1/B(1,1,1) = 2

    def test_normalizes(self):
        alpha = np.array([1.7, 0.6])
        total, _ = quad(
            lambda x: np.exp(dirichlet_logpdf(alpha, np.array([x, 1 - x]))), 0, 1
        )
        assert total == pytest.approx(1.0, abs=1e-7)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            dirichlet_logpdf(np.array([2.0, 2.0]), np.array([0.0, 1.0]))
        with pytest.raises(DomainError):
            dirichlet_logpdf(np.array([2.0, 2.0]), np.array([-0.1, 1.1]))
        with pytest.raises(InputError):
            dirichlet_logpdf(np.array([2.0, -1.0]), np.array([0.5, 0.5]))
        with pytest.raises(InputError):
            dirichlet_logpdf(np.array([2.0, 2.0]), np.array([0.5, 0.6]))


class TestClipSimplex:
    def test_interior_is_rescaled_only(self):
        x = np.array([[0.2, 0.8], [0.5, 0.5]])
        np.testing.assert_allclose(clip_simplex(x), x, atol=1e-12)

    def test_boundary_moves_inside(self):
        out = clip_simplex(np.array([[1.0, 0.0]]), epsilon=1e-6)
        assert out[0, 1] >= 1e-7
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert (out > 0).all() and (out < 1).all()


class TestSplineBasis:
    def test_partition_of_unity(self):
        basis = SplineBasis.from_range(-2.0, 2.0, 10)
        z = np.linspace(-2.0, 2.0, 101)
        design = basis.design(z)
        assert design.shape == (101, 10)
        np.testing.assert_allclose(design.sum(axis=1), 1.0, atol=1e-12)

    def test_from_sample_uses_central_quantiles(self):
        rng = np.random.default_rng(1)
        sample = rng.normal(size=20_000)
        basis = SplineBasis.from_sample(sample, 10)
        lo, hi = basis.support
        assert lo == pytest.approx(np.quantile(sample, 0.005))
        assert hi == pytest.approx(np.quantile(sample, 0.995))

    def test_extrapolation_raises(self):
        basis = SplineBasis.from_range(0.0, 1.0, 8)
        with pytest.raises(ExtrapolationError):
            basis.design(np.array([0.5, 1.2]))

    def test_second_difference_penalty(self):
        basis = SplineBasis.from_range(0.0, 1.0, 5)
        want = np.array([
            [1, -2, 1, 0, 0],
            [-2, 5, -4, 1, 0],
            [1, -4, 6, -4, 1],
            [0, 1, -4, 5, -2],
            [0, 0, 1, -2, 1],
        ], dtype=float)
        np.testing.assert_array_equal(basis.penalty(), want)

    def test_penalty_kills_linear_coefficients(self):
        basis = SplineBasis.from_range(0.0, 1.0, 7)
        linear = np.arange(7.0)
        assert linear @ basis.penalty() @ linear == pytest.approx(0.0, abs=1e-12)


class TestObjective:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        n, k, t = 3, 6, 40
        basis = SplineBasis.from_range(-1.0, 1.0, k)
        z = rng.uniform(-1.0, 1.0, t)
        design = basis.design(z)
        probs = clip_simplex(rng.dirichlet(np.ones(n), size=t))
        log_delta = np.log(probs)
        lambdas = np.array([0.5, 2.0, 10.0])
        penalty = basis.penalty()
        c0 = rng.normal(0.0, 0.3, n * k)

        def value_only(c):
            return _neg_penalized(c, design, log_delta, lambdas, penalty)[0]

        _, grad = _neg_penalized(c0, design, log_delta, lambdas, penalty)
        np.testing.assert_allclose(grad, fd_gradient(value_only, c0), rtol=5e-5, atol=5e-7)


def _logistic_truth(z):
    p1 = 1.0 / (1.0 + np.exp(-2.0 * z))
    return np.column_stack([1.0 - p1, p1])


def _smooth_inputs(t_len=4000, seed=3):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2.0, 2.0, t_len)
    probs = _logistic_truth(z)
    noise = rng.normal(0.0, 0.03, probs.shape)
    probs = np.clip(probs + noise, 1e-4, None)
    probs /= probs.sum(axis=1, keepdims=True)
    seg = np.zeros(t_len, dtype=np.int64)
    return StateProbSeries(probs, seg), z


class TestFit:
    def test_recovers_logistic_curve(self):
        probs, z = _smooth_inputs()
        cfg = DirichletConfig(n_basis=8, burn_in=0, lambda_grid=(0.1, 1.0, 10.0, 100.0))
        fit = fit_dirichlet_smooth(probs, z, cfg)
        assert fit.converged
        grid = np.linspace(-1.8, 1.8, 50)
        curve = predict_occupancy(fit, grid)
        assert curve.method == "dirichlet"
        sup = np.abs(curve.probs - _logistic_truth(grid)).max()
        assert sup < 0.05

    def test_alpha_positive(self):
        probs, z = _smooth_inputs(t_len=2000)
        cfg = DirichletConfig(n_basis=6, burn_in=0, lambda_grid=(1.0,))
        fit = fit_dirichlet_smooth(probs, z, cfg)
        assert (fit.alpha(np.linspace(-1.5, 1.5, 20)) > 0).all()

    def test_too_few_rows(self):
        probs, z = _smooth_inputs(t_len=50)
        with pytest.raises(InputError):
            fit_dirichlet_smooth(probs, z, DirichletConfig(n_basis=10))

    def test_save_load_round_trip(self, tmp_path):
        probs, z = _smooth_inputs(t_len=2000)
        cfg = DirichletConfig(n_basis=6, burn_in=0, lambda_grid=(1.0, 10.0))
        fit = fit_dirichlet_smooth(probs, z, cfg)
        path = tmp_path / "fit.json"
        fit.save(path)
        again = DirichletSmoothFit.load(path)
        grid = np.linspace(-1.5, 1.5, 9)
        np.testing.assert_array_equal(
            predict_occupancy(again, grid).probs, predict_occupancy(fit, grid).probs
        )
        np.testing.assert_array_equal(again.lambdas, fit.lambdas)

    def test_predict_outside_support_raises(self):
        probs, z = _smooth_inputs(t_len=2000)
        cfg = DirichletConfig(n_basis=6, burn_in=0, lambda_grid=(1.0,))
        fit = fit_dirichlet_smooth(probs, z, cfg)
        with pytest.raises(ExtrapolationError):
            predict_occupancy(fit, np.array([99.0]))
