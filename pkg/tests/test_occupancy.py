import numpy as np
import pytest

from occuhmm.errors import InputError, NonUniquenessError
from occuhmm.model import StateProbSeries
from occuhmm.occupancy import (
    BinningConfig,
    OccupancyCurve,
    bin_occupancy,
    count_mass_range,
    hypothetical_stationary_curve,
    monte_carlo_truth,
    stationary_distribution,
)
from occuhmm.simharness import load_setting


class TestStationaryDistribution:
    def test_hand_case(self):
        # pi0/pi1 = 0.4  ->  (2/7, 5/7)
        tpm = np.array([[0.5, 0.5], [0.2, 0.8]])
        rho = stationary_distribution(tpm)
        np.testing.assert_allclose(rho, [2 / 7, 5 / 7], atol=1e-14)
        assert np.abs(rho @ tpm - rho).max() < 1e-12

    def test_symmetric_is_half(self):
        rho = stationary_distribution(np.array([[0.9, 0.1], [0.1, 0.9]]))
        np.testing.assert_allclose(rho, 0.5, atol=1e-14)

    def test_three_state_residual(self):
        rng = np.random.default_rng(8)
        tpm = np.vstack([rng.dirichlet(np.ones(3)) for _ in range(3)])
        rho = stationary_distribution(tpm)
        assert np.abs(rho @ tpm - rho).max() < 1e-12
        assert abs(rho.sum() - 1.0) < 1e-12

    def test_rejects_bad_matrices(self):
        with pytest.raises(InputError):
            stationary_distribution(np.ones((2, 3)))
        with pytest.raises(InputError):
            stationary_distribution(np.array([[0.9, 0.2], [0.1, 0.9]]))
        with pytest.raises(InputError):
            stationary_distribution(np.array([[1.1, -0.1], [0.5, 0.5]]))

    def test_reducible_chain_is_not_unique(self):
        with pytest.raises(NonUniquenessError):
            stationary_distribution(np.eye(2))


class TestBinning:
    def test_edges_cover_central_range(self):
        sample = np.linspace(0.0, 100.0, 10_001)
        edges = BinningConfig(n_bins=50).edges(sample)
        assert edges.size == 51
        assert (np.diff(edges) > 0).all()
        np.testing.assert_allclose(edges[0], np.quantile(sample, 0.005))
        np.testing.assert_allclose(edges[-1], np.quantile(sample, 0.995))

    def test_full_policy(self):
        sample = np.array([1.0, 2.0, 9.0])
        edges = BinningConfig(n_bins=4, range_policy="full").edges(sample)
        np.testing.assert_allclose([edges[0], edges[-1]], [1.0, 9.0])

    def test_validation(self):
        with pytest.raises(InputError):
            BinningConfig(n_bins=1)
        with pytest.raises(InputError):
            BinningConfig(range_policy="weird")
        with pytest.raises(InputError):
            BinningConfig(min_count=0)

    def test_bin_occupancy_hand_case(self):
        # z < 0 always state 0, z >= 0 always state 1; two clean bins
        z = np.concatenate([np.full(50, -0.5), np.full(50, 0.5)])
        probs = np.zeros((100, 2))
        probs[:50, 0] = 1.0
        probs[50:, 1] = 1.0
        seg = np.zeros(100, dtype=np.int64)
        curve = bin_occupancy(
            StateProbSeries(probs, seg), z,
            BinningConfig(n_bins=2, range_policy="full", min_count=5),
        )
        np.testing.assert_allclose(curve.probs, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)
        np.testing.assert_array_equal(curve.counts, [50, 50])

    def test_bin_occupancy_min_count(self):
        z = np.concatenate([np.full(3, -0.5), np.full(50, 0.5)])
        probs = np.full((53, 2), 0.5)
        seg = np.zeros(53, dtype=np.int64)
        curve = bin_occupancy(
            StateProbSeries(probs, seg), z,
            BinningConfig(n_bins=2, range_policy="full", min_count=5),
        )
        assert np.isnan(curve.probs[0]).all()
        assert curve.counts[0] == 3  # count kept even when the row is masked
        np.testing.assert_allclose(curve.probs[1], 0.5)

    def test_bin_occupancy_burn_in(self):
        z = np.linspace(-1, 1, 40)
        probs = np.full((40, 2), 0.5)
        seg = np.array([0] * 20 + [1] * 20, dtype=np.int64)
        curve = bin_occupancy(
            StateProbSeries(probs, seg), z,
            BinningConfig(n_bins=4, range_policy="full", min_count=1),
            burn_in=15,
        )
        assert curve.counts.sum() == 10  # 5 rows survive per segment

    def test_all_bins_starved_is_an_error(self):
        z = np.linspace(-1, 1, 8)
        probs = np.full((8, 2), 0.5)
        seg = np.zeros(8, dtype=np.int64)
        with pytest.raises(InputError):
            bin_occupancy(StateProbSeries(probs, seg), z,
                          BinningConfig(n_bins=8, range_policy="full", min_count=5))


class TestOccupancyCurve:
    def make(self):
        grid = np.array([0.0, 1.0, 2.0])
        probs = np.array([[0.2, 0.8], [0.5, 0.5], [np.nan, np.nan]])
        counts = np.array([10, 20, 2])
        return OccupancyCurve(grid, probs, counts, "binned")

    def test_validation(self):
        with pytest.raises(InputError):
            OccupancyCurve(np.array([0.0, 0.0]), np.full((2, 2), 0.5),
                           np.array([1, 1]), "binned")
        with pytest.raises(InputError):
            OccupancyCurve(np.array([0.0, 1.0]), np.array([[0.7, 0.7], [0.5, 0.5]]),
                           np.array([1, 1]), "binned")
        with pytest.raises(InputError):
            OccupancyCurve(np.array([0.0, 1.0]), np.full((2, 2), 0.5),
                           np.array([1, 1]), "guesswork")

    def test_defined(self):
        np.testing.assert_array_equal(self.make().defined(), [True, True, False])

    def test_csv_round_trip(self, tmp_path):
        curve = self.make()
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        again = OccupancyCurve.from_csv(path)
        np.testing.assert_array_equal(again.grid, curve.grid)
        np.testing.assert_array_equal(again.counts, curve.counts)
        np.testing.assert_array_equal(np.isnan(again.probs), np.isnan(curve.probs))
        np.testing.assert_array_equal(
            again.probs[curve.defined()], curve.probs[curve.defined()]
        )
        assert again.method == "binned"

    def test_interp_inside_and_outside(self):
        curve = OccupancyCurve(
            np.array([0.0, 1.0]), np.array([[0.2, 0.8], [0.6, 0.4]]),
            np.array([5, 5]), "binned",
        )
        probs, counts = curve.interp_to(np.array([0.5, 3.0]))
        np.testing.assert_allclose(probs[0], [0.4, 0.6], atol=1e-15)
        assert np.isnan(probs[1]).all()
        assert counts[1] == 0


class TestHypotheticalStationary:
    def test_matches_pointwise_solver(self):
        model = load_setting("I").true_model
        grid = np.linspace(-2, 2, 7)
        curve = hypothetical_stationary_curve(model, grid)
        assert curve.method == "stationary"
        for g, row in zip(grid, curve.probs):
            np.testing.assert_allclose(
                row, stationary_distribution(model.tpm(np.array([g]))), atol=1e-13
            )

    def test_fixed_covariates_slice(self):
        model = load_setting("I").true_model
        grid = np.array([0.3])
        a = hypothetical_stationary_curve(model, grid)
        b = hypothetical_stationary_curve(
            model, grid, fixed_covariates=np.array([99.0]), covariate_index=0
        )
        # the swept covariate overrides the fixed placeholder at its index
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-15)


class TestMonteCarloTruth:
    def test_simplex_and_determinism(self):
        model = load_setting("I").true_model
        spec = load_setting("I")

        def gen(n, rng):
            return spec.covariate_path(n, int(rng.integers(2**31)))

        cfg = BinningConfig(n_bins=10, min_count=1)
        a = monte_carlo_truth(model, gen, length=200_000, config=cfg, seed=4)
        b = monte_carlo_truth(model, gen, length=200_000, config=cfg, seed=4)
        c = monte_carlo_truth(model, gen, length=200_000, config=cfg, seed=5)
        defined = a.defined()
        np.testing.assert_allclose(
            a.probs[defined].sum(axis=1), 1.0, atol=1e-10
        )
        np.testing.assert_array_equal(a.probs, b.probs)
        assert not np.array_equal(a.probs, c.probs)
        assert a.method == "monte-carlo"


class TestCountMassRange:
    def test_hand_case(self):
        curve = OccupancyCurve(
            np.arange(5.0), np.full((5, 2), 0.5),
            np.array([1, 1, 8, 1, 1]), "binned",
        )
        assert count_mass_range(curve, 0.8) == (1.0, 3.0)
        assert count_mass_range(curve, 1.0) == (0.0, 4.0)

    def test_validation(self):
        curve = OccupancyCurve(
            np.arange(3.0), np.full((3, 2), 0.5), np.zeros(3, dtype=int), "binned"
        )
        with pytest.raises(InputError):
            count_mass_range(curve, 0.9)  # no counts
        with pytest.raises(InputError):
            count_mass_range(curve, 1.5)
