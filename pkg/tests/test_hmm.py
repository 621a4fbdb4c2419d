import numpy as np
import pytest

from oracles import brute_force_loglik, brute_force_viterbi, random_instance

from occuhmm.errors import InputError, LikelihoodUnderflowError
from occuhmm.hmm import (
    forward_loglik,
    propagate_state_probs,
    start_distribution,
    viterbi,
)
from occuhmm.model import (
    CovariateSeries,
    EmissionSpec,
    GammaChannel,
    GaussianChannel,
    HmmModel,
    ObservationSeries,
    TransitionCoefficients,
)
from occuhmm.occupancy import stationary_distribution


@pytest.fixture
def model():
    return HmmModel(
        n_states=2,
        transition=TransitionCoefficients(
            2, 1, np.array([[-0.5, 1.0], [-1.5, -0.8]])
        ),
        emissions=EmissionSpec(
            (GaussianChannel(np.array([-1.0, 2.0]), np.array([1.0, 1.5])),)
        ),
        initial_distribution=np.array([0.3, 0.7]),
    )


def series(values, segment_ids=None):
    values = np.asarray(values, dtype=float).reshape(-1, 1)
    seg = (np.zeros(values.shape[0], dtype=np.int64)
           if segment_ids is None else np.asarray(segment_ids, dtype=np.int64))
    return ObservationSeries(values, seg), CovariateSeries(
        np.linspace(-1.0, 1.0, values.shape[0]).reshape(-1, 1), seg
    )


class TestStartDistribution:
    def test_uniform(self, model):
        np.testing.assert_array_equal(
            start_distribution(model, np.array([0.2]), "uniform"), [0.5, 0.5]
        )

    def test_model(self, model):
        np.testing.assert_array_equal(
            start_distribution(model, np.array([0.2]), "model"), [0.3, 0.7]
        )

    def test_stationary(self, model):
        z = np.array([0.4])
        want = stationary_distribution(model.tpm(z))
        np.testing.assert_allclose(
            start_distribution(model, z, "stationary"), want, atol=1e-15
        )

    def test_unknown_policy(self, model):
        with pytest.raises(InputError):
            start_distribution(model, np.array([0.0]), "bogus")


class TestForward:
    def test_matches_enumeration(self, model):
        obs, cov = series([-1.2, 0.3, 2.5, 1.0])
        got = forward_loglik(model, obs, cov)
        want = brute_force_loglik(model, obs, cov)
        assert abs(got - want) < 1e-12

    def test_segments_sum_independently(self, model):
        obs, cov = series([-1.2, 0.3, 2.5, 1.0], [0, 0, 1, 1])
        first, _ = series([-1.2, 0.3])
        joint = forward_loglik(model, obs, cov)
        assert abs(joint - brute_force_loglik(model, obs, cov)) < 1e-12
        # two segments are more likely than one chain over the same values
        single_obs, single_cov = series([-1.2, 0.3, 2.5, 1.0])
        assert joint != forward_loglik(model, single_obs, single_cov)

    def test_start_policy_changes_value(self, model):
        obs, cov = series([-1.2, 0.3])
        assert (forward_loglik(model, obs, cov, start="uniform")
                != forward_loglik(model, obs, cov, start="model"))

    def test_underflow_reports_global_index(self):
        m = HmmModel(
            n_states=2,
            transition=TransitionCoefficients(2, 1, np.zeros((2, 2))),
            emissions=EmissionSpec(
                (GammaChannel(np.array([1.0, 2.0]), np.array([0.5, 0.5])),)
            ),
            initial_distribution=np.array([0.5, 0.5]),
        )
        values = np.array([[0.5], [1.0], [-3.0], [1.0]])
        seg = np.array([0, 0, 1, 1], dtype=np.int64)
        obs = ObservationSeries(values, seg)
        cov = CovariateSeries(np.zeros((4, 1)), seg)
        with pytest.raises(LikelihoodUnderflowError) as err:
            forward_loglik(m, obs, cov)
        assert err.value.t == 2

    def test_alignment_checks(self, model):
        obs, _ = series([0.0, 1.0])
        bad_cov = CovariateSeries(np.zeros((2, 2)), np.zeros(2, dtype=np.int64))
        with pytest.raises(InputError):
            forward_loglik(model, obs, bad_cov)

    def test_random_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m, obs, cov = random_instance(rng, int(rng.integers(2, 4)), int(rng.integers(2, 7)))
            assert abs(forward_loglik(m, obs, cov) - brute_force_loglik(m, obs, cov)) < 1e-10


class TestViterbi:
    def test_matches_enumeration(self, model):
        obs, cov = series([-1.2, 0.3, 2.5, 1.0, -0.5], [0, 0, 0, 1, 1])
        np.testing.assert_array_equal(
            viterbi(model, obs, cov), brute_force_viterbi(model, obs, cov)
        )

    def test_pulls_to_likely_state(self, model):
        obs, cov = series([-1.0, -1.1, 2.0, 2.1])
        path = viterbi(model, obs, cov)
        np.testing.assert_array_equal(path, [0, 0, 1, 1])


class TestPropagate:
    def test_rows_are_distributions(self, model):
        rng = np.random.default_rng(3)
        cov = CovariateSeries(rng.normal(size=(500, 1)), np.zeros(500, dtype=np.int64))
        probs = propagate_state_probs(model, cov)
        np.testing.assert_allclose(probs.values.sum(axis=1), 1.0, atol=1e-12)
        assert (probs.values >= 0).all()

    def test_constant_covariate_fixed_point(self, model):
        cov = CovariateSeries(np.full((50, 1), 0.3), np.zeros(50, dtype=np.int64))
        probs = propagate_state_probs(model, cov)
        rho = stationary_distribution(model.tpm(np.array([0.3])))
        np.testing.assert_allclose(probs.values, np.tile(rho, (50, 1)), atol=1e-13)

    def test_restarts_at_segment_boundaries(self, model):
        seg = np.array([0] * 30 + [1] * 30, dtype=np.int64)
        z = np.concatenate([np.linspace(-2, 2, 30)] * 2).reshape(-1, 1)
        probs = propagate_state_probs(model, CovariateSeries(z, seg))
        np.testing.assert_allclose(probs.values[:30], probs.values[30:], atol=1e-15)

    def test_hand_propagation_step(self, model):
        z = np.array([[0.1], [0.6]])
        cov = CovariateSeries(z, np.zeros(2, dtype=np.int64))
        probs = propagate_state_probs(model, cov).values
        delta1 = stationary_distribution(model.tpm(z[0]))
        np.testing.assert_allclose(probs[0], delta1, atol=1e-14)
        np.testing.assert_allclose(probs[1], delta1 @ model.tpm(z[1]), atol=1e-14)
