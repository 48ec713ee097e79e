import numpy as np
import pytest

from fedabc.abc_engine import AbcProblem, AbcResult, abc_rejection, run_trial
from fedabc.rng import RngHandle

RNG = RngHandle(seed=360)


def normal_mean_problem(epsilon, target, max_trials=200_000, observed=3.0):
    """Prior N(0, 10^2), simulator of 50 draws from N(theta, 1), mean summary."""
    return AbcProblem(
        prior_sample=lambda g: g.normal(0.0, 10.0),
        simulate=lambda theta, g: g.normal(theta, 1.0, size=50),
        summarize=lambda data: float(np.mean(data)),
        discrepancy=lambda sim, obs: abs(sim - obs),
        observed_summary=observed,
        epsilon=epsilon,
        target_accepted=target,
        max_trials=max_trials,
    )


class TestConjugateOracle:
    def test_posterior_mean_and_sd(self):
        # Independent oracle: normal-normal conjugacy. With prior variance
        # tau2=100, n=50 observations of unit variance and observed mean 3,
        # the posterior is N(3*n*tau2/(n*tau2+1), tau2/(n*tau2+1)).
        n_obs, tau2, xbar = 50, 100.0, 3.0
        post_mean = xbar * (n_obs * tau2) / (n_obs * tau2 + 1.0)
        post_sd = np.sqrt(tau2 / (n_obs * tau2 + 1.0))
        problem = normal_mean_problem(epsilon=0.1, target=500)
        result = abc_rejection(problem, RNG.child(1))
        assert len(result.accepted) >= 500
        thetas = np.array(result.accepted)
        assert abs(thetas.mean() - post_mean) < 0.2
        assert abs(thetas.std() - post_sd) / post_sd < 0.30


class TestEpsilonLimit:
    def test_infinite_threshold_recovers_prior(self):
        problem = normal_mean_problem(epsilon=1e12, target=10_000, max_trials=10_000)
        result = abc_rejection(problem, RNG.child(2))
        assert result.acceptance_rate == 1.0
        thetas = np.array(result.accepted)
        n = thetas.size
        # first two moments of the N(0, 100) prior within 5 standard errors
        se_mean = 10.0 / np.sqrt(n)
        assert abs(thetas.mean()) < 5 * se_mean
        m2 = np.mean(thetas**2)
        se_m2 = np.sqrt(2 * 100.0**2 / n)
        assert abs(m2 - 100.0) < 5 * se_m2


class TestCommonRandomNumbers:
    def test_tight_acceptances_subset_of_loose(self):
        # target == max_trials scans the whole budget under both thresholds
        loose = abc_rejection(normal_mean_problem(4.0, 3000, 3000), RNG.child(3))
        tight = abc_rejection(normal_mean_problem(1.0, 3000, 3000), RNG.child(3))
        assert tight.trials == loose.trials == 3000
        assert set(tight.accepted_trials) <= set(loose.accepted_trials)
        assert len(tight.accepted) <= len(loose.accepted)

    def test_rate_monotone_in_epsilon(self):
        rates = []
        for eps in (8.0, 4.0, 2.0, 1.0, 0.5):
            res = abc_rejection(normal_mean_problem(eps, 2000, 2000), RNG.child(4))
            rates.append(res.acceptance_rate)
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestMechanics:
    def test_partial_result_not_a_crash(self):
        problem = normal_mean_problem(epsilon=1e-9, target=50, max_trials=300)
        result = abc_rejection(problem, RNG.child(5))
        assert not result.completed
        assert result.trials == 300
        assert len(result.accepted) < 50

    def test_deterministic(self):
        a = abc_rejection(normal_mean_problem(2.0, 20, 5000), RNG.child(6))
        b = abc_rejection(normal_mean_problem(2.0, 20, 5000), RNG.child(6))
        assert a.accepted == b.accepted
        assert a.accepted_trials == b.accepted_trials
        assert a.discrepancy_trace == b.discrepancy_trace

    def test_accepted_replay(self):
        problem = normal_mean_problem(2.0, 20, 5000)
        result = abc_rejection(problem, RNG.child(7))
        assert result.accepted
        for theta, trial in zip(result.accepted, result.accepted_trials):
            replayed_theta, dist = run_trial(problem, RNG.child(7), trial)
            assert replayed_theta == theta
            assert dist < problem.epsilon
            assert dist == result.discrepancy_trace[trial]

    def test_strict_inequality(self):
        # Rig a discrepancy that lands exactly on epsilon: must reject.
        problem = AbcProblem(
            prior_sample=lambda g: 0.0,
            simulate=lambda theta, g: 0.0,
            summarize=lambda d: 0.0,
            discrepancy=lambda s, o: 5.0,
            observed_summary=0.0,
            epsilon=5.0,
            target_accepted=1,
            max_trials=10,
        )
        result = abc_rejection(problem, RNG.child(8))
        assert result.accepted == []
        assert result.trials == 10

    def test_validation(self):
        with pytest.raises(ValueError):
            normal_mean_problem(epsilon=-1.0, target=5)
        with pytest.raises(ValueError):
            normal_mean_problem(epsilon=1.0, target=0)
        with pytest.raises(ValueError):
            normal_mean_problem(epsilon=1.0, target=100, max_trials=5)

    def test_json_export(self):
        result = AbcResult(
            accepted=[1.5], accepted_trials=[3], trials=10, epsilon=0.5,
            discrepancy_trace=[1.0] * 10,
        )
        doc = result.to_json()
        assert doc["accepted"] == [1.5]
        assert doc["trials"] == 10
        assert doc["acceptance_rate"] == 0.1
