import math

import numpy as np
import pytest

from hmctrack.filter import (
    ParticleEnsemble,
    WeightVector,
    degenerate_fallback,
    ess,
    ess_from_log,
    posterior_mean,
    predict,
    resample_indices,
    resample_pairs,
    step_generic,
    step_improved,
    update_weights,
)
from hmctrack.hmc import HmcConfig
from hmctrack.model import DynamicsParams, ObsModel, propagate
from hmctrack.scenario import ScenarioConfig, synthesize
from hmctrack.tracker import IMPROVED, TrackerConfig, track

from oracles import kalman_update

P1 = DynamicsParams()
LIN = ObsModel.linear()


def ensemble(rng, n, n_targets=1, scale=10.0):
    return ParticleEnsemble.from_states(rng.normal(size=(n, n_targets, 4)) * scale, P1)


def assert_pairs_coherent(ens, p=P1):
    np.testing.assert_array_equal(ens.curr, propagate(ens.prev, ens.noise, p))


class TestPredict:
    def test_vanishing_noise(self, rng):
        p = DynamicsParams(1.0, 1e-30, 1e-30)
        ens = ensemble(rng, 50, 2)
        out = predict(ens, p, rng)
        assert np.abs(out.noise).max() < 1e-10
        np.testing.assert_allclose(out.curr, propagate(ens.curr, np.zeros((50, 2, 2)), p), atol=1e-10)

    def test_noise_covariance(self, rng):
        p = DynamicsParams(1.0, 2.0, 0.5)
        v = predict(ensemble(rng, 10_000), p, rng).noise[:, 0, :]
        cov = np.cov(v.T)
        np.testing.assert_allclose(np.diag(cov), [2.0, 0.5], rtol=0.05)
        assert abs(cov[0, 1]) < 0.05 * math.sqrt(2.0 * 0.5)

    def test_pairs(self, rng):
        ens = ensemble(rng, 100, 3)
        out = predict(ens, P1, rng)
        assert_pairs_coherent(out)
        np.testing.assert_array_equal(out.prev, ens.curr)


class TestUpdateWeights:
    def test_identical_samples(self):
        ens = ParticleEnsemble.from_states(np.ones((2, 1, 4)), P1)
        np.testing.assert_allclose(update_weights(ens, [[3.0, 4.0]], LIN).normalized, [0.5, 0.5])

    def test_two_residuals(self):
        expected = 1 / (1 + math.exp(-2))  # computed by hand: 0.8807970779778823
        assert expected == pytest.approx(0.8807970779778823, abs=1e-15)
        states = np.array([[[0.0, 0, 0, 0]], [[2.0, 0, 0, 0]]])
        ens = ParticleEnsemble(states, states.copy(), np.zeros((2, 1, 2)))
        w = update_weights(ens, [[0.0, 0.0]], LIN)
        np.testing.assert_allclose(w.normalized, [expected, 1 - expected], atol=1e-12)
        assert np.round(w.normalized, 4).tolist() == [0.8808, 0.1192]

    def test_product_over_targets(self, rng):
        ens = ensemble(rng, 30, 2, scale=1.0)
        z = rng.normal(size=(2, 2))
        joint = update_weights(ens, z, LIN).log_g
        singles = [update_weights(ens.select_targets([k]), z[k:k + 1], LIN).log_g for k in (0, 1)]
        np.testing.assert_allclose(np.exp(joint), np.exp(singles[0]) * np.exp(singles[1]), rtol=1e-12)

    def test_normalization(self, rng):
        w = update_weights(ensemble(rng, 500, 4), rng.normal(size=(4, 2)), LIN)
        assert abs(w.normalized.sum() - 1) < 1e-12
        assert np.all(w.normalized >= 0)

    def test_linear_space_underflow_flags_degenerate(self):
        states = np.full((3, 1, 4), 1e4)
        ens = ParticleEnsemble(states, states.copy(), np.zeros((3, 1, 2)))
        assert update_weights(ens, [[0.0, 0.0]], LIN, linear_space=True).degenerate
        assert not update_weights(ens, [[0.0, 0.0]], LIN).degenerate

    def test_wrong_observation_count(self, rng):
        with pytest.raises(ValueError):
            update_weights(ensemble(rng, 5, 2), [[0.0, 0.0]], LIN)


class TestEss:
    def test_uniform(self):
        assert ess(np.full(7, 0.3)) == pytest.approx(7.0)

    def test_point_mass(self):
        assert ess([1.0, 0.0]) == pytest.approx(1.0)
        assert ess([0.0] * 9 + [2.0]) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ess([3.0, 1.0]) == pytest.approx(1.6, abs=1e-15)

    def test_matches_printed_formula(self, rng):
        for _ in range(50):
            g = rng.exponential(size=rng.integers(2, 40))
            c = g.std() / g.mean()
            assert ess(g) == pytest.approx(len(g) / (1 + c * c), rel=1e-12)

    def test_bounds(self, rng):
        for _ in range(200):
            g = rng.exponential(size=rng.integers(1, 50)) ** rng.uniform(0.1, 8)
            assert 1 - 1e-12 <= ess(g) <= len(g) + 1e-12

    def test_scale_invariant_log_form(self, rng):
        log_g = rng.normal(size=40) * 3 - 5000
        assert ess_from_log(log_g) == pytest.approx(ess(np.exp(log_g + 5000)), rel=1e-12)

    def test_all_zero_is_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            ess([0.0, 0.0])


class TestResample:
    def test_point_mass(self, rng):
        idx = resample_indices([1.0, 0, 0, 0, 0], rng.uniform(0.01, 0.99, 5))
        assert idx.tolist() == [0] * 5

    def test_quartiles(self):
        assert resample_indices([0.25] * 4, [0.1, 0.3, 0.6, 0.9]).tolist() == [0, 1, 2, 3]

    def test_hand_cdf(self):
        assert resample_indices([0.5, 0.3, 0.2], [0.49, 0.51, 0.81]).tolist() == [0, 1, 2]

    def test_uniform_domain(self):
        with pytest.raises(ValueError):
            resample_indices([0.5, 0.5], [0.0, 0.5])
        with pytest.raises(ValueError):
            resample_indices([0.5, 0.5], [0.5, 1.0])

    def test_unbiased_offspring_counts(self):
        rng = np.random.default_rng(11)
        n, reps = 100, 10_000
        w = rng.dirichlet(np.ones(n))
        counts = np.zeros(n)
        for _ in range(reps):
            counts += np.bincount(resample_indices(w, rng.uniform(1e-300, 1, n)), minlength=n)
        mean = counts / reps
        # per replication the offspring count is Binomial(N, W)
        se = np.sqrt(n * w * (1 - w) / reps)
        assert np.all(np.abs(mean - n * w) <= 3 * se)

    def test_permutation_equivariance(self, rng):
        w = rng.dirichlet(np.ones(20))
        u = rng.uniform(size=20)
        perm = rng.permutation(20)
        np.testing.assert_array_equal(resample_indices(w, u[perm]), resample_indices(w, u)[perm])

    def test_pairs_copied_whole(self, rng):
        ens = predict(ensemble(rng, 3), P1, rng)
        w = WeightVector(np.zeros(3), np.array([0.5, 0.3, 0.2]))
        out = resample_pairs(ens, w, [0.49, 0.51, 0.81])
        for field in ("prev", "curr", "noise"):
            np.testing.assert_array_equal(getattr(out, field), getattr(ens, field))
        assert_pairs_coherent(out)


class TestFallback:
    def underflowing(self, n):
        return WeightVector(np.full(n, -1e6), np.full(n, 1.0 / n), True)

    def test_point_mass(self, rng):
        out = degenerate_fallback(self.underflowing(3), rng)
        assert out.degenerate
        assert sorted(out.normalized.tolist()) == [0.0, 0.0, 1.0]

    def test_guard(self, rng):
        with pytest.raises(ValueError):
            degenerate_fallback(WeightVector(np.array([-1e6, -1.0]), np.array([0.0, 1.0])), rng)

    def test_uniform_choice(self):
        rng = np.random.default_rng(2024)
        picks = [int(np.argmax(degenerate_fallback(self.underflowing(4), rng).normalized))
                 for _ in range(10_000)]
        counts = np.bincount(picks, minlength=4)
        assert np.all(np.abs(counts - 2500) <= 150), counts


class TestStepGeneric:
    def test_symmetric_limit(self, rng):
        p = DynamicsParams(1.0, 1e-30, 1e-30)
        s0 = np.array([1.0, 0.5, -2.0, 0.25])
        ens = ParticleEnsemble.from_states(np.broadcast_to(s0, (200, 1, 4)).copy(), p)
        z = propagate(s0, np.zeros(2), p)[[0, 2]]
        out = step_generic(ens, [z], p, LIN, rng)
        assert np.ptp(out.weights.normalized) < 1e-9
        assert out.ess == pytest.approx(200, rel=1e-9)

    def test_one_step_matches_kalman(self):
        n = 100_000
        x0 = np.array([2.0, 0.5, -1.0, -0.3])
        P0 = np.diag([1.5, 0.4, 0.8, 0.2])
        prior = np.random.default_rng(98).multivariate_normal(x0, P0, size=n)[:, None, :]
        ens = ParticleEnsemble.from_states(prior, P1)
        z = np.array([3.1, -1.9])
        out = step_generic(ens, [z], P1, LIN, np.random.default_rng(99))
        # prediction is the first draw of the step, so a twin stream reproduces the cloud
        x = predict(ens, P1, np.random.default_rng(99)).curr[:, 0, :]
        w = out.weights.normalized
        est = out.estimate[0]
        np.testing.assert_allclose(est, w @ x, rtol=1e-12, atol=1e-12)
        mean_kf, _ = kalman_update(x0, P0, z)
        # standard error of a self-normalized importance estimate
        se = np.sqrt(np.sum(w[:, None] ** 2 * (x - est) ** 2, axis=0))
        assert np.all(np.abs(est - mean_kf) < 3 * se), (est, mean_kf, se)

    def test_seeded_determinism(self):
        ens = ensemble(np.random.default_rng(0), 300, 2)
        z = [[1.0, 2.0], [-3.0, 0.5]]
        a = step_generic(ens, z, P1, LIN, np.random.default_rng(5))
        b = step_generic(ens, z, P1, LIN, np.random.default_rng(5))
        for field in ("prev", "curr", "noise"):
            assert getattr(a.ensemble, field).tobytes() == getattr(b.ensemble, field).tobytes()
        assert_pairs_coherent(a.ensemble)



class TestStepImproved:
    def test_zero_sweeps_is_resampling(self, rng):
        ens = ensemble(np.random.default_rng(1), 400, 2)
        z = [[1.0, 2.0], [-3.0, 0.5]]
        out = step_improved(ens, z, P1, LIN, HmcConfig(metropolis_sweeps=0), np.random.default_rng(3))
        twin = np.random.default_rng(3)
        pred = predict(ens, P1, twin)
        w = update_weights(pred, z, LIN)
        res = resample_pairs(pred, w, twin.uniform(np.nextafter(0.0, 1.0), 1.0, 400))
        for field in ("prev", "curr", "noise"):
            np.testing.assert_array_equal(getattr(out.ensemble, field), getattr(res, field))
        assert math.isnan(out.acceptance_rate)

    def test_pairs_after_move(self):
        ens = ensemble(np.random.default_rng(2), 300, 3)
        z = [[1.0, 2.0], [-3.0, 0.5], [10.0, -4.0]]
        out = step_improved(ens, z, P1, LIN, HmcConfig(metropolis_sweeps=20), np.random.default_rng(4))
        assert_pairs_coherent(out.ensemble)
        assert 0 < out.acceptance_rate <= 1

    def test_pairs_after_move_bearing(self):
        m = ObsModel.bearing_range()
        ens = ParticleEnsemble.from_states(
            np.random.default_rng(2).normal(size=(200, 2, 4)) * 3 + [40, 0, 30, 0], P1)
        z = [[0.64, 50.0], [0.7, 48.0]]
        out = step_improved(ens, z, P1, m, HmcConfig(metropolis_sweeps=10), np.random.default_rng(4))
        assert_pairs_coherent(out.ensemble)

    def test_generic_equals_improved_without_moves(self):
        # same stream, same weight normalization: the improved filter with no
        # MCMC sweeps is the generic filter plus pair bookkeeping
        ens = ensemble(np.random.default_rng(6), 500, 2)
        z = [[0.5, 1.0], [2.0, -1.0]]
        g = step_generic(ens, z, P1, LIN, np.random.default_rng(8), linear_space=False)
        i = step_improved(ens, z, P1, LIN, HmcConfig(metropolis_sweeps=0), np.random.default_rng(8))
        np.testing.assert_array_equal(g.ensemble.curr, i.ensemble.curr)
        np.testing.assert_array_equal(g.weights.normalized, i.weights.normalized)
        assert g.ess == i.ess_before_move
        np.testing.assert_array_equal(posterior_mean(g.ensemble), i.estimate)

    def test_move_raises_ess(self):
        truth = synthesize(ScenarioConfig(steps=200), np.random.default_rng(0))
        cfg = TrackerConfig(IMPROVED, n_samples=120)
        report = track(truth, cfg, np.random.default_rng(1)).report
        after, before = np.array(report.ess[1:]), np.array(report.ess_before_move[1:])
        assert np.all(np.isfinite(before))
        assert np.mean(after >= before) >= 0.8


class TestPosteriorMean:
    def test_identical(self):
        s = np.array([[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]])
        np.testing.assert_array_equal(posterior_mean(np.broadcast_to(s, (9, 2, 4))), s)

    def test_symmetric_pair(self):
        s = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_allclose(posterior_mean(np.array([[s], [-s]]), [0.5, 0.5]), np.zeros((1, 4)))

    def test_hand_convex_combination(self):
        w = [0.8807970779778823, 0.11920292202211755]
        states = np.array([[[0.0, 0, 0, 0]], [[2.0, 0, 0, 0]]])
        # 0.8808 * 0 + 0.1192 * 2
        assert posterior_mean(states, w)[0, 0] == pytest.approx(0.2384058440442351, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            posterior_mean(np.zeros((0, 1, 4)))
