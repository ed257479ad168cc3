import json
import math
from pathlib import Path

import numpy as np
import pytest

from oracles import binary_tilt_oracle, grid_worst_case

from racer.reweight import (
    RobustConfig,
    exact_tilt,
    kl_divergence,
    tilt_weights,
    uniform_weights,
)

GOLDEN = Path(__file__).parent / "golden"


class TestRobustConfig:
    def test_mode_overrides_force_inf(self):
        cfg = RobustConfig(tau_reward=0.5, tau_cost=0.7, mode="racer-r")
        assert cfg.effective_tau_reward == 0.5
        assert math.isinf(cfg.effective_tau_cost)
        cfg = RobustConfig(tau_reward=0.5, tau_cost=0.7, mode="racer-c")
        assert math.isinf(cfg.effective_tau_reward)
        assert cfg.effective_tau_cost == 0.7
        cfg = RobustConfig(tau_reward=0.5, tau_cost=0.7, mode="acer")
        assert math.isinf(cfg.effective_tau_reward)
        assert math.isinf(cfg.effective_tau_cost)

    def test_validation(self):
        with pytest.raises(ValueError):
            RobustConfig(tau_reward=0.0)
        with pytest.raises(ValueError):
            RobustConfig(delta=-1.0)
        with pytest.raises(ValueError):
            RobustConfig(mode="bogus")


class TestTiltWeights:
    def test_constant_values_give_uniform(self):
        for direction in ("worst_low", "worst_high"):
            wv = tilt_weights([5.0, 5.0, 5.0], 0.3, direction)
            assert np.array_equal(wv.weights, np.ones(3))

    def test_three_point_tilt_matches_softmax_oracle(self):
        # weights_i = n * softmax(f_i / tau)_i, computed independently
        f = np.array([0.0, 1.0, 2.0])
        e = np.exp(f / 1.0)
        expected = 3.0 * e / e.sum()
        wv = tilt_weights(f, 1.0, "worst_high")
        assert np.allclose(wv.weights, expected, atol=1e-12)
        assert np.allclose(wv.weights, [0.2701, 0.7341, 1.9957], atol=1e-4)
        assert wv.baseline == pytest.approx(1.0)

    def test_huge_tau_recovers_empirical(self):
        wv = tilt_weights([0.0, 1.0, 2.0], 1e6, "worst_high")
        assert np.allclose(wv.weights, 1.0, atol=1e-5)

    def test_errors(self):
        with pytest.raises(ValueError, match="non-finite"):
            tilt_weights([0.0, math.nan], 1.0, "worst_high")
        with pytest.raises(ValueError, match="tau"):
            tilt_weights([0.0, 1.0], 0.0, "worst_high")
        with pytest.raises(ValueError, match="tau"):
            tilt_weights([0.0, 1.0], math.inf, "worst_high")
        with pytest.raises(ValueError, match="direction"):
            tilt_weights([0.0, 1.0], 1.0, "sideways")


class TestKlDivergence:
    def test_identity_is_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_point_mass_against_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_support_violation(self):
        with pytest.raises(ValueError, match="support"):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_gibbs_nonnegativity(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 8))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            assert kl_divergence(p, q) >= 0.0


class TestExactTilt:
    def test_tiny_delta_recovers_empirical(self):
        f = [0.0, 0.5, 1.0]
        rho = [0.2, 0.5, 0.3]
        res = exact_tilt(f, rho, 1e-10, "worst_high")
        assert res.status == "active"
        assert res.tau_star > 1e3
        assert np.allclose(res.weights.weights, 1.0, atol=1e-4)

    def test_binary_case_matches_golden_bisection(self):
        golden = json.loads((GOLDEN / "binary_tilt.json").read_text())
        p_oracle, tau_oracle = binary_tilt_oracle(golden["delta"])
        assert p_oracle == pytest.approx(golden["p_star"], abs=1e-12)
        assert tau_oracle == pytest.approx(golden["tau_star"], abs=1e-10)

        res = exact_tilt([0.0, 1.0], [0.5, 0.5], golden["delta"], "worst_high")
        tilted_mass = 0.5 * res.weights.weights[1]
        assert tilted_mass == pytest.approx(golden["p_star"], abs=1e-9)
        assert res.tau_star == pytest.approx(golden["tau_star"], rel=1e-9)
        assert round(tilted_mass, 3) == 0.657
        assert round(res.tau_star, 2) == 1.54

    @pytest.mark.parametrize("trial", range(8))
    def test_matches_simplex_grid_search(self, trial):
        rng = np.random.default_rng(100 + trial)
        n = int(rng.integers(2, 6))
        f = rng.uniform(0, 1, n)
        rho = rng.dirichlet(np.ones(n) * 2.0)
        direction = "worst_high" if rng.random() < 0.5 else "worst_low"
        on_ext = f == (f.max() if direction == "worst_high" else f.min())
        delta = rng.uniform(0.05, 0.7) * -math.log(rho[on_ext].sum())
        res = exact_tilt(f, rho, delta, direction)
        got = float(np.sum(rho * res.weights.weights * f))
        want, _ = grid_worst_case(f, rho, delta, direction)
        assert got == pytest.approx(want, abs=1e-3)

    def test_constant_values_flagged_slack(self):
        res = exact_tilt([2.0, 2.0], [0.4, 0.6], 0.1, "worst_high")
        assert res.status == "slack"
        assert math.isinf(res.tau_star)
        assert np.array_equal(res.weights.weights, np.ones(2))

    def test_huge_delta_flagged_saturated(self):
        res = exact_tilt([0.0, 1.0], [0.5, 0.5], 2.0, "worst_high")
        assert res.status == "saturated"
        assert res.tau_star == 0.0
        assert np.allclose(res.weights.weights, [0.0, 2.0])
        # point-mass KL is log 2 < 2.0, so the ball constraint is not active
        assert kl_divergence([0.0, 1.0], [0.5, 0.5]) < 2.0

    def test_kl_constraint_active_at_solution(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            f = rng.uniform(-2, 2, n)
            if np.ptp(f) == 0:
                continue
            rho = rng.dirichlet(np.ones(n))
            direction = "worst_high" if rng.random() < 0.5 else "worst_low"
            on_ext = f == (f.max() if direction == "worst_high" else f.min())
            delta = rng.uniform(0.1, 0.6) * -math.log(rho[on_ext].sum())
            res = exact_tilt(f, rho, delta, direction)
            tilted = rho * res.weights.weights
            assert kl_divergence(tilted, rho) == pytest.approx(delta, rel=1e-8)


class TestProperties:
    def test_jensen_baseline_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            f = rng.uniform(-1, 3, n)
            if np.ptp(f) == 0:
                continue
            rho = rng.dirichlet(np.ones(n))
            mean = float(rho @ f)
            delta = 0.3 * -math.log(rho[f == f.min()].sum())
            low = exact_tilt(f, rho, delta, "worst_low")
            assert low.weights.baseline <= mean + 1e-12
            delta = 0.3 * -math.log(rho[f == f.max()].sum())
            high = exact_tilt(f, rho, delta, "worst_high")
            assert high.weights.baseline >= mean - 1e-12

    def test_worst_case_ordering(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            f = rng.uniform(0, 5, int(rng.integers(2, 30)))
            if np.ptp(f) == 0:
                continue
            tau = float(rng.uniform(0.1, 5.0))
            up = tilt_weights(f, tau, "worst_high").weights
            down = tilt_weights(f, tau, "worst_low").weights
            assert np.mean(up * f) > np.mean(f)
            assert np.mean(down * f) < np.mean(f)

    def test_aggressiveness_monotone_in_tau(self):
        rng = np.random.default_rng(9)
        f = rng.uniform(0, 4, 25)
        taus = [0.1, 0.3, 1.0, 3.0, 10.0, 100.0]
        prev = math.inf
        for tau in taus:
            w = tilt_weights(f, tau, "worst_high").weights
            ratio = w.max() / w.min()
            assert ratio <= prev + 1e-9
            prev = ratio

    def test_shift_invariance(self):
        f = np.array([0.0, 1.0, 4.0, 7.0])
        base = tilt_weights(f, 0.7, "worst_high").weights
        # integer shifts are exactly representable: bitwise equality
        shifted = tilt_weights(f + 3.0, 0.7, "worst_high").weights
        assert np.array_equal(base, shifted)
        # arbitrary float shifts agree to rounding
        shifted = tilt_weights(f + 0.1234567, 0.7, "worst_high").weights
        assert np.allclose(base, shifted, rtol=1e-12)

    def test_extreme_inputs_stay_finite(self):
        f = np.array([-700.0, 0.0, 700.0])
        for direction in ("worst_low", "worst_high"):
            w = tilt_weights(f, 1.0, direction).weights
            assert np.all(np.isfinite(w))
            assert not np.any(np.isnan(w))
            assert w.mean() == pytest.approx(1.0, abs=1e-12)

    def test_mean_one_normalization(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            f = rng.uniform(-3, 3, int(rng.integers(1, 40)))
            w = tilt_weights(f, float(rng.uniform(0.2, 4.0)), "worst_low").weights
            assert w.mean() == pytest.approx(1.0, abs=1e-12)
            assert np.all(w >= 0.0)

    def test_monotone_coupling(self):
        rng = np.random.default_rng(11)
        f = rng.uniform(0, 2, 15)
        order = np.argsort(f)
        up = tilt_weights(f, 0.5, "worst_high").weights
        down = tilt_weights(f, 0.5, "worst_low").weights
        assert np.all(np.diff(up[order]) >= 0.0)
        assert np.all(np.diff(down[order]) <= 0.0)

    def test_uniform_weights_helper(self):
        wv = uniform_weights(4, baseline=2.5)
        assert np.array_equal(wv.weights, np.ones(4))
        assert wv.baseline == 2.5
