"""Gain DP, forward-pass statistics and the multiplier search."""
from __future__ import annotations

import numpy as np
import pytest

from weakbandit.lagrangian import (
    PLAY,
    STOP,
    MixedPolicy,
    NonMonotoneOracleError,
    RelaxationPoint,
    SingleArmPolicy,
    base_response,
    coupled_lagrangian_search,
    gain_dp,
    gittins_index,
    lagrangian_bisection,
    policy_stats,
    solve_base,
)
from weakbandit.statespace import build_beta_bernoulli, build_explicit, build_known


def one_step(r=0.5):
    return build_explicit({"u": {"reward": r, "transitions": [[0, 1 - r, "a"], [1, r, "b"]]},
                           "a": {"reward": 0.0}, "b": {"reward": 1.0}}, 1)


class TestGainDP:
    def test_one_step(self):
        res = gain_dp(one_step(), 0.2)
        assert res.Q == pytest.approx(0.3)
        assert res.policy.actions[0] == PLAY

    def test_beta_t2(self):
        m = build_beta_bernoulli(1, 1, 2)
        res = gain_dp(m, 0.4)
        assert res.gain[m.state((1, 0))] == pytest.approx(4 / 15)
        assert res.gain[m.state((0, 1))] == 0.0
        assert res.Q == pytest.approx(7 / 30)
        played = {m.labels[u] for u in np.flatnonzero(res.policy.actions == PLAY)}
        assert played == {(0, 0), (1, 0)}

    def test_large_lambda(self):
        m = build_beta_bernoulli(2, 1, 5)
        res = gain_dp(m, float(m.reward.max() * 5))
        assert res.Q == 0.0 and np.all(res.policy.actions == STOP)

    def test_tie_goes_to_stop(self):
        res = gain_dp(build_known(0.5, 2), 0.5)
        assert res.Q == 0.0 and np.all(res.policy.actions == STOP)

    def test_rejects(self):
        with pytest.raises(ValueError):
            gain_dp(one_step(), -0.1)
        bad = build_explicit({"r": {"reward": 0.5, "transitions": [[1, 0.5, "h"], [0, 0.5, "l"]]},
                              "h": {"reward": 0.9}, "l": {"reward": 0.2}}, 2)
        with pytest.raises(ValueError, match="martingale"):
            gain_dp(bad, 0.1)


class TestPolicyStats:
    def test_matches_gain(self):
        m = build_beta_bernoulli(1, 1, 2)
        st = policy_stats(m, gain_dp(m, 0.4).policy)
        assert st.R == pytest.approx(5 / 6)
        assert st.T_plays == pytest.approx(1.5)
        assert st.R - 0.4 * st.T_plays == pytest.approx(7 / 30)

    def test_null_and_always(self):
        m = build_beta_bernoulli(1, 1, 3)
        st = policy_stats(m, SingleArmPolicy.null(m))
        assert st.R == 0 and st.T_plays == 0
        st = policy_stats(m, SingleArmPolicy.always_play(m))
        assert st.R == pytest.approx(1.5) and st.T_plays == pytest.approx(3)
        assert st.w[0] == 1.0 and np.all(st.z <= st.w + 1e-15)

    def test_mixed_is_weighted(self):
        m = build_beta_bernoulli(1, 2, 4)
        p1, p2 = gain_dp(m, 0.1).policy, gain_dp(m, 0.4).policy
        mix = policy_stats(m, MixedPolicy.two_point(p1, p2, 0.3))
        s1, s2 = policy_stats(m, p1), policy_stats(m, p2)
        assert mix.R == pytest.approx(0.3 * s1.R + 0.7 * s2.R)
        assert mix.T_plays == pytest.approx(0.3 * s1.T_plays + 0.7 * s2.T_plays)

    def test_rejects_wrong_size(self):
        m = build_beta_bernoulli(1, 1, 2)
        with pytest.raises(ValueError):
            policy_stats(m, SingleArmPolicy(np.zeros(2, dtype=np.int8)))
        acts = np.ones(m.n_states, dtype=np.int8)
        with pytest.raises(ValueError, match="unplayable"):
            policy_stats(m, SingleArmPolicy(acts))


class TestSearch:
    def test_two_deterministic_arms(self):
        arms = [build_known(1.0, 2), build_known(1.0, 2)]
        sol = solve_base(arms, K=1, T=2, eps=0.01)
        assert sol.lambda_minus == pytest.approx(1.0, abs=1e-2)
        assert sol.lambda_plus == pytest.approx(1.0, abs=1e-2)
        assert sol.a == pytest.approx(0.5)
        stats = [policy_stats(m, p) for m, p in zip(arms, sol.policies)]
        assert sum(s.T_plays for s in stats) == pytest.approx(2)
        assert sum(s.R for s in stats) == pytest.approx(2)
        assert sol.dual_bound == pytest.approx(2, abs=0.05)
        assert sol.lambda_minus <= sol.lambda_plus

    def test_slack_constraint(self):
        m = build_beta_bernoulli(1, 1, 4)
        sol = solve_base([m], K=1, T=4)
        assert sol.lambda_minus == sol.lambda_plus == 0 and sol.a == 1
        st = policy_stats(m, sol.policies[0])
        assert st.T_plays == pytest.approx(4)

    def test_identical_arms_full_budget(self):
        arms = [build_beta_bernoulli(1, 2, 3) for _ in range(3)]
        sol = coupled_lagrangian_search(arms, base_response, 3 * 3, 0.05)
        assert sol.lambda_plus == 0

    def test_bracket_and_mixture(self):
        arms = [build_beta_bernoulli(1, j, 6) for j in (1, 2, 3)]
        sol = solve_base(arms, 1, 6, eps=0.05)
        assert sol.minus.consumption > 6 >= sol.plus.consumption
        assert sol.consumption == pytest.approx(6)
        M = sol.trace[0][1]
        assert sol.lambda_plus - sol.lambda_minus <= 0.05 * M / (2 * 3 * 6) + 1e-15
        assert sol.iterations <= 60

    def test_nonmonotone_detected(self):
        def oracle(lam):
            c = 10.0 if 1.5 < lam < 2.5 else (5.0 if lam < 1 else 0.0)
            return RelaxationPoint(lam, max(0.0, 2 - lam), c, ())
        with pytest.raises(NonMonotoneOracleError):
            lagrangian_bisection(oracle, 3.0, 0.01, 1)


class TestGittins:
    def test_leaf(self):
        m = build_known(0.7, 1)
        assert gittins_index(m, 0) == pytest.approx(0.7, abs=1e-8)

    def test_beta_two_steps(self):
        m = build_beta_bernoulli(1, 1, 2)
        assert gittins_index(m, 0) == pytest.approx(5 / 9, abs=1e-8)

    def test_known_everywhere(self):
        m = build_known(0.4, 4)
        for u in np.flatnonzero(m.playable):
            assert gittins_index(m, u) == pytest.approx(0.4, abs=1e-8)

    def test_unplayable(self):
        m = build_beta_bernoulli(1, 1, 1)
        with pytest.raises(ValueError):
            gittins_index(m, 1)
