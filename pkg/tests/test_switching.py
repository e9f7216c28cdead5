"""Exact orienteering and the path-following executor."""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from conftest import fixed_uniforms
from weakbandit.lagrangian import SingleArmPolicy, gain_dp, solve_base
from weakbandit.oracles import exact_switching_opt
from weakbandit.scheduler import CombinedRunner, ScheduleConfig
from weakbandit.sim import draw_uniforms, episode_uniforms
from weakbandit.statespace import build_beta_bernoulli, build_known
from weakbandit.switching import (
    MetricSpec,
    orienteering_exact,
    run_switching,
    solve_switching,
    switching_runner,
)


def euclid(points):
    p = np.asarray(points, dtype=float)
    return np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))


def brute_orienteering(d, w, start, L):
    n = len(w)
    best, best_path = w[start], [start]
    others = [i for i in range(n) if i != start]
    for r in range(1, n):
        for perm in itertools.permutations(others, r):
            path = [start, *perm]
            length = sum(d[a, b] for a, b in zip(path, path[1:]))
            if length <= L + 1e-9:
                val = sum(w[i] for i in path)
                if val > best + 1e-12:
                    best, best_path = val, path
    return best_path, best


class TestOrienteering:
    def test_hand_instance(self):
        d = np.array([[0, 1, 2], [1, 0, 2], [2, 2, 0]], dtype=float)
        path, val = orienteering_exact(d, [0.25, 1.0, 1.5], 0, 2.0)
        assert path == [0, 2] and val == pytest.approx(1.75)

    def test_zero_budget(self):
        d = euclid([[0, 0], [1, 0], [0, 1]])
        assert orienteering_exact(d, [0.3, 5, 5], 0, 0.0) == ([0], pytest.approx(0.3))

    def test_zero_rewards(self):
        d = euclid([[0, 0], [1, 0], [0, 1]])
        path, val = orienteering_exact(d, [0, 0, 0], 1, 10.0)
        assert path == [1] and val == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 7))
        d = euclid(rng.random((n, 2)))
        w = rng.random(n)
        L = float(rng.choice([0.3, 0.8, 1.5]))
        _, val = orienteering_exact(d, w, 0, L)
        assert val == pytest.approx(brute_orienteering(d, w, 0, L)[1], abs=1e-12)

    def test_size_limit(self):
        with pytest.raises(ValueError, match="at most"):
            orienteering_exact(np.zeros((21, 21)), np.zeros(21), 0, 1.0)

    def test_metric_validation(self):
        with pytest.raises(ValueError, match="triangle"):
            MetricSpec(np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float), 0, 1.0)
        with pytest.raises(ValueError, match="symmetric"):
            MetricSpec(np.array([[0, 1], [2, 0]], dtype=float), 0, 1.0)


class TestSolveSwitching:
    arms = [build_beta_bernoulli(1, j, 4) for j in (1, 2, 3)]

    def test_slack_budget_matches_base(self):
        m = MetricSpec(euclid([[0, 0], [0.2, 0], [0, 0.3]]), 0, 100.0)
        sw = solve_switching(self.arms, m, 4)
        base = solve_base(self.arms, 1, 4)
        assert sw.dual_bound == pytest.approx(base.dual_bound, rel=1e-12)

    def test_zero_budget_single_arm(self):
        m = MetricSpec(euclid([[0, 0], [0.2, 0], [0, 0.3]]), 1, 0.0)
        sw = solve_switching(self.arms, m, 4)
        alone = solve_base([self.arms[1]], 1, 4)
        assert sw.reachable == (1,)
        assert sw.dual_bound == pytest.approx(alone.dual_bound, rel=1e-12)
        assert sw.minus.path == (1,) and sw.plus.path == (1,)

    def test_default_alpha(self):
        m = MetricSpec(euclid([[0, 0], [0.2, 0], [0, 0.3]]), 0, 1.0)
        assert solve_switching(self.arms, m, 4).alpha == 0.5

    def test_dual_dominates_unit_metric(self):
        arms = [build_beta_bernoulli(1, j, 3) for j in (1, 2, 3)]
        d = 1.0 - np.eye(3)
        m = MetricSpec(d, 0, 1.0)
        opt = exact_switching_opt(arms, d, 0, 1.0, 3)
        assert solve_switching(arms, m, 3).dual_bound >= opt - 1e-9


class TestRunSwitching:
    def test_single_arm_path_equals_base(self):
        arms = [build_beta_bernoulli(1, 1, 3), build_beta_bernoulli(1, 2, 3)]
        pol = gain_dp(arms[0], 0.2).policy
        pols = [pol, SingleArmPolicy.null(arms[1])]
        m = MetricSpec(1.0 - np.eye(2), 0, 0.0)
        base = CombinedRunner(arms, pols, ScheduleConfig(1, 3, (0, 1), 1.0))
        for e in range(50):
            u = episode_uniforms(2, e, 2, 3)
            res = run_switching(arms, [0], pols, 3, m, 1.0, u)
            assert res.total_reward == base.episode(u).total_reward

    def test_all_stop(self):
        arms = [build_known(1.0, 2)]
        m = MetricSpec(np.zeros((1, 1)), 0, 0.0)
        res = run_switching(arms, [0], [SingleArmPolicy.null(arms[0])], 2, m, 1.0, fixed_uniforms(1, 2))
        assert res.total_reward == 0.0 and res.distance_cost == 0.0

    def test_two_deterministic_arms(self):
        arms = [build_known(1.0, 1), build_known(0.5, 2)]
        m = MetricSpec(1.0 - np.eye(2), 0, 1.0)
        pols = [SingleArmPolicy.always_play(a) for a in arms]
        res = run_switching(arms, [0, 1], pols, 3, m, 1.0, fixed_uniforms(2, 3))
        assert res.total_reward == pytest.approx(2.0)
        assert res.distance_cost == pytest.approx(1.0)

    def test_distance_never_exceeds_budget(self):
        rng = np.random.default_rng(4)
        arms = [build_beta_bernoulli(1, j, 6) for j in range(1, 7)]
        m = MetricSpec(euclid(rng.random((6, 2))), 0, 0.9)
        sol = solve_switching(arms, m, 6)
        r = switching_runner(arms, m, 6, sol)
        u = draw_uniforms(np.random.default_rng(1), 2000, 6, 6)
        total, cost = r.run_batch(u)
        assert cost.max() <= 0.9 + 1e-9
        single = [r.episode(u.row(e)) for e in range(300)]
        assert np.array_equal([s.total_reward for s in single], total[:300])
        assert np.allclose([s.distance_cost for s in single], cost[:300])
