"""Monte Carlo harness, exact oracles and the tight instance."""
from __future__ import annotations

import numpy as np
import pytest

from weakbandit.instance import gen_tight_instance
from weakbandit.lagrangian import solve_base
from weakbandit import oracles
from weakbandit.oracles import OracleSizeError, exact_joint_opt
from weakbandit.scheduler import CombinedRunner, ScheduleConfig
from weakbandit.sim import (
    EpisodeRunner,
    chunk_size,
    episode_uniforms,
    estimate_reward,
    simulate_rewards,
    summarize,
)
from weakbandit.statespace import MixturePrior, build_arm, build_beta_bernoulli, build_known


class TestEstimate:
    def test_deterministic_runner(self):
        est = estimate_reward(EpisodeRunner(lambda u: 2.0, 1, 1), 100)
        assert est.mean == 2.0 and est.stderr == 0.0 and est.episodes == 100

    def test_bernoulli_half(self):
        def batch(u):
            return (u.plays[:, 0, 0] < 0.5).astype(float)

        batch.n_arms, batch.plays_per_arm = 1, 1
        est = estimate_reward(batch, 1_000_000, seed=3)
        assert abs(est.mean - 0.5) < 0.002

    def test_same_seed_same_estimate(self):
        arms = [build_beta_bernoulli(1, j, 4) for j in (1, 2)]
        r = CombinedRunner(arms, solve_base(arms, 1, 4).policies, ScheduleConfig(1, 4))
        assert estimate_reward(r, 5000, seed=7) == estimate_reward(r, 5000, seed=7)
        assert estimate_reward(r, 5000, seed=7) != estimate_reward(r, 5000, seed=8)

    def test_thread_count_does_not_matter(self):
        arms = [build_beta_bernoulli(1, j, 5) for j in (1, 2, 3)]
        r = CombinedRunner(arms, solve_base(arms, 1, 5).policies, ScheduleConfig(1, 5))
        n = 3 * chunk_size(3, 5) + 17
        ref = simulate_rewards(r, n, seed=1, threads=1)
        for t in (4, 16):
            assert np.array_equal(simulate_rewards(r, n, seed=1, threads=t), ref)

    def test_batch_matches_single_episode_streams(self):
        arms = [build_beta_bernoulli(1, 1, 3), build_beta_bernoulli(1, 2, 3)]
        r = CombinedRunner(arms, solve_base(arms, 1, 3).policies, ScheduleConfig(1, 3))
        rewards = simulate_rewards(r, 50, seed=4)
        single = [r.episode(episode_uniforms(4, e, 2, 3)).total_reward for e in range(50)]
        assert rewards.tolist() == single

    def test_bad_episode_count(self):
        r = EpisodeRunner(lambda u: 1.0, 1, 1)
        for bad in (0, -3, 2.5):
            with pytest.raises(ValueError):
                simulate_rewards(r, bad)

    def test_single_sample_stderr(self):
        assert summarize(np.array([3.0]), 0).stderr == 0.0


class TestExactJoint:
    def test_beta_single_arm(self):
        assert exact_joint_opt([build_beta_bernoulli(1, 1, 2)], 1, 2) == pytest.approx(1.0)

    def test_known_arm(self):
        assert exact_joint_opt([build_known(0.3, 5)], 1, 5) == pytest.approx(1.5)

    def test_two_arms_by_hand(self):
        # play the uniform arm first and follow the winner
        arms = [build_beta_bernoulli(1, 1, 2), build_beta_bernoulli(1, 2, 2)]
        assert exact_joint_opt(arms, 1, 2) == pytest.approx(0.5 + 0.5 * 2 / 3 + 0.5 * 1 / 3)

    def test_multiple_plays_per_slot(self):
        arms = [build_known(1.0, 3), build_known(0.5, 3), build_known(0.2, 3)]
        assert exact_joint_opt(arms, 2, 3) == pytest.approx(4.5)

    def test_size_limit(self, monkeypatch):
        monkeypatch.setattr(oracles, "MAX_JOINT_STATES", 5000)
        arms = [build_beta_bernoulli(1, 1, 30) for _ in range(6)]
        with pytest.raises(OracleSizeError):
            exact_joint_opt(arms, 1, 30)


class TestTightInstance:
    def test_two_arms(self):
        spec = gen_tight_instance(2)
        assert spec.n == 2 and spec.T == 2 and spec.K == 1
        assert spec.arms[0].prior == MixturePrior(((0.25, 0.5), (0.75, 0.0)))

    def test_ten_arms(self):
        spec = gen_tight_instance(10)
        (w1, p1), (w0, p0) = spec.arms[0].prior.components
        assert (w1, p1, p0) == pytest.approx((0.01, 0.9, 0.0))
        assert spec.T == 10

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_root_mean(self, n):
        m = build_arm(gen_tight_instance(n).arms[0].prior, n)
        assert m.reward[0] == pytest.approx(1 / n**2 * (1 - 1 / n))

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            gen_tight_instance(1)

    def test_gap_grows(self):
        gaps = []
        for n in (3, 4, 5):
            spec = gen_tight_instance(n)
            arms = spec.build_arms()
            gaps.append(solve_base(arms, 1, n, 0.01).dual_bound / exact_joint_opt(arms, 1, n))
        assert gaps == sorted(gaps) and gaps[0] > 1.2
