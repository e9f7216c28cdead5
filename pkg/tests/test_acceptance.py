"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed in the
terminal summary of the run (and immediately with ``-s``).
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

from conftest import record_acceptance
from weakbandit.budgeted import BudgetedRunner, balance_lambda
from weakbandit.delayed import COMPACTED, delayed_runner, solve_delayed
from weakbandit.instance import ArmSpec, InstanceSpec, gen_tight_instance
from weakbandit.lagrangian import gain_dp, policy_stats, solve_base
from weakbandit.maxmab import (
    FULL,
    STALL,
    THROTTLE,
    SequentialRunner,
    ThrottledRunner,
    only_max_reduction,
    p_feasible_opt,
    solve_maxmab,
    solve_maxmab_truncated,
)
from weakbandit.oracles import (
    exact_budgeted_opt,
    exact_delayed_opt,
    exact_joint_opt,
    exact_maxmab_opt,
    exact_switching_opt,
)
from weakbandit.pipeline import solve_instance
from weakbandit.scheduler import CombinedRunner, ScheduleConfig
from weakbandit.sim import draw_uniforms, estimate_reward, simulate_rewards
from weakbandit.statespace import (
    BetaPrior,
    build_beta_bernoulli,
    build_explicit,
    build_mixture_bernoulli,
)
from weakbandit.switching import MetricSpec, orienteering_exact, solve_switching, switching_runner

EPS = 0.05
BETA01 = (0.0, 1.0)


def beta_arm_specs(rng, n, delay=0):
    """Arms with priors Beta(1, j), j drawn from 1..5."""
    return tuple(ArmSpec(BetaPrior(1, int(j), BETA01), delay=delay) for j in rng.integers(1, 6, n))


def base_instances():
    """Criterion 1 instances: five draws of n=5 Beta(1, j) arms, T=10, K=1."""
    out = []
    for k in range(5):
        rng = np.random.default_rng(100 + k)
        out.append(InstanceSpec("base", 10, beta_arm_specs(rng, 5), K=1, epsilon=EPS))
    return out


def meets(est, dual, factor, slack=3.0):
    return est.mean >= dual / factor - slack * est.stderr


def unit_square(points):
    p = np.asarray(points)
    return np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))


# ---------------------------------------------------------------------------


def test_base_two_approximation():
    t0 = time.perf_counter()
    factor = 2 * (1 + EPS)
    worst = math.inf
    ok = True
    for spec in base_instances():
        solved = solve_instance(spec)
        est = solved.estimate(100_000, seed=1)
        ok &= meets(est, solved.dual_bound, factor)
        worst = min(worst, solved.dual_bound / est.mean)
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    record_acceptance(1, ok, f"base: worst dual/mean {worst:.3f} vs limit {factor:.2f}; {elapsed:.1f}s total")
    assert ok


def test_tight_gap():
    gaps = []
    for n in (3, 4, 5, 6):
        spec = gen_tight_instance(n)
        arms = spec.build_arms()
        gaps.append(solve_base(arms, 1, n, EPS).dual_bound / exact_joint_opt(arms, 1, n))
    ok = all(a <= b + 1e-12 for a, b in zip(gaps, gaps[1:])) and gaps[-1] >= 1.5 and max(gaps) <= 2.05
    record_acceptance(2, ok, "tight gaps n=3..6: " + ", ".join(f"{g:.3f}" for g in gaps))
    assert ok


def test_dual_dominance_every_variant():
    worst: dict[str, float] = {}

    def note(name, dual, opt):
        worst[name] = min(worst.get(name, math.inf), dual - opt)

    for k in range(20):
        rng = np.random.default_rng(300 + k)
        T = int(rng.integers(1, 5))
        ab = rng.integers(1, 4, (2, 2))
        arms = [build_beta_bernoulli(int(a), int(b), T) for a, b in ab]
        K = int(rng.integers(1, 3))
        base = solve_base(arms, K, T, EPS).dual_bound
        opt = exact_joint_opt(arms, K, T)
        note("base", base, opt)
        note("adversarial", base, opt)

        pts = rng.random((2, 2))
        D = unit_square(pts)
        L = float(rng.choice([0.0, D[0, 1] / 2, D[0, 1] + 1]))
        sw = solve_switching(arms, MetricSpec(D, 0, L), T, EPS).dual_bound
        note("switching", sw, exact_switching_opt(arms, D, 0, L, T))

        delta = int(rng.integers(1, 3))
        darms = [build_beta_bernoulli(int(a), int(b), T, delay=delta) for a, b in ab]
        note("delayed", solve_delayed(darms, K, T, EPS).dual_bound, exact_delayed_opt(darms, K, T))

        vals = (0.0, float(rng.choice([1.0, 2.0])))
        marms = [build_beta_bernoulli(int(a), int(b), T, values=vals) for a, b in ab]
        mopt = exact_maxmab_opt(marms, K, T)
        note("maxmab", solve_maxmab(marms, K, T, EPS).dual_bound, mopt)
        note("maxmab-truncated", solve_maxmab_truncated(marms, K, T, EPS, alpha=1.0, beta=1.0).dual_bound, mopt)

        note("budgeted", balance_lambda(arms, T, EPS).dual_bound, exact_budgeted_opt(arms, T))
    ok = all(v >= -1e-9 for v in worst.values())
    record_acceptance(3, ok, "min dual-opt slack: " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))
    assert ok


def test_adversarial_order():
    factor = 4 * (1 + EPS)
    ok = True
    worst_ratio = 0.0
    for spec in base_instances():
        sol = solve_base(spec.build_arms(), spec.K, spec.T, EPS)
        rng = np.random.default_rng(400)
        worst = None
        for _ in range(20):
            order = tuple(int(i) for i in rng.permutation(spec.n))
            r = CombinedRunner(spec.build_arms(), sol.policies, ScheduleConfig(1, spec.T, order, 0.5))
            est = estimate_reward(r, 20_000, seed=2)
            if worst is None or est.mean < worst.mean:
                worst = est
        ok &= meets(worst, sol.dual_bound, factor)
        worst_ratio = max(worst_ratio, sol.dual_bound / worst.mean)
    record_acceptance(4, ok, f"adversarial: worst dual/mean over 20 orders {worst_ratio:.3f} vs limit {factor:.2f}")
    assert ok


class _CostChecked:
    """Batch wrapper that records the largest distance travelled."""

    def __init__(self, runner):
        self.runner = runner
        self.n_arms = runner.n_arms
        self.plays_per_arm = runner.plays_per_arm
        self.max_cost = 0.0
        self.episodes = 0

    def __call__(self, u):
        rewards, costs = self.runner.run_batch(u)
        self.max_cost = max(self.max_cost, float(costs.max()))
        self.episodes += len(costs)
        return rewards


def test_switching():
    factor = 4 * (1 + EPS)
    ok = True
    worst_ratio = 0.0
    runs = 0
    for k in range(5):
        rng = np.random.default_rng(500 + k)
        pts = rng.random((6, 2))
        D = unit_square(pts)
        arm_specs = beta_arm_specs(rng, 6)
        arms = [build_beta_bernoulli(a.prior.alpha1, a.prior.alpha0, 10) for a in arm_specs]
        off = D[np.triu_indices(6, 1)]
        for L in (0.0, float(np.median(off)), float(off.sum())):
            metric = MetricSpec(D, 0, L)
            sol = solve_switching(arms, metric, 10, EPS)
            wrapped = _CostChecked(switching_runner(arms, metric, 10, sol))
            est = estimate_reward(wrapped, 20_000, seed=3)
            ok &= meets(est, sol.dual_bound, factor) and wrapped.max_cost <= L + 1e-9
            worst_ratio = max(worst_ratio, sol.dual_bound / est.mean)
            runs += 1
    record_acceptance(5, ok, f"switching: {runs} runs, worst dual/mean {worst_ratio:.3f} vs limit {factor:.2f}; "
                             "distance within L on every episode")
    assert ok


def test_delayed_small_regime():
    y = 1 / 10
    factor = 2 * (1 + EPS) + 32 * (y + y * y)
    rng = np.random.default_rng(600)
    spec = InstanceSpec("delayed", 100, beta_arm_specs(rng, 5, delay=1), epsilon=EPS, regime="small")
    solved = solve_instance(spec)
    est = solved.estimate(20_000, seed=4)
    ok_ratio = meets(est, solved.dual_bound, factor)

    # zero delay: same rewards as the base executor on the same seeds
    identical = True
    for base_spec in base_instances():
        zero = InstanceSpec("delayed", base_spec.T, base_spec.arms, epsilon=EPS)
        a = simulate_rewards(solve_instance(zero).runner, 5_000, seed=1)
        b = simulate_rewards(solve_instance(base_spec).runner, 5_000, seed=1)
        identical &= np.array_equal(a, b)
    ok = ok_ratio and identical and solved.summary["regime"] == "small"
    record_acceptance(6, ok, f"delayed small: dual/mean {solved.dual_bound / est.mean:.3f} vs limit {factor:.2f}; "
                             f"zero-delay runs bit-identical: {identical}")
    assert ok


def test_delayed_large_regime():
    factor = 119 * (1 + EPS)
    delta, T = 2, 21 * 5 * 2
    rng = np.random.default_rng(700)
    arms = [build_beta_bernoulli(1, int(j), T, delay=delta) for j in rng.integers(1, 6, 5)]
    sol = solve_delayed(arms, 1, T, EPS, regime="large")
    runner = delayed_runner(arms, sol, 1, T)
    assert all(p.mode == COMPACTED for p in sol.policies)
    bound_ok = True
    u = draw_uniforms(np.random.default_rng(7), 2_000, len(arms), runner.plays_per_arm)
    for e in range(len(u)):
        info = runner.episode(u.row(e)).info
        for real, logical in zip(info["real_blocks"], info["logical_blocks"]):
            bound_ok &= real <= logical // 7 + 1 + math.log2(delta)
    est = estimate_reward(runner, 10_000, seed=5)
    ok = meets(est, sol.dual_bound, factor) and bound_ok and sol.regime.name == "large"
    record_acceptance(7, ok, f"delayed large (T={T}): dual/mean {sol.dual_bound / est.mean:.3f} vs limit "
                             f"{factor:.1f}; block-count bound on every episode: {bound_ok}")
    assert ok


def maxmab_arms(seed):
    rng = np.random.default_rng(seed)
    return [build_beta_bernoulli(1, int(j), 10) for j in rng.integers(1, 6, 4)]


def test_maxmab_one_at_a_time():
    factor = 4 * (1 + EPS)
    arms = maxmab_arms(800)
    sol = solve_maxmab(arms, 2, 10, EPS)
    runner = SequentialRunner(arms, sol.policies, 2, 10)
    est = estimate_reward(runner, 20_000, seed=6)
    slots_ok = True
    u = draw_uniforms(np.random.default_rng(8), 2_000, len(arms), 10)
    for e in range(len(u)):
        res = runner.episode(u.row(e))
        seen: dict[int, list[float]] = {}
        for t, _, q, _ in res.trace:
            seen.setdefault(t, []).append(q)
        pays = res.info["slot_rewards"]
        slots_ok &= all(pays[t] == max(qs) for t, qs in seen.items())
        slots_ok &= all(sum(1 for r in res.trace if r[0] == t and r[3]) <= 1 for t in seen)
    ok = meets(est, sol.dual_bound, factor) and slots_ok
    record_acceptance(8, ok, f"maxmab sequential: dual/mean {sol.dual_bound / est.mean:.3f} vs limit {factor:.2f}; "
                             f"slot reward is the observed max: {slots_ok}")
    assert ok


def test_maxmab_throttled():
    arms = maxmab_arms(800)
    sol = solve_maxmab_truncated(arms, 2, 10, EPS)
    runner = ThrottledRunner(arms, sol.policies, 2, 10, sol.alpha)
    est = estimate_reward(runner, 20_000, seed=7)
    kinds_ok = True
    counts = {FULL: 0, STALL: 0, THROTTLE: 0}
    u = draw_uniforms(np.random.default_rng(9), 2_000, len(arms), 10)
    for e in range(len(u)):
        for kind, mass in runner.episode(u.row(e)).info["steps"]:
            kinds_ok &= kind in counts
            counts[kind] += 1
            if kind == FULL:
                kinds_ok &= mass <= 2 / 3 + 1e-12
            elif kind == THROTTLE:
                kinds_ok &= 1 / 3 <= mass <= 2 / 3 + 1e-12
            else:
                kinds_ok &= mass >= 1 / 3
    ok = meets(est, sol.dual_bound, 210) and kinds_ok
    record_acceptance(9, ok, f"maxmab throttled: dual/mean {sol.dual_bound / est.mean:.3f} vs limit 210; "
                             f"steps full/stall/throttle {counts[FULL]}/{counts[STALL]}/{counts[THROTTLE]}")
    assert ok


def test_only_max_costs():
    worst = math.inf
    cases = 0
    for T in (1, 2, 3):
        for a, b in itertools.product((1, 2, 3), repeat=2):
            m = build_beta_bernoulli(a, b, T, values=(1.0, 2.0))
            for B in (1.0, 2.0, 3.0, 4.0):
                for lam1 in (0.0, 0.5, 1.0, 1.5, 2.5):
                    best = p_feasible_opt(m, B, lam1)
                    c1, c2 = only_max_reduction(m, B, lam1)
                    cases += 1
                    if best > 0:
                        worst = min(worst, max(c1.value, c2.value) / best)
                    elif max(c1.value, c2.value) < 0:
                        worst = -math.inf
    ok = worst >= 0.25 - 1e-12
    record_acceptance(10, ok, f"only-max: {cases} cases, worst reduction/best {worst:.3f} (need >= 0.25)")
    assert ok


def test_budgeted():
    factor = 3 * (1 + EPS)
    rng = np.random.default_rng(1100)
    arms = [build_beta_bernoulli(1, int(j), 10) for j in rng.integers(1, 6, 5)]
    sol = balance_lambda(arms, 10, EPS)
    identity = max(abs(policy_stats(m, p).R_final - sol.lam_star * (policy_stats(m, p).I + policy_stats(m, p).T_plays / 10) - q)
                   for m, p, q in zip(arms, sol.policies, sol.Q))
    worst = None
    for _ in range(20):
        order = [int(i) for i in rng.permutation(5)]
        est = estimate_reward(BudgetedRunner(arms, sol.policies, 10, order), 20_000, seed=8)
        if worst is None or est.mean < worst.mean:
            worst = est
    ok = meets(worst, sol.dual_bound, factor) and identity <= 1e-9
    record_acceptance(11, ok, f"budgeted: worst dual/mean over 20 orders {sol.dual_bound / worst.mean:.3f} vs "
                              f"limit {factor:.2f}; amortized identity error {identity:.1e}")
    assert ok


def _random_model(rng):
    kind = int(rng.integers(0, 3))
    T = int(rng.integers(1, 7))
    if kind == 0:
        a, b = (int(x) for x in rng.integers(1, 6, 2))
        return build_beta_bernoulli(a, b, T)
    if kind == 1:
        w = float(rng.random())
        p, q = (float(x) for x in rng.random(2))
        return build_mixture_bernoulli([(w, p), (1 - w, q)], T)
    # two-level explicit tree whose means are consistent by construction
    p = float(rng.uniform(0.05, 0.95))
    hi = float(rng.uniform(p, 1.0))
    lo = (p - p * hi) / (1 - p)
    return build_explicit({
        "root": {"reward": p, "transitions": [[1.0, p, "hi"], [0.0, 1 - p, "lo"]]},
        "hi": {"reward": hi, "transitions": [[1.0, hi, "hi_end"], [0.0, 1 - hi, "hi_end"]]},
        "lo": {"reward": lo, "transitions": [[1.0, lo, "lo_end"], [0.0, 1 - lo, "lo_end"]]},
        "hi_end": {"reward": hi, "transitions": []},
        "lo_end": {"reward": lo, "transitions": []},
    }, T)


def _brute_orienteering(D, w, L):
    n = len(w)
    best = w[0]
    for r in range(1, n):
        for perm in itertools.permutations(range(1, n), r):
            path = (0, *perm)
            if sum(D[a, b] for a, b in zip(path, path[1:])) <= L + 1e-9:
                best = max(best, sum(w[i] for i in path))
    return best


def test_property_suites():
    rng = np.random.default_rng(1200)
    failures = []

    models = [_random_model(rng) for _ in range(100)]
    for m in models:
        if not (m.validation.passed and m.validation.max_deviation <= 1e-9):
            failures.append("martingale")
    skewed = build_explicit({
        "root": {"reward": 0.5, "transitions": [[1.0, 0.5, "hi"], [0.0, 0.5, "lo"]]},
        "hi": {"reward": 0.9, "transitions": []},
        "lo": {"reward": 0.4, "transitions": []},
    }, 1)
    if skewed.validation.passed:
        failures.append("inconsistent model not flagged")

    for m in models[:50]:
        grid = np.linspace(0.0, 1.2, 25)
        Qs, plays, R = [], [], []
        for lam in grid:
            res = gain_dp(m, float(lam))
            st = policy_stats(m, res.policy)
            if abs(st.R - lam * st.T_plays - res.Q) > 1e-9:
                failures.append("forward/backward")
            Qs.append(res.Q)
            plays.append(st.T_plays)
            R.append(st.R)
        for seq in (Qs, plays, R):
            if any(b > a + 1e-9 for a, b in zip(seq, seq[1:])):
                failures.append("monotonicity")

    for k in range(50):
        n = int(rng.integers(3, 9))
        D = unit_square(rng.random((n, 2)))
        w = rng.random(n)
        L = float(rng.choice([0.3, 0.8, 1.5]))
        if abs(orienteering_exact(D, w, 0, L)[1] - _brute_orienteering(D, w, L)) > 1e-9:
            failures.append("orienteering")

    spec = base_instances()[0]
    runner = solve_instance(spec).runner
    ref = simulate_rewards(runner, 30_000, seed=12, threads=1)
    for threads in (4, 16):
        if not np.array_equal(simulate_rewards(runner, 30_000, seed=12, threads=threads), ref):
            failures.append(f"threads {threads}")

    ok = not failures
    record_acceptance(12, ok, f"properties: {len(models)} models, 50 lambda grids, 50 metrics, threads 1/4/16"
                              + ("" if ok else f"; failed: {sorted(set(failures))}"))
    assert ok
