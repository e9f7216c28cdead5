"""Print the relaxation gap of the two-type instance for small n.

The dual bound is compared with the exhaustive joint optimum; the ratio
creeps toward 2 as n grows.
"""
from weakbandit import exact_joint_opt, gen_tight_instance, solve_base

print(f"{'n':>3} {'dual':>10} {'exact opt':>10} {'gap':>7}")
for n in range(2, 7):
    spec = gen_tight_instance(n)
    arms = spec.build_arms()
    dual = solve_base(arms, 1, n, 0.01).dual_bound
    opt = exact_joint_opt(arms, 1, n)
    print(f"{n:>3} {dual:>10.5f} {opt:>10.5f} {dual / opt:>7.3f}")
