"""Library tour: solve a small base instance, simulate it, and check it against the exact optimum."""
from pathlib import Path

from weakbandit import InstanceSpec, exact_joint_opt, load_instance, solve_instance

here = Path(__file__).parent
spec = load_instance(here / "instances" / "base_beta.json")
solved = solve_instance(spec)
print("dual bound      ", round(solved.dual_bound, 4))
print("multiplier range", solved.summary["lambda_minus"], solved.summary["lambda_plus"], "mix", solved.summary["a"])
print("play order      ", solved.summary["order"])

est = solved.estimate(episodes=50_000, seed=0, threads=4)
print(f"simulated reward {est.mean:.4f} +/- {est.stderr:.4f}  (dual/mean {solved.dual_bound / est.mean:.3f})")

# a three-arm, four-step slice is small enough for the exhaustive oracle
small = InstanceSpec("base", 4, spec.arms[:3])
opt = exact_joint_opt(small.build_arms(), 1, 4)
print(f"small slice: dual {solve_instance(small).dual_bound:.4f} >= exact optimum {opt:.4f}")
