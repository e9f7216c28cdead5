"""Command-line entry point.

Exit codes: 0 success, 1 a benchmark row failed its threshold, 2 bad input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .instance import SCHEMA_VERSION, InstanceSpec, SpecError, gen_tight_instance, load_instance
from .oracles import OracleSizeError, exact_joint_opt
from .pipeline import SolvedInstance, solution_policies, solve_instance
from .sim import simulate_rewards, summarize

logger = logging.getLogger("weakbandit")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
BENCH_COLUMNS = ["name", "variant", "dual_bound", "sim_mean", "sim_stderr", "ratio", "threshold",
                 "status", "message"]


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _positive_int(text: str) -> int:
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1 or v != float(text):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _epsilon(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 1)")
    return v


def _load(path: str) -> InstanceSpec:
    try:
        return load_instance(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except SpecError as exc:
        raise InputError(f"{path}: {exc}") from None


def _solve(spec: InstanceSpec, epsilon: float | None, regime: str | None) -> SolvedInstance:
    try:
        return solve_instance(spec, epsilon, regime)
    except SpecError as exc:
        raise InputError(str(exc)) from None


def _emit(doc: dict[str, Any], out: str | None) -> None:
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _clean(x: Any) -> Any:
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def solution_document(spec: InstanceSpec, solved: SolvedInstance, epsilon: float, regime: str | None,
                      with_policies: bool = True) -> dict[str, Any]:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "solution",
        "instance_hash": spec.hash(),
        "variant": spec.variant,
        "epsilon": epsilon,
        "regime": regime,
        "dual_bound": solved.dual_bound,
        "solver": solved.summary,
    }
    if with_policies:
        doc["policies"] = solution_policies(solved)
    return _clean(doc)


def result_record(spec: InstanceSpec, solved: SolvedInstance, est, wall_time: float | None) -> dict[str, Any]:
    rec = {
        "schema_version": SCHEMA_VERSION,
        "kind": "result",
        "instance_hash": spec.hash(),
        "variant": spec.variant,
        "dual_bound": solved.dual_bound,
        "sim_mean": est.mean,
        "sim_stderr": est.stderr,
        "ratio": solved.dual_bound / est.mean if est.mean > 0 else None,
        "episodes": est.episodes,
        "seed": est.seed,
        "solver": solved.summary,
    }
    if wall_time is not None:
        rec["wall_time"] = wall_time
    return _clean(rec)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args: argparse.Namespace) -> int:
    spec = _load(args.instance)
    eps = spec.epsilon if args.epsilon is None else args.epsilon
    solved = _solve(spec, eps, args.regime)
    _emit(solution_document(spec, solved, eps, args.regime, not args.no_policies), args.output)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = _load(args.instance)
    try:
        sol = json.loads(Path(args.solution).read_text())
    except FileNotFoundError:
        raise InputError(f"{args.solution}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.solution}: line {exc.lineno}: malformed JSON: {exc.msg}") from None
    if not isinstance(sol, dict) or sol.get("kind") != "solution":
        raise InputError(f"{args.solution}: not a solution file")
    if sol.get("instance_hash") != spec.hash():
        raise InputError(f"{args.solution}: instance hash does not match {args.instance}; re-run solve")
    eps = sol.get("epsilon", spec.epsilon)
    t0 = time.perf_counter()
    solved = _solve(spec, eps, sol.get("regime"))
    stored = sol.get("dual_bound")
    if not isinstance(stored, (int, float)) or abs(stored - solved.dual_bound) > 1e-9 * max(1.0, abs(stored)):
        raise InputError(f"{args.solution}: stored dual bound {stored} does not match the re-solved "
                         f"value {solved.dual_bound}")
    x = simulate_rewards(solved.runner, args.episodes, args.seed, args.threads)
    est = summarize(x, args.seed)
    wall = time.perf_counter() - t0 if args.timing else None
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "reward"])
            for k, r in enumerate(x.tolist()):
                w.writerow([k, repr(r)])
    _emit(result_record(spec, solved, est, wall), args.output)
    return EXIT_OK


def cmd_bound(args: argparse.Namespace) -> int:
    spec = _load(args.instance)
    eps = spec.epsilon if args.epsilon is None else args.epsilon
    solved = _solve(spec, eps, args.regime)
    doc: dict[str, Any] = {"instance_hash": spec.hash(), "variant": spec.variant, "dual_bound": solved.dual_bound}
    if args.exact:
        if spec.variant not in ("base", "adversarial"):
            raise InputError("--exact is available for the base and adversarial variants")
        try:
            opt = exact_joint_opt(solved.arms, spec.K, spec.T)
        except OracleSizeError as exc:
            raise InputError(str(exc)) from None
        doc["exact_opt"] = opt
        doc["gap"] = solved.dual_bound / opt if opt > 0 else None
    _emit(_clean(doc), args.output)
    return EXIT_OK


def _bench_row(entry: Any, base: Path, args: argparse.Namespace) -> dict[str, Any]:
    row: dict[str, Any] = {c: "" for c in BENCH_COLUMNS}
    if not isinstance(entry, dict):
        row.update(status="error", message="suite entry must be an object")
        return row
    row["name"] = entry.get("name", entry.get("path", "?"))
    try:
        threshold = float(entry["threshold"])
        if not threshold >= 1:
            raise ValueError
    except (KeyError, TypeError, ValueError):
        row.update(status="error", message="missing or invalid threshold (need a number >= 1)")
        return row
    row["threshold"] = threshold
    try:
        if "instance" in entry:
            spec = InstanceSpec.from_dict(entry["instance"])
        elif "path" in entry:
            p = Path(entry["path"])
            spec = load_instance(p if p.is_absolute() else base / p)
        else:
            raise SpecError("path", "entry needs a path or an inline instance")
        eps = entry.get("epsilon", spec.epsilon if args.epsilon is None else args.epsilon)
        solved = solve_instance(spec, eps, entry.get("regime"))
        episodes = int(entry.get("episodes", args.episodes))
        seed = int(entry.get("seed", args.seed))
        est = summarize(simulate_rewards(solved.runner, episodes, seed, args.threads), seed)
    except FileNotFoundError as exc:
        row.update(status="error", message=f"missing instance file {exc.filename}")
        return row
    except (SpecError, ValueError) as exc:
        row.update(status="error", message=str(exc))
        return row
    slack = float(entry.get("stderr_slack", 3.0))
    ok = est.mean >= solved.dual_bound / threshold - slack * est.stderr
    row.update(variant=spec.variant, dual_bound=solved.dual_bound, sim_mean=est.mean, sim_stderr=est.stderr,
               ratio=solved.dual_bound / est.mean if est.mean > 0 else "",
               status="pass" if ok else "fail",
               message="" if ok else f"mean below dual_bound/{threshold:g} - {slack:g}*stderr")
    return row


def cmd_bench(args: argparse.Namespace) -> int:
    path = Path(args.suite)
    try:
        suite = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}: malformed JSON: {exc.msg}") from None
    entries = suite.get("instances") if isinstance(suite, dict) else suite
    if not isinstance(entries, list):
        raise InputError(f"{path}: expected a list of instances (or an object with an 'instances' list)")
    rows = [_bench_row(e, path.parent, args) for e in entries]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.output and args.output != "-":
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK if all(r["status"] == "pass" for r in rows) else EXIT_FAIL


def cmd_tight(args: argparse.Namespace) -> int:
    spec = gen_tight_instance(args.n)
    text = spec.to_json()
    if args.output and args.output != "-":
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weakbandit", description="Solve and simulate Bayesian bandit instances.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, solve: bool = True, sim: bool = False) -> None:
        p.add_argument("-o", "--output", help="output file (default stdout)")
        if solve:
            p.add_argument("--epsilon", type=_epsilon, default=None,
                           help="search accuracy (default: the instance's, 0.05 if unset)")
            p.add_argument("--regime", choices=["auto", "small", "large"], default=None,
                           help="delay regime override")
        if sim:
            p.add_argument("--episodes", type=_positive_int, default=100_000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--threads", type=_positive_int, default=1)

    p = sub.add_parser("solve", help="solve an instance and write the solution JSON")
    p.add_argument("instance")
    p.add_argument("--no-policies", action="store_true", help="omit per-state policy tables")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate a solved instance")
    p.add_argument("instance")
    p.add_argument("solution")
    p.add_argument("--csv", help="write per-episode rewards to this CSV file")
    p.add_argument("--timing", action="store_true", help="add wall_time to the record")
    common(p, solve=False, sim=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bound", help="print the dual bound (and optionally the exact optimum)")
    p.add_argument("instance")
    p.add_argument("--exact", action="store_true", help="also run the exhaustive oracle (tiny instances)")
    common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("bench", help="run a suite of instances against ratio thresholds")
    p.add_argument("suite")
    common(p, sim=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tight", help="write the two-type instance with a near-2 relaxation gap")
    p.add_argument("n", type=_positive_int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tight)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "tight" and args.n < 2:
        parser.error("n must be at least 2")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"weakbandit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
