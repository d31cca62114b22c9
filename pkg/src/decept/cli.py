"""Command-line interface: solve / evaluate / simulate / validate.

Exit codes: 0 on success (for solve: converged with the reach cap met),
1 when a solve finishes without meeting that bar, 2 on usage, schema, or
validation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .adversary import Allocation, derive_policy, state_rewards
from .errors import DeceptError, InstanceFormatError
from .evaluation import expected_cost, monte_carlo, reach_probability
from .instance import Instance, build_model, build_profile, build_settings, load_bundled, load_instance
from .mdp import validate as validate_model
from .scp import run as scp_run, save_report

DEFAULT_SEED = 0
DEFAULT_PATHS = 100_000
ALLOCATION_HEADER = ["state", "row", "col", "crime", "utility", "reward"]


def _load(args) -> Instance:
    instance = load_bundled() if args.instance is None else load_instance(args.instance)
    if args.horizon is not None:
        instance = replace(instance, horizon=args.horizon)
    if args.budget is not None:
        instance = replace(instance, budget=args.budget)
    if getattr(args, "lam", None) is not None:
        instance = replace(instance, lam=args.lam)
    return instance


def write_allocation_csv(path, instance: Instance, model, allocation: Allocation, rewards) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ALLOCATION_HEADER)
        for s in range(model.n_states):
            if model.coords is not None:
                row, col = model.coords[s]
            else:
                row, col = "", ""
            writer.writerow(
                [
                    s,
                    row,
                    col,
                    instance.crime_counts[s],
                    f"{float(allocation.utilities[s]):.12g}",
                    f"{float(rewards[s]):.12g}",
                ]
            )


def read_allocation_csv(path, budget: float) -> Allocation:
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "state" not in reader.fieldnames or "utility" not in reader.fieldnames:
                raise InstanceFormatError("allocation CSV needs 'state' and 'utility' columns", path=path)
            values: Dict[int, float] = {}
            for i, rec in enumerate(reader):
                try:
                    s = int(rec["state"])
                    u = float(rec["utility"])
                except (TypeError, ValueError):
                    raise InstanceFormatError(f"row {i + 2}: bad state/utility", path=path) from None
                if s in values:
                    raise InstanceFormatError(f"row {i + 2}: duplicate state {s}", path=path)
                values[s] = u
    except FileNotFoundError:
        raise InstanceFormatError("file not found", path=path) from None
    if not values or sorted(values) != list(range(len(values))):
        raise InstanceFormatError("allocation CSV must cover states 0..n-1 exactly once", path=path)
    utilities = np.array([values[s] for s in range(len(values))])
    return Allocation(utilities, budget)


def write_heatmap_csv(path, model, allocation: Allocation) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "log10_utility"])
        for s in range(model.n_states):
            row, col = model.coords[s]
            writer.writerow([row, col, f"{math.log10(float(allocation.utilities[s])):.12g}"])


def render_heatmap_svg(path, model, allocation: Allocation) -> bool:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    rows, cols = model.grid_shape
    grid = np.log10(allocation.utilities.reshape(rows, cols))
    fig, ax = plt.subplots(figsize=(1.2 * cols, 1.0 * rows))
    image = ax.imshow(grid, origin="lower", cmap="viridis")
    for s in sorted(model.sensitive):
        r, c = model.coords[s]
        ax.plot(c, r, marker="*", markersize=14, color="red")
    fig.colorbar(image, ax=ax, label="log10 utility")
    ax.set_xlabel("col")
    ax.set_ylabel("row")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return True


def cmd_solve(args) -> int:
    instance = _load(args)
    model = build_model(instance)
    profile = build_profile(instance)
    settings = build_settings(instance)
    if args.epsilon is not None:
        settings = replace(settings, epsilon=args.epsilon)
    if args.delta0 is not None:
        settings = replace(settings, delta0=args.delta0)
    if args.eta is not None:
        settings = replace(settings, eta=args.eta)

    report = scp_run(model, profile, instance.horizon, instance.budget, instance.lam, settings)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    save_report(report, report_path)
    rewards = state_rewards(report.final_allocation, profile)
    allocation_path = out_dir / "allocation.csv"
    write_allocation_csv(allocation_path, instance, model, report.final_allocation, rewards)
    artifacts = [str(report_path), str(allocation_path)]
    if model.grid_shape is not None:
        heatmap_path = out_dir / "heatmap.csv"
        write_heatmap_csv(heatmap_path, model, report.final_allocation)
        artifacts.append(str(heatmap_path))
        if args.render:
            svg_path = out_dir / "heatmap.svg"
            if render_heatmap_svg(svg_path, model, report.final_allocation):
                artifacts.append(str(svg_path))
            else:
                print("warning: matplotlib unavailable, skipping heatmap.svg", file=sys.stderr)

    print(f"instance      {instance.name}")
    print(f"iterations    {report.n_iterations} ({report.stop_reason})")
    print(f"q             {report.initial_q:.6f} -> {report.final_q:.6f}")
    print(f"reach         {report.initial_reach:.6f} -> {report.final_reach:.6f} (cap {instance.lam})")
    print(f"tau           {report.final_tau:.6f}")
    print(f"converged     {str(report.converged).lower()}")
    print(f"wall time     {report.wall_time:.2f}s")
    for artifact in artifacts:
        print(f"wrote         {artifact}")
    return 0 if report.converged else 1


def cmd_evaluate(args) -> int:
    instance = _load(args)
    model = build_model(instance)
    profile = build_profile(instance)
    allocation = read_allocation_csv(args.allocation, instance.budget)
    if allocation.utilities.shape[0] != model.n_states:
        raise InstanceFormatError(
            f"allocation covers {allocation.utilities.shape[0]} states, instance has {model.n_states}",
            path=args.allocation,
        )
    policy = derive_policy(model, allocation, profile)
    rewards = state_rewards(allocation, profile)
    cost = expected_cost(model, policy, rewards, instance.horizon)
    reach = reach_probability(model, policy, instance.horizon)
    doc = {
        "instance": instance.name,
        "horizon": instance.horizon,
        "budget": instance.budget,
        "lambda": instance.lam,
        "q": cost.total,
        "reach": reach.total,
        "reach_within_cap": bool(reach.total <= instance.lam),
        "per_state": [
            {
                "state": s,
                "utility": float(allocation.utilities[s]),
                "reward": float(rewards[s]),
                "q0": float(cost.values[0, s]),
                "reach0": float(reach.values[0, s]),
            }
            for s in range(model.n_states)
        ],
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    instance = _load(args)
    model = build_model(instance)
    profile = build_profile(instance)
    allocation = read_allocation_csv(args.allocation, instance.budget)
    policy = derive_policy(model, allocation, profile)
    rewards = state_rewards(allocation, profile)
    start = time.perf_counter()
    estimate = monte_carlo(model, policy, rewards, instance.horizon, args.paths, args.seed)
    elapsed = time.perf_counter() - start
    cost = expected_cost(model, policy, rewards, instance.horizon)
    reach = reach_probability(model, policy, instance.horizon)
    doc = {
        "instance": instance.name,
        "horizon": instance.horizon,
        "paths": estimate.n_paths,
        "seed": estimate.seed,
        "q_estimate": estimate.q_mean,
        "q_stderr": estimate.q_stderr,
        "q_exact": cost.total,
        "q_abs_error": abs(estimate.q_mean - cost.total),
        "reach_estimate": estimate.reach_mean,
        "reach_stderr": estimate.reach_stderr,
        "reach_exact": reach.total,
        "reach_abs_error": abs(estimate.reach_mean - reach.total),
        "seconds": elapsed,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    instance = _load(args)
    model = build_model(instance)
    build_profile(instance)  # raises on bad perception parameters
    report = validate_model(model)
    doc = {
        "instance": instance.name,
        "states": model.n_states,
        "actions": list(model.actions),
        "sensitive": sorted(model.sensitive),
        "ok": report.ok,
        "findings": list(report.findings),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0 if report.ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decept",
        description="Design deceptive resource allocations against boundedly rational adversaries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, allocation_required: bool = False) -> None:
        p.add_argument("--instance", default=None, help="instance JSON path (default: bundled sf_synthetic)")
        p.add_argument("--horizon", type=int, default=None, help="override the instance horizon")
        p.add_argument("--budget", type=float, default=None, help="override the instance budget")
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="override the reach cap")
        if allocation_required:
            p.add_argument("--allocation", required=True, help="allocation CSV (state,...,utility,...)")

    p_solve = sub.add_parser("solve", help="run the sequential convexification solver")
    common(p_solve)
    p_solve.add_argument("--epsilon", type=float, default=None, help="stopping threshold on |dQ|")
    p_solve.add_argument("--delta0", type=float, default=None, help="initial reach-penalty weight")
    p_solve.add_argument("--eta", type=float, default=None, help="trust-region ratio")
    p_solve.add_argument("--out-dir", default=".", help="directory for report/allocation/heatmap artifacts")
    p_solve.add_argument("--render", action="store_true", help="also write heatmap.svg (needs matplotlib)")
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("evaluate", help="exact cost/reach of a stored allocation")
    common(p_eval, allocation_required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo cross-check of a stored allocation")
    common(p_sim, allocation_required=True)
    p_sim.add_argument("--paths", type=int, default=DEFAULT_PATHS, help=f"sample size (default {DEFAULT_PATHS})")
    p_sim.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"RNG seed (default {DEFAULT_SEED})")
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("validate", help="schema and model checks for an instance file")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DeceptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
