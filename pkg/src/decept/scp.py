"""Sequential convexification driver and its audit-trail report.

Each outer iteration normalizes the incumbent allocation back onto the budget
simplex, rebuilds a consistent expansion point, condenses the signomial
program into a GP around it, solves that GP inside a trust region from a
slightly inflated (strictly interior) start, and adopts the solved utilities.
The reach-cap relaxation weight delta doubles whenever the fresh iterate still
violates the cap, so penalty pressure ratchets up only while needed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .adversary import Allocation, AdversaryProfile
from .errors import InfeasibleRegionError, ProgramError
from .evaluation import expected_cost, reach_probability
from .expressions import Assignment
from .mdp import MdpModel, Policy
from .program import (
    DEFAULT_REACH_FLOOR,
    ExpansionPoint,
    VAR_TAU,
    build_sp,
    condense,
    expansion_point,
    sp_residuals,
    trust_region,
    var_pi,
    var_q,
    var_u,
)
from .solver import GpSolution, SolveStatus, SolverSettings, solve

REPORT_SCHEMA = "decept-report/1"
REACH_SLACK = 1e-6  # tolerance used when declaring the reach cap satisfied
MAX_ETA_RETRIES = 4


@dataclass(frozen=True)
class ScpSettings:
    epsilon: float = 1e-4            # stop when |Q_k - Q_{k-1}| falls below this
    delta0: float = 1.0              # initial reach-penalty weight
    mu_delta: float = 2.0            # penalty growth factor while the cap is violated
    delta_max: float = 1e8
    eta: float = 1.5                 # trust-region ratio
    max_outer_iterations: int = 100
    reach_floor: float = DEFAULT_REACH_FLOOR
    feasibility_margin: float = 1e-3  # inflation that makes GP starts strictly interior
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass(frozen=True)
class IterationRecord:
    index: int
    q: float                 # evaluator cost of the adopted (normalized) iterate
    q_gp: float              # nu-weighted Q_0 variables straight from the GP
    gp_objective: float
    tau: float
    delta: float
    eta: float
    reach: float             # exact evaluator reach of the adopted iterate
    max_step_ratio: float
    gp_status: str
    gp_vs_eval: float        # relative gap between GP cost variables and the evaluator
    wall_time: float


@dataclass(eq=False)
class SolveReport:
    """Everything the driver learned, plus the final iterate."""

    horizon: int
    budget: float
    lam: float
    settings: ScpSettings
    initial_q: float
    initial_reach: float
    iterations: List[IterationRecord]
    final_allocation: Allocation
    final_policy: Policy
    final_q: float
    final_reach: float
    final_tau: float
    converged: bool
    stop_reason: str
    cost_tightness: float    # worst relative slack on cost recursion rows at the last GP point
    reach_tightness: float   # same for reach recursion rows (informational)
    wall_time: float

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)


def initial_point(
    model: MdpModel,
    profile: AdversaryProfile,
    budget: float,
    horizon: int,
    lam: float,
    reach_floor: float = DEFAULT_REACH_FLOOR,
) -> Assignment:
    """Consistent assignment for the uniform allocation U(s) = D / |S|."""
    allocation = Allocation(np.full(model.n_states, budget / model.n_states), budget)
    return expansion_point(model, profile, allocation, horizon, lam, reach_floor).assignment


def normalize_allocation(utilities: np.ndarray, budget: float) -> Allocation:
    """Scale positive utilities back onto the budget simplex."""
    u = np.asarray(utilities, dtype=float)
    total = float(u.sum())
    if not math.isfinite(total) or total <= 0:
        raise ProgramError(f"cannot normalize utilities with sum {total!r}")
    return Allocation(u * (budget / total), budget)


def interior_start(point: ExpansionPoint, horizon: int, lam: float, margin: float) -> Assignment:
    """Inflate a consistent boundary point into the strict interior of the GP.

    Q_t and P_t grow by (1+margin)^(H-t) — the exponent vanishes at t = H, so
    the terminal equality Q_H = R stays exact — and tau is pushed above the
    inflated reach levels.  Every relaxed inequality then holds strictly while
    every monomial equality still holds exactly.
    """
    if margin <= 0:
        return point.assignment
    growth = (1.0 + margin) ** np.arange(horizon, -1, -1)  # growth[t] for t = 0..H
    updates: Dict[str, float] = {}
    for name, value in point.assignment.values.items():
        if name.startswith("Q_") or name.startswith("P_"):
            t = int(name.split("_")[1])
            updates[name] = value * growth[t]
    # Bound levels at t = H are constants (no P variables there), so only
    # the earlier stages inflate.
    inflated_levels = point.bound_levels.copy()
    inflated_levels[:-1] *= growth[:-1]
    tau = max(1.0, float(inflated_levels.max()) / lam) * (1.0 + margin)
    updates[VAR_TAU] = tau
    return point.assignment.replaced(updates)


def _solution_cost_gap(
    model: MdpModel,
    profile: AdversaryProfile,
    solution: GpSolution,
    horizon: int,
) -> Tuple[float, float]:
    """Compare the GP's Q_0 variables against the evaluator at the GP's own point."""
    assert solution.assignment is not None
    raw_u = np.array([solution.assignment[var_u(s)] for s in range(model.n_states)])
    rows: Dict[int, Dict[int, float]] = {}
    for s, acts in model.action_table().items():
        probs = {a: solution.assignment[var_pi(s, a)] for a in acts}
        total = sum(probs.values())
        rows[s] = {a: p / total for a, p in probs.items()}
    policy = Policy(rows)
    rewards = profile.reward_coefficients * raw_u**profile.reward_exponent
    q_eval = expected_cost(model, policy, rewards, horizon).total
    q_gp = float(
        sum(
            model.initial[s] * solution.assignment[var_q(0, s)]
            for s in range(model.n_states)
            if model.initial[s] > 0
        )
    )
    gap = abs(q_gp - q_eval) / max(abs(q_eval), 1e-300)
    return q_gp, gap


def run(
    model: MdpModel,
    profile: AdversaryProfile,
    horizon: int,
    budget: float,
    lam: float,
    settings: Optional[ScpSettings] = None,
    on_iteration: Optional[Callable[[IterationRecord], None]] = None,
) -> SolveReport:
    """Run the full sequential convexification loop from the uniform allocation.

    ``on_iteration`` is invoked with each finished IterationRecord, letting
    callers stream progress on long solves without touching the report.
    """
    settings = settings or ScpSettings()
    t_start = time.perf_counter()
    allocation = normalize_allocation(np.full(model.n_states, budget / model.n_states), budget)
    point = expansion_point(model, profile, allocation, horizon, lam, settings.reach_floor)
    q_prev = point.cost.total
    reach_prev = reach_probability(model, point.policy, horizon).total
    initial_q, initial_reach = q_prev, reach_prev

    delta = settings.delta0
    records: List[IterationRecord] = []
    stop_reason = "iteration limit reached"
    converged_by_eps = False
    last_solution: Optional[GpSolution] = None
    last_sp = None

    for k in range(1, settings.max_outer_iterations + 1):
        it_start = time.perf_counter()
        sp = build_sp(model, profile, horizon, budget, lam, delta, settings.reach_floor)
        base_gp = condense(sp, point.assignment)
        start = interior_start(point, horizon, lam, settings.feasibility_margin)

        eta = settings.eta
        solution = None
        for _ in range(MAX_ETA_RETRIES + 1):
            gp = trust_region(base_gp, point.assignment, eta)
            solution = solve(gp, start, settings.solver)
            if solution.status is SolveStatus.OPTIMAL:
                break
            # A tighter box both restores an interior (Infeasible) and tames
            # the subproblem's conditioning (MaxIterations), so shrink for any
            # failed solve and try again.
            eta = 1.0 + (eta - 1.0) / 2.0
        assert solution is not None

        if solution.status is not SolveStatus.OPTIMAL or solution.assignment is None:
            records.append(
                IterationRecord(
                    index=k,
                    q=q_prev,
                    q_gp=float("nan"),
                    gp_objective=solution.objective if solution.objective is not None else float("nan"),
                    tau=float("nan"),
                    delta=delta,
                    eta=eta,
                    reach=reach_prev,
                    max_step_ratio=1.0,
                    gp_status=solution.status.value,
                    gp_vs_eval=float("nan"),
                    wall_time=time.perf_counter() - it_start,
                )
            )
            stop_reason = f"GP solve returned {solution.status.value}: {solution.message or 'no detail'}"
            last_solution, last_sp = solution, sp
            if on_iteration is not None:
                on_iteration(records[-1])
            break

        last_solution, last_sp = solution, sp
        new_raw = np.array([solution.assignment[var_u(s)] for s in range(model.n_states)])
        ratios = [
            max(solution.assignment[name] / point.assignment[name], point.assignment[name] / solution.assignment[name])
            for name in sp.pool.names()
        ]
        allocation = normalize_allocation(new_raw, budget)
        new_point = expansion_point(model, profile, allocation, horizon, lam, settings.reach_floor)
        q_new = new_point.cost.total
        reach_new = reach_probability(model, new_point.policy, horizon).total
        q_gp, gp_gap = _solution_cost_gap(model, profile, solution, horizon)
        records.append(
            IterationRecord(
                index=k,
                q=q_new,
                q_gp=q_gp,
                gp_objective=float(solution.objective),
                tau=float(solution.assignment[VAR_TAU]),
                delta=delta,
                eta=eta,
                reach=reach_new,
                max_step_ratio=float(max(ratios)),
                gp_status=solution.status.value,
                gp_vs_eval=gp_gap,
                wall_time=time.perf_counter() - it_start,
            )
        )
        if on_iteration is not None:
            on_iteration(records[-1])
        if reach_new > lam:
            delta = min(delta * settings.mu_delta, settings.delta_max)
        stop = abs(q_new - q_prev) < settings.epsilon
        point, q_prev, reach_prev = new_point, q_new, reach_new
        if stop:
            converged_by_eps = True
            stop_reason = f"objective change below epsilon after {k} iterations"
            break

    reach_ok = reach_prev <= lam + REACH_SLACK
    cost_tightness = float("nan")
    reach_tightness = float("nan")
    if last_solution is not None and last_solution.assignment is not None and last_sp is not None:
        residuals = sp_residuals(last_sp, last_solution.assignment)
        cost_slacks = residuals.slack_for("cost")
        reach_slacks = residuals.slack_for("reach")
        cost_tightness = max(cost_slacks) if cost_slacks else 0.0
        reach_tightness = max(reach_slacks) if reach_slacks else 0.0

    return SolveReport(
        horizon=horizon,
        budget=float(budget),
        lam=float(lam),
        settings=settings,
        initial_q=initial_q,
        initial_reach=initial_reach,
        iterations=records,
        final_allocation=point.allocation,
        final_policy=point.policy,
        final_q=q_prev,
        final_reach=reach_prev,
        final_tau=point.tau,
        converged=converged_by_eps and reach_ok,
        stop_reason=stop_reason,
        cost_tightness=cost_tightness,
        reach_tightness=reach_tightness,
        wall_time=time.perf_counter() - t_start,
    )


def brute_force_allocation(
    model: MdpModel,
    profile: AdversaryProfile,
    horizon: int,
    budget: float,
    lam: float,
    resolution: float = 0.1,
) -> Tuple[Allocation, float]:
    """Grid search over the budget simplex for tiny models (|S| <= 3).

    Enumerates allocations with entries at multiples of resolution * budget
    (each state keeps at least one share), returns the best cap-respecting
    one, and raises InfeasibleRegionError when no grid point satisfies the cap.
    """
    n = model.n_states
    if n > 3:
        raise ProgramError(f"brute force supports at most 3 states, got {n}")
    shares = round(1.0 / resolution)
    if shares < n:
        raise ProgramError("resolution too coarse to give every state a positive share")
    best: Optional[Tuple[float, Allocation]] = None

    def candidate(counts: Tuple[int, ...]) -> None:
        nonlocal best
        u = np.array(counts, dtype=float) * (budget / shares)
        allocation = Allocation(u, budget)
        pt = expansion_point(model, profile, allocation, horizon, lam, DEFAULT_REACH_FLOOR)
        reach = reach_probability(model, pt.policy, horizon).total
        if reach > lam:
            return
        q = pt.cost.total
        if best is None or q < best[0]:
            best = (q, allocation)

    if n == 1:
        candidate((shares,))
    elif n == 2:
        for i in range(1, shares):
            candidate((i, shares - i))
    else:
        for i in range(1, shares - 1):
            for j in range(1, shares - i):
                candidate((i, j, shares - i - j))
    if best is None:
        raise InfeasibleRegionError("no grid allocation satisfies the reach cap")
    return best[1], best[0]


def report_to_dict(report: SolveReport) -> dict:
    """JSON-ready dict (schema decept-report/1); deliberately excludes timing."""
    solver = report.settings.solver
    return {
        "schema": REPORT_SCHEMA,
        "problem": {
            "horizon": report.horizon,
            "budget": report.budget,
            "lambda": report.lam,
        },
        "settings": {
            "epsilon": report.settings.epsilon,
            "delta0": report.settings.delta0,
            "mu_delta": report.settings.mu_delta,
            "delta_max": report.settings.delta_max,
            "eta": report.settings.eta,
            "max_outer_iterations": report.settings.max_outer_iterations,
            "reach_floor": report.settings.reach_floor,
            "feasibility_margin": report.settings.feasibility_margin,
            "solver": {
                "max_newton": solver.max_newton,
                "barrier_t0": solver.barrier_t0,
                "barrier_mu": solver.barrier_mu,
                "tol_primal": solver.tol_primal,
                "tol_equality": solver.tol_equality,
                "armijo": solver.armijo,
                "backtrack": solver.backtrack,
            },
        },
        "initial": {"q": report.initial_q, "reach": report.initial_reach},
        "iterations": [
            {
                "index": rec.index,
                "q": rec.q,
                "q_gp": rec.q_gp,
                "gp_objective": rec.gp_objective,
                "tau": rec.tau,
                "delta": rec.delta,
                "eta": rec.eta,
                "reach": rec.reach,
                "max_step_ratio": rec.max_step_ratio,
                "gp_status": rec.gp_status,
                "gp_vs_eval": rec.gp_vs_eval,
            }
            for rec in report.iterations
        ],
        "final": {
            "q": report.final_q,
            "reach": report.final_reach,
            "tau": report.final_tau,
            "converged": report.converged,
            "stop_reason": report.stop_reason,
            "iterations": report.n_iterations,
            "allocation": [float(u) for u in report.final_allocation.utilities],
            "policy": [
                {"state": s, "action": a, "prob": p}
                for s in sorted(report.final_policy.rows)
                for a, p in sorted(report.final_policy.rows[s].items())
            ],
        },
        "cross_check": {
            "budget_sum": float(report.final_allocation.utilities.sum()),
            "cost_tightness": report.cost_tightness,
            "reach_tightness": report.reach_tightness,
        },
    }


def render_report(report: SolveReport) -> str:
    """Canonical serialized report; byte-identical for identical inputs."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True, allow_nan=True) + "\n"


def save_report(report: SolveReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_report(report))
