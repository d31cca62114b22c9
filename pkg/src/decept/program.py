"""Assembly of the allocation-design signomial program and its convexification.

The decision variables are per-state utilities U, the induced policy pi, the
horizon-indexed cost-to-go Q and reach probabilities P, linked rewards R, and
a reach-slack multiplier tau.  Cost and reach recursions enter as posynomial
<= monomial inequalities (already convex under the log transform); the policy
proportionality, budget, and reward links are posynomial equalities and are
the only parts that need local monomial condensation.

Terminal reach values for non-sensitive states are substituted as a small
positive constant (``reach_floor``), not modeled as variables, so P variables
exist only for t < H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .adversary import Allocation, AdversaryProfile, derive_policy, state_rewards, weight_probability
from .errors import ProgramError, UnboundVariableError
from .evaluation import CostTable, ReachTable, expected_cost, reach_probability
from .expressions import Assignment, Monomial, Posynomial, monomial_approximation
from .mdp import MdpModel, Policy, validate

DEFAULT_REACH_FLOOR = 1e-6


def var_u(state: int) -> str:
    return f"U_{state}"


def var_pi(state: int, action: int) -> str:
    return f"pi_{state}_a{action}"


def var_q(time: int, state: int) -> str:
    return f"Q_{time}_{state}"


def var_p(time: int, state: int) -> str:
    return f"P_{time}_{state}"


def var_r(state: int) -> str:
    return f"R_{state}"


VAR_TAU = "tau"


@dataclass(frozen=True)
class VariableInfo:
    name: str
    kind: str  # "utility" | "policy" | "cost" | "reach" | "reward" | "slack"
    state: Optional[int] = None
    action: Optional[int] = None
    time: Optional[int] = None


class VariablePool:
    """Ordered interning table mapping variable names to dense column indices."""

    def __init__(self):
        self._infos: List[VariableInfo] = []
        self._index: Dict[str, int] = {}

    def add(self, info: VariableInfo) -> int:
        if info.name in self._index:
            raise ProgramError(f"variable {info.name!r} registered twice")
        self._index[info.name] = len(self._infos)
        self._infos.append(info)
        return self._index[info.name]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnboundVariableError(name) from None

    def info(self, name: str) -> VariableInfo:
        return self._infos[self.index(name)]

    def names(self) -> Tuple[str, ...]:
        return tuple(info.name for info in self._infos)

    def __len__(self) -> int:
        return len(self._infos)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self._infos)


@dataclass(frozen=True)
class ConstraintTag:
    kind: str
    state: Optional[int] = None
    action: Optional[int] = None
    time: Optional[int] = None
    var: Optional[str] = None

    def label(self) -> str:
        parts = []
        if self.time is not None:
            parts.append(f"t={self.time}")
        if self.state is not None:
            parts.append(f"s={self.state}")
        if self.action is not None:
            parts.append(f"a={self.action}")
        if self.var is not None:
            parts.append(self.var)
        return f"{self.kind}[{', '.join(parts)}]" if parts else self.kind


@dataclass(frozen=True)
class SpInequality:
    """lhs <= rhs with posynomial lhs and monomial rhs."""

    lhs: Posynomial
    rhs: Monomial
    tag: ConstraintTag


@dataclass(frozen=True)
class SpEquality:
    """lhs = rhs with posynomial sides; generally non-convex."""

    lhs: Posynomial
    rhs: Posynomial
    tag: ConstraintTag


@dataclass(eq=False)
class SpProblem:
    pool: VariablePool
    objective: Posynomial
    inequalities: List[SpInequality]
    equalities: List[SpEquality]
    horizon: int
    budget: float
    lam: float
    delta: float
    reach_floor: float


@dataclass(eq=False)
class GpProblem:
    """Standard-form GP: minimize posynomial, posynomials <= 1, monomials = 1."""

    pool: VariablePool
    objective: Posynomial
    inequalities: List[Posynomial]
    ineq_tags: List[ConstraintTag]
    equalities: List[Monomial]
    eq_tags: List[ConstraintTag]


def build_sp(
    model: MdpModel,
    profile: AdversaryProfile,
    horizon: int,
    budget: float,
    lam: float,
    delta: float,
    reach_floor: float = DEFAULT_REACH_FLOOR,
) -> SpProblem:
    """Assemble the deceptive-allocation signomial program.

    Objective: start-weighted Q_0 plus delta * tau.  Constraints: relaxed cost
    and reach recursions, the tau-relaxed reach budget at every stage, tau >= 1,
    policy proportionality, the utility budget, reward links, and the terminal
    cost identity Q_H(s) = R(s).
    """
    report = validate(model)
    if not report.ok:
        raise ProgramError("model failed validation: " + "; ".join(report.findings))
    if profile.reward_coefficients.shape != (model.n_states,):
        raise ProgramError("profile does not cover the model's states")
    h = int(horizon)
    if h < 0:
        raise ProgramError(f"horizon must be >= 0, got {horizon!r}")
    if not (math.isfinite(budget) and budget > 0):
        raise ProgramError(f"budget must be finite and > 0, got {budget!r}")
    if not (0.0 < lam <= 1.0):
        raise ProgramError(f"reach cap must lie in (0, 1], got {lam!r}")
    if not (math.isfinite(delta) and delta > 0):
        raise ProgramError(f"penalty weight must be finite and > 0, got {delta!r}")
    if not (0.0 < reach_floor < 1.0):
        raise ProgramError(f"reach floor must lie in (0, 1), got {reach_floor!r}")

    n = model.n_states
    sens = model.sensitive
    nonsens = [s for s in range(n) if s not in sens]
    table = model.action_table()
    nu = model.initial
    alpha = profile.alpha
    e_alpha = profile.reward_exponent * alpha
    c_alpha = profile.reward_coefficients**alpha

    pool = VariablePool()
    for s in range(n):
        pool.add(VariableInfo(var_u(s), "utility", state=s))
    for s in range(n):
        for a in table[s]:
            pool.add(VariableInfo(var_pi(s, a), "policy", state=s, action=a))
    for t in range(h + 1):
        for s in range(n):
            pool.add(VariableInfo(var_q(t, s), "cost", state=s, time=t))
    for t in range(h):
        for s in nonsens:
            pool.add(VariableInfo(var_p(t, s), "reach", state=s, time=t))
    for s in range(n):
        pool.add(VariableInfo(var_r(s), "reward", state=s))
    pool.add(VariableInfo(VAR_TAU, "slack"))

    # Perceived transition weights w(T) are constants of the program.
    weighted: Dict[Tuple[int, int], Dict[int, float]] = {}
    for (s, a), row in model.transitions.items():
        weighted[(s, a)] = {s2: weight_probability(p, profile.gamma) for s2, p in row.items()}

    inequalities: List[SpInequality] = []
    equalities: List[SpEquality] = []

    # Cost recursion, relaxed downward: R(s) + E[Q_{t+1}] <= Q_t(s).
    for t in range(h):
        for s in range(n):
            terms = [Monomial(1.0, {var_r(s): 1.0})]
            for a in table[s]:
                for s2, p in model.successors(s, a).items():
                    terms.append(Monomial(p, {var_pi(s, a): 1.0, var_q(t + 1, s2): 1.0}))
            inequalities.append(
                SpInequality(
                    lhs=Posynomial(tuple(terms)),
                    rhs=Monomial(1.0, {var_q(t, s): 1.0}),
                    tag=ConstraintTag("cost", state=s, time=t),
                )
            )

    # Reach recursion, relaxed downward, with t = H leaves folded to constants.
    for t in range(h):
        for s in nonsens:
            terms = []
            for a in table[s]:
                for s2, p in model.successors(s, a).items():
                    if s2 in sens:
                        terms.append(Monomial(p, {var_pi(s, a): 1.0}))
                    elif t + 1 == h:
                        terms.append(Monomial(p * reach_floor, {var_pi(s, a): 1.0}))
                    else:
                        terms.append(Monomial(p, {var_pi(s, a): 1.0, var_p(t + 1, s2): 1.0}))
            inequalities.append(
                SpInequality(
                    lhs=Posynomial(tuple(terms)),
                    rhs=Monomial(1.0, {var_p(t, s): 1.0}),
                    tag=ConstraintTag("reach", state=s, time=t),
                )
            )

    # Stage-wise reach budget: nu-weighted reach <= lam * tau for every t.
    for t in range(h + 1):
        terms = []
        const = sum(float(nu[s]) for s in sens if nu[s] > 0)
        for s in nonsens:
            if nu[s] <= 0:
                continue
            if t == h:
                const += float(nu[s]) * reach_floor
            else:
                terms.append(Monomial(float(nu[s]), {var_p(t, s): 1.0}))
        if const > 0:
            terms.append(Monomial(const, {}))
        if not terms:
            continue
        inequalities.append(
            SpInequality(
                lhs=Posynomial(tuple(terms)),
                rhs=Monomial(lam, {VAR_TAU: 1.0}),
                tag=ConstraintTag("reach_bound", time=t),
            )
        )

    # tau >= 1.
    inequalities.append(
        SpInequality(
            lhs=Posynomial.single(Monomial(1.0, {})),
            rhs=Monomial(1.0, {VAR_TAU: 1.0}),
            tag=ConstraintTag("slack_floor"),
        )
    )

    # Policy proportionality: pi(s, a) * sum_a' r^h_a' = r^h_a.
    for s in range(n):
        acts = table[s]
        for a in acts:
            lhs_terms = []
            for a2 in acts:
                for s2, wp in weighted[(s, a2)].items():
                    lhs_terms.append(
                        Monomial(wp * float(c_alpha[s2]), {var_pi(s, a): 1.0, var_u(s2): e_alpha})
                    )
            rhs_terms = [
                Monomial(wp * float(c_alpha[s2]), {var_u(s2): e_alpha})
                for s2, wp in weighted[(s, a)].items()
            ]
            equalities.append(
                SpEquality(
                    lhs=Posynomial(tuple(lhs_terms)),
                    rhs=Posynomial(tuple(rhs_terms)),
                    tag=ConstraintTag("policy", state=s, action=a),
                )
            )

    # Budget: sum_s U(s) = D.
    equalities.append(
        SpEquality(
            lhs=Posynomial(tuple(Monomial(1.0, {var_u(s): 1.0}) for s in range(n))),
            rhs=Posynomial.single(Monomial(float(budget), {})),
            tag=ConstraintTag("budget"),
        )
    )

    # Reward links R(s) = c_s * U(s)^e and the terminal identity Q_H = R.
    for s in range(n):
        equalities.append(
            SpEquality(
                lhs=Posynomial.single(Monomial(1.0, {var_r(s): 1.0})),
                rhs=Posynomial.single(
                    Monomial(float(profile.reward_coefficients[s]), {var_u(s): profile.reward_exponent})
                ),
                tag=ConstraintTag("reward_link", state=s),
            )
        )
    for s in range(n):
        equalities.append(
            SpEquality(
                lhs=Posynomial.single(Monomial(1.0, {var_q(h, s): 1.0})),
                rhs=Posynomial.single(Monomial(1.0, {var_r(s): 1.0})),
                tag=ConstraintTag("terminal_cost", state=s),
            )
        )

    objective_terms = [
        Monomial(float(nu[s]), {var_q(0, s): 1.0}) for s in range(n) if nu[s] > 0
    ]
    objective_terms.append(Monomial(float(delta), {VAR_TAU: 1.0}))

    return SpProblem(
        pool=pool,
        objective=Posynomial(tuple(objective_terms)),
        inequalities=inequalities,
        equalities=equalities,
        horizon=h,
        budget=float(budget),
        lam=float(lam),
        delta=float(delta),
        reach_floor=float(reach_floor),
    )


def _approx(posy: Posynomial, point: Assignment) -> Monomial:
    if len(posy.terms) == 1:
        return posy.terms[0]
    return monomial_approximation(posy, point)


def condense(sp: SpProblem, point: Assignment) -> GpProblem:
    """Condense the SP into a GP around a strictly positive expansion point.

    Inequalities are divided through by their monomial right-hand sides;
    posynomial equalities have each side replaced by its local monomial
    approximation, which keeps them satisfied (and first-order accurate) at
    the expansion point.
    """
    for name in sp.pool.names():
        point[name]  # raises UnboundVariableError when uncovered
    inequalities = [ineq.lhs.divided_by(ineq.rhs) for ineq in sp.inequalities]
    ineq_tags = [ineq.tag for ineq in sp.inequalities]
    equalities = []
    eq_tags = []
    for eq in sp.equalities:
        lhs = _approx(eq.lhs, point)
        rhs = _approx(eq.rhs, point)
        equalities.append(lhs * rhs.reciprocal())
        eq_tags.append(eq.tag)
    return GpProblem(
        pool=sp.pool,
        objective=sp.objective,
        inequalities=inequalities,
        ineq_tags=ineq_tags,
        equalities=equalities,
        eq_tags=eq_tags,
    )


def trust_region(gp: GpProblem, point: Assignment, eta: float) -> GpProblem:
    """Add per-variable box constraints x in [x_hat / eta, eta * x_hat]."""
    if not (math.isfinite(eta) and eta > 1.0):
        raise ProgramError(f"trust-region ratio must be > 1, got {eta!r}")
    inequalities = list(gp.inequalities)
    tags = list(gp.ineq_tags)
    for name in gp.pool.names():
        x_hat = point[name]
        inequalities.append(Posynomial.single(Monomial(1.0 / (eta * x_hat), {name: 1.0})))
        tags.append(ConstraintTag("trust_upper", var=name))
        inequalities.append(Posynomial.single(Monomial(x_hat / eta, {name: -1.0})))
        tags.append(ConstraintTag("trust_lower", var=name))
    return GpProblem(
        pool=gp.pool,
        objective=gp.objective,
        inequalities=inequalities,
        ineq_tags=tags,
        equalities=list(gp.equalities),
        eq_tags=list(gp.eq_tags),
    )


def lint_gp(gp: GpProblem) -> List[str]:
    """Structural checks on an emitted GP; empty list means well-formed."""
    findings: List[str] = []
    known = set(gp.pool.names())

    def check_vars(expr_vars: Iterable[str], label: str) -> None:
        for v in expr_vars:
            if v not in known:
                findings.append(f"{label}: unknown variable {v!r}")

    if not isinstance(gp.objective, Posynomial):
        findings.append("objective is not a posynomial")
    else:
        check_vars(gp.objective.variables(), "objective")
    if len(gp.inequalities) != len(gp.ineq_tags):
        findings.append("inequality/tag lists have different lengths")
    if len(gp.equalities) != len(gp.eq_tags):
        findings.append("equality/tag lists have different lengths")
    for i, ineq in enumerate(gp.inequalities):
        if not isinstance(ineq, Posynomial):
            findings.append(f"inequality {i} is not a posynomial")
            continue
        check_vars(ineq.variables(), f"inequality {i}")
    for j, eq in enumerate(gp.equalities):
        if not isinstance(eq, Monomial):
            findings.append(f"equality {j} is not a monomial")
            continue
        check_vars(eq.variables(), f"equality {j}")
    return findings


@dataclass(frozen=True)
class SpResiduals:
    """Relative slack/error of every SP constraint at a point."""

    inequality_slack: Tuple[Tuple[ConstraintTag, float], ...]  # (rhs-lhs)/rhs; negative = violated
    equality_error: Tuple[Tuple[ConstraintTag, float], ...]  # |lhs-rhs|/max(lhs, rhs)

    @property
    def max_violation(self) -> float:
        worst = 0.0
        for _, slack in self.inequality_slack:
            worst = max(worst, -slack)
        for _, err in self.equality_error:
            worst = max(worst, err)
        return worst

    def slack_for(self, kind: str) -> Tuple[float, ...]:
        return tuple(s for tag, s in self.inequality_slack if tag.kind == kind)


def sp_residuals(sp: SpProblem, point: Assignment) -> SpResiduals:
    ineq = []
    for c in sp.inequalities:
        lhs = c.lhs.value(point)
        rhs = c.rhs.value(point)
        ineq.append((c.tag, (rhs - lhs) / max(abs(rhs), 1e-300)))
    eq = []
    for c in sp.equalities:
        lhs = c.lhs.value(point)
        rhs = c.rhs.value(point)
        eq.append((c.tag, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)))
    return SpResiduals(tuple(ineq), tuple(eq))


def dump_program(sp: SpProblem) -> str:
    """Readable canonical-text dump of the SP (deterministic; for debugging)."""
    from .expressions import canonical_text

    lines = [f"minimize {canonical_text(sp.objective)}"]
    for c in sp.inequalities:
        lines.append(f"{c.tag.label()}: {canonical_text(c.lhs)} <= {canonical_text(Posynomial.single(c.rhs))}")
    for c in sp.equalities:
        lines.append(f"{c.tag.label()}: {canonical_text(c.lhs)} = {canonical_text(c.rhs)}")
    return "\n".join(lines)


@dataclass(eq=False)
class ExpansionPoint:
    """A fully consistent SP assignment derived from one allocation."""

    allocation: Allocation
    policy: Policy
    cost: CostTable
    reach_relaxed: ReachTable  # terminal value = reach_floor, sensitive rows = 1
    bound_levels: np.ndarray  # nu-weighted relaxed reach per stage, length H+1
    tau: float
    assignment: Assignment


def expansion_point(
    model: MdpModel,
    profile: AdversaryProfile,
    allocation: Allocation,
    horizon: int,
    lam: float,
    reach_floor: float = DEFAULT_REACH_FLOOR,
) -> ExpansionPoint:
    """Evaluate one allocation into a consistent point for every SP variable.

    The reach recursion runs with the positive terminal floor so the relaxed
    reach inequalities hold with equality, and tau is the smallest feasible
    slack max(1, max_t bound_level_t / lam).
    """
    policy = derive_policy(model, allocation, profile)
    rewards = state_rewards(allocation, profile)
    cost = expected_cost(model, policy, rewards, horizon)
    reach_relaxed = reach_probability(model, policy, horizon, terminal_value=reach_floor)
    levels = reach_relaxed.values @ model.initial
    tau = max(1.0, float(levels.max()) / lam)
    values: Dict[str, float] = {}
    for s in range(model.n_states):
        values[var_u(s)] = float(allocation.utilities[s])
        values[var_r(s)] = float(rewards[s])
    for s, row in policy.rows.items():
        for a, p in row.items():
            values[var_pi(s, a)] = float(p)
    for t in range(horizon + 1):
        for s in range(model.n_states):
            values[var_q(t, s)] = float(cost.values[t, s])
    for t in range(horizon):
        for s in range(model.n_states):
            if s not in model.sensitive:
                values[var_p(t, s)] = float(reach_relaxed.values[t, s])
    values[VAR_TAU] = tau
    return ExpansionPoint(
        allocation=allocation,
        policy=policy,
        cost=cost,
        reach_relaxed=reach_relaxed,
        bound_levels=np.asarray(levels, dtype=float),
        tau=tau,
        assignment=Assignment(values),
    )
