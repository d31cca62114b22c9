"""Finite MDP environments: transition structure, grids, policies, and paths.

States are integers 0..n-1; actions live in a fixed global tuple and are
referenced by index.  Transition rows are sparse dicts keyed by (state,
action index).  Grid worlds number states from the bottom-left corner, row by
row (state = row * cols + col).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ModelError, UnavailableActionError

PROB_TOL = 1e-9     # tolerance accepted on distribution sums
PRUNE_TOL = 1e-12   # transition mass below this is dropped and the row renormalized

TransitionRow = Dict[int, float]

GRID_ACTIONS = ("left", "right", "up", "down")
# (row delta, col delta); row 0 is the bottom row, so "up" increases the row.
_GRID_OFFSETS = {"left": (0, -1), "right": (0, 1), "up": (1, 0), "down": (-1, 0)}


def clean_row(row: Mapping[int, float]) -> TransitionRow:
    """Sort a transition row, prune sub-1e-12 mass, and renormalize if pruned."""
    kept = {int(s): float(p) for s, p in row.items() if float(p) > PRUNE_TOL}
    if not kept:
        raise ModelError("transition row has no mass above the pruning threshold")
    pruned = len(kept) != len(row)
    total = sum(kept[s] for s in sorted(kept))
    if pruned:
        return {s: kept[s] / total for s in sorted(kept)}
    return {s: kept[s] for s in sorted(kept)}


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Immutable finite MDP with a start distribution and sensitive states."""

    n_states: int
    actions: Tuple[str, ...]
    transitions: Dict[Tuple[int, int], TransitionRow]
    initial: np.ndarray
    sensitive: frozenset
    coords: Optional[Tuple[Tuple[int, int], ...]] = None
    grid_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "sensitive", frozenset(int(s) for s in self.sensitive))

    def action_index(self, name: str) -> int:
        try:
            return self.actions.index(name)
        except ValueError:
            raise ModelError(f"unknown action name {name!r}") from None

    def available_actions(self, state: int) -> Tuple[int, ...]:
        if not 0 <= state < self.n_states:
            raise ModelError(f"state {state} out of range 0..{self.n_states - 1}")
        return tuple(a for (s, a) in sorted(self.transitions) if s == state)

    def successors(self, state: int, action: int) -> TransitionRow:
        row = self.transitions.get((state, action))
        if row is None:
            name = self.actions[action] if 0 <= action < len(self.actions) else f"#{action}"
            raise UnavailableActionError(state, name)
        return row

    def action_table(self) -> Dict[int, Tuple[int, ...]]:
        """State -> sorted available action indices, computed in one sweep."""
        table: Dict[int, List[int]] = {s: [] for s in range(self.n_states)}
        for (s, a) in sorted(self.transitions):
            table[s].append(a)
        return {s: tuple(acts) for s, acts in table.items()}


def available_actions(model: MdpModel, state: int) -> Tuple[int, ...]:
    return model.available_actions(state)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic stationary policy: state -> {action index: probability}."""

    rows: Dict[int, Dict[int, float]]

    def prob(self, state: int, action: int) -> float:
        return self.rows.get(state, {}).get(action, 0.0)


def validate_policy(model: MdpModel, policy: Policy, tol: float = PROB_TOL) -> List[str]:
    """Return human-readable violations; empty list means the policy is valid."""
    findings: List[str] = []
    table = model.action_table()
    for s in range(model.n_states):
        row = policy.rows.get(s)
        if not row:
            findings.append(f"state {s}: no action probabilities")
            continue
        for a, p in row.items():
            if a not in table[s]:
                findings.append(f"state {s}: action index {a} is not available")
            if not 0.0 <= p <= 1.0 + tol:
                findings.append(f"state {s}: probability {p!r} outside [0, 1]")
        total = sum(row.values())
        if abs(total - 1.0) > tol:
            findings.append(f"state {s}: action probabilities sum to {total!r}")
    return findings


@dataclass(frozen=True)
class Path:
    """A state/action trajectory: one more state than actions."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ModelError(
                f"path needs len(states) == len(actions) + 1, got {len(self.states)} and {len(self.actions)}"
            )

    def horizon(self) -> int:
        return len(self.actions)


def path_probability(model: MdpModel, policy: Policy, path: Path) -> float:
    """Probability of a trajectory under start distribution, policy, dynamics."""
    p = float(model.initial[path.states[0]])
    for s, a, s_next in zip(path.states[:-1], path.actions, path.states[1:]):
        row = model.successors(s, a)  # raises UnavailableActionError when absent
        p *= policy.prob(s, a) * row.get(s_next, 0.0)
        if p == 0.0:
            return 0.0
    return p


@dataclass(frozen=True)
class GridSpec:
    """Parameters of a rectangular grid world with slip dynamics."""

    rows: int
    cols: int
    crime_counts: Tuple[float, ...]
    sensitive_ids: Tuple[int, ...] = ()
    move_success: float = 0.95
    initial: Union[str, Tuple[float, ...]] = "uniform"

    def __post_init__(self):
        n = self.rows * self.cols
        if self.rows < 1 or self.cols < 1:
            raise ModelError("grid needs at least one row and one column")
        if self.rows * self.cols < 2:
            raise ModelError("grid needs at least two cells for movement actions")
        counts = tuple(float(c) for c in self.crime_counts)
        if len(counts) != n:
            raise ModelError(f"expected {n} crime counts, got {len(counts)}")
        if any(c < 0 or not math.isfinite(c) for c in counts):
            raise ModelError("crime counts must be finite and >= 0")
        object.__setattr__(self, "crime_counts", counts)
        ids = tuple(int(s) for s in self.sensitive_ids)
        if len(set(ids)) != len(ids) or any(not 0 <= s < n for s in ids):
            raise ModelError("sensitive ids must be distinct states of the grid")
        object.__setattr__(self, "sensitive_ids", ids)
        if not 0.0 < self.move_success <= 1.0:
            raise ModelError(f"move_success must lie in (0, 1], got {self.move_success!r}")
        if isinstance(self.initial, str):
            if self.initial != "uniform":
                raise ModelError(f"unknown initial distribution {self.initial!r}")
        else:
            probs = tuple(float(p) for p in self.initial)
            if len(probs) != n:
                raise ModelError(f"initial distribution needs {n} entries, got {len(probs)}")
            object.__setattr__(self, "initial", probs)

    @property
    def n_states(self) -> int:
        return self.rows * self.cols

    def state_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ModelError(f"cell ({row}, {col}) outside a {self.rows}x{self.cols} grid")
        return row * self.cols + col


def build_grid(spec: GridSpec) -> MdpModel:
    """Materialize the grid MDP.

    Each cell offers one action per existing neighbor; the move succeeds with
    probability ``move_success`` and the remaining mass is split evenly among
    the other existing neighbors (all of it stays on the target when the cell
    has a single neighbor).
    """
    n = spec.n_states
    transitions: Dict[Tuple[int, int], TransitionRow] = {}
    coords: List[Tuple[int, int]] = []
    for s in range(n):
        r, c = divmod(s, spec.cols)
        coords.append((r, c))
        neighbors: Dict[int, int] = {}
        for a_idx, name in enumerate(GRID_ACTIONS):
            dr, dc = _GRID_OFFSETS[name]
            nr, nc = r + dr, c + dc
            if 0 <= nr < spec.rows and 0 <= nc < spec.cols:
                neighbors[a_idx] = nr * spec.cols + nc
        for a_idx, target in sorted(neighbors.items()):
            others = [t for t in neighbors.values() if t != target]
            if others:
                slip = (1.0 - spec.move_success) / len(others)
                row = {target: spec.move_success}
                for t in others:
                    row[t] = row.get(t, 0.0) + slip
            else:
                row = {target: 1.0}
            transitions[(s, a_idx)] = clean_row(row)
    if isinstance(spec.initial, str):
        initial = np.full(n, 1.0 / n)
    else:
        initial = np.asarray(spec.initial, dtype=float)
    return MdpModel(
        n_states=n,
        actions=GRID_ACTIONS,
        transitions=transitions,
        initial=initial,
        sensitive=frozenset(spec.sensitive_ids),
        coords=tuple(coords),
        grid_shape=(spec.rows, spec.cols),
    )


@dataclass(frozen=True)
class ValidationReport:
    findings: Tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.findings


def validate(model: MdpModel) -> ValidationReport:
    """Check stochasticity, start distribution, and action availability."""
    findings: List[str] = []
    if model.n_states < 1:
        findings.append("model has no states")
    if not model.actions:
        findings.append("model has no actions")
    states_with_actions = set()
    for (s, a), row in sorted(model.transitions.items()):
        label = f"transition ({s}, {model.actions[a] if 0 <= a < len(model.actions) else a})"
        if not 0 <= s < model.n_states:
            findings.append(f"{label}: source state out of range")
            continue
        if not 0 <= a < len(model.actions):
            findings.append(f"{label}: action index out of range")
            continue
        states_with_actions.add(s)
        total = 0.0
        for target, p in row.items():
            if not 0 <= target < model.n_states:
                findings.append(f"{label}: target state {target} out of range")
            if not 0.0 <= p <= 1.0 + PROB_TOL:
                findings.append(f"{label}: probability {p!r} outside [0, 1]")
            total += p
        if abs(total - 1.0) > PROB_TOL:
            findings.append(f"{label}: row sums to {total!r}")
    for s in range(model.n_states):
        if s not in states_with_actions:
            findings.append(f"state {s}: no available actions")
    initial = model.initial
    if initial.shape != (model.n_states,):
        findings.append(f"initial distribution has shape {initial.shape}, expected ({model.n_states},)")
    else:
        if np.any(initial < -PROB_TOL) or np.any(initial > 1.0 + PROB_TOL):
            findings.append("initial distribution has entries outside [0, 1]")
        if abs(float(initial.sum()) - 1.0) > PROB_TOL:
            findings.append(f"initial distribution sums to {float(initial.sum())!r}")
    for s in model.sensitive:
        if not 0 <= s < model.n_states:
            findings.append(f"sensitive state {s} out of range")
    return ValidationReport(tuple(findings))
