"""Exact and sampled evaluation of a fixed policy over a finite horizon.

Two backward recursions: accumulated expected reward (cost-to-go from the
defender's point of view) and the probability of touching a sensitive state
within the horizon.  Both have exhaustive path-enumeration twins used as
oracles in tests, plus a chunked Monte-Carlo estimator whose results depend
only on (seed, n_paths) — never on how chunks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ModelError
from .mdp import MdpModel, Path, Policy, path_probability

MC_CHUNK = 1024  # fixed chunk size; part of the estimator's deterministic contract


def _check_horizon(horizon: int) -> int:
    h = int(horizon)
    if h < 0:
        raise DomainError(f"horizon must be >= 0, got {horizon!r}")
    return h


@dataclass(frozen=True, eq=False)
class CostTable:
    """values[t, s] = expected reward accumulated from (s, t) through t = H."""

    values: np.ndarray
    total: float


@dataclass(frozen=True, eq=False)
class ReachTable:
    """values[t, s] = probability of touching a sensitive state between t and H."""

    values: np.ndarray
    total: float


def expected_cost(model: MdpModel, policy: Policy, rewards: Sequence[float], horizon: int) -> CostTable:
    """Backward recursion Q_t(s) = R(s) + sum_a pi sum_s' T * Q_{t+1}(s')."""
    h = _check_horizon(horizon)
    r = np.asarray(rewards, dtype=float)
    if r.shape != (model.n_states,):
        raise ModelError(f"rewards must have shape ({model.n_states},), got {r.shape}")
    table = model.action_table()
    q = np.zeros((h + 1, model.n_states))
    q[h] = r
    for t in range(h - 1, -1, -1):
        for s in range(model.n_states):
            acc = r[s]
            for a in table[s]:
                pi = policy.prob(s, a)
                if pi == 0.0:
                    continue
                row = model.successors(s, a)
                acc += pi * sum(p * q[t + 1, s2] for s2, p in row.items())
            q[t, s] = acc
    total = float(model.initial @ q[0])
    return CostTable(values=q, total=total)


def reach_probability(
    model: MdpModel, policy: Policy, horizon: int, terminal_value: float = 0.0
) -> ReachTable:
    """Probability of hitting a sensitive state within the horizon.

    Sensitive states are absorbing for the purpose of this recursion:
    P_t(s) = 1 there, and elsewhere P_t(s) = sum_a pi sum_s' T * P_{t+1}(s').
    ``terminal_value`` is what non-sensitive states score at t = H; the exact
    probability uses 0, and the relaxed program substitutes a small positive
    floor there.
    """
    h = _check_horizon(horizon)
    if not (0.0 <= terminal_value < 1.0):
        raise DomainError(f"terminal value must lie in [0, 1), got {terminal_value!r}")
    table = model.action_table()
    sens = model.sensitive
    p_tab = np.zeros((h + 1, model.n_states))
    for s in range(model.n_states):
        p_tab[h, s] = 1.0 if s in sens else terminal_value
    for t in range(h - 1, -1, -1):
        for s in range(model.n_states):
            if s in sens:
                p_tab[t, s] = 1.0
                continue
            acc = 0.0
            for a in table[s]:
                pi = policy.prob(s, a)
                if pi == 0.0:
                    continue
                row = model.successors(s, a)
                acc += pi * sum(p * p_tab[t + 1, s2] for s2, p in row.items())
            p_tab[t, s] = acc
    total = float(model.initial @ p_tab[0])
    return ReachTable(values=p_tab, total=total)


def enumerate_paths(model: MdpModel, horizon: int) -> Iterator[Path]:
    """All action-feasible trajectories of exactly ``horizon`` steps."""
    h = _check_horizon(horizon)
    table = model.action_table()

    def extend(states: List[int], actions: List[int]) -> Iterator[Path]:
        if len(actions) == h:
            yield Path(tuple(states), tuple(actions))
            return
        s = states[-1]
        for a in table[s]:
            for s2 in model.successors(s, a):
                states.append(s2)
                actions.append(a)
                yield from extend(states, actions)
                states.pop()
                actions.pop()

    for s0 in range(model.n_states):
        if model.initial[s0] > 0.0:
            yield from extend([s0], [])


def cost_by_enumeration(model: MdpModel, policy: Policy, rewards: Sequence[float], horizon: int) -> float:
    """Exhaustive twin of :func:`expected_cost` built on path probabilities."""
    r = np.asarray(rewards, dtype=float)
    total = 0.0
    for path in enumerate_paths(model, horizon):
        p = path_probability(model, policy, path)
        if p > 0.0:
            total += p * float(sum(r[s] for s in path.states))
    return total


def reach_by_enumeration(model: MdpModel, policy: Policy, horizon: int) -> float:
    """Exhaustive twin of :func:`reach_probability` over first-hit prefixes."""
    h = _check_horizon(horizon)
    sens = model.sensitive
    table = model.action_table()
    total = 0.0

    def walk(s: int, prob: float, steps_left: int) -> None:
        nonlocal total
        if s in sens:
            total += prob
            return
        if steps_left == 0:
            return
        for a in table[s]:
            pi = policy.prob(s, a)
            if pi == 0.0:
                continue
            for s2, p in model.successors(s, a).items():
                walk(s2, prob * pi * p, steps_left - 1)

    for s0 in range(model.n_states):
        if model.initial[s0] > 0.0:
            walk(s0, float(model.initial[s0]), h)
    return total


@dataclass(frozen=True)
class McEstimate:
    """Sampled cost/reach with standard errors; deterministic per (seed, n_paths)."""

    q_mean: float
    q_stderr: float
    reach_mean: float
    reach_stderr: float
    n_paths: int
    seed: int


class _SamplingTables:
    """Dense lookup tables for vectorized trajectory sampling."""

    def __init__(self, model: MdpModel, policy: Policy):
        n = model.n_states
        table = model.action_table()
        max_a = max(len(acts) for acts in table.values())
        self.act_cum = np.ones((n, max_a))
        row_ids = np.zeros((n, max_a), dtype=np.int64)
        flat_rows: List[Tuple[int, int]] = []
        for s in range(n):
            acts = table[s]
            probs = [policy.prob(s, a) for a in acts]
            total = sum(probs)
            if abs(total - 1.0) > 1e-6:
                raise ModelError(f"policy row at state {s} sums to {total!r}")
            cum = np.cumsum(np.asarray(probs) / total)
            self.act_cum[s, : len(acts)] = cum
            for j, a in enumerate(acts):
                row_ids[s, j] = len(flat_rows)
                flat_rows.append((s, a))
        self.row_ids = row_ids
        max_s = max(len(model.successors(s, a)) for s, a in flat_rows)
        self.succ_cum = np.ones((len(flat_rows), max_s))
        self.succ_ids = np.zeros((len(flat_rows), max_s), dtype=np.int64)
        for k, (s, a) in enumerate(flat_rows):
            row = model.successors(s, a)
            targets = sorted(row)
            self.succ_cum[k, : len(targets)] = np.cumsum([row[t] for t in targets])
            self.succ_ids[k, : len(targets)] = targets

    def step(self, states: np.ndarray, u_act: np.ndarray, u_next: np.ndarray) -> np.ndarray:
        a_pos = (u_act[:, None] > self.act_cum[states]).sum(axis=1)
        a_pos = np.minimum(a_pos, self.act_cum.shape[1] - 1)
        rows = self.row_ids[states, a_pos]
        j = (u_next[:, None] > self.succ_cum[rows]).sum(axis=1)
        j = np.minimum(j, self.succ_cum.shape[1] - 1)
        return self.succ_ids[rows, j]


def monte_carlo(
    model: MdpModel,
    policy: Policy,
    rewards: Sequence[float],
    horizon: int,
    n_paths: int,
    seed: int,
) -> McEstimate:
    """Sample trajectories in fixed-size chunks and estimate cost and reach.

    Chunk c draws from the c-th child of ``SeedSequence(seed)``, so splitting
    the chunks across workers and merging cannot change the estimate.
    """
    h = _check_horizon(horizon)
    if n_paths < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths!r}")
    r = np.asarray(rewards, dtype=float)
    if r.shape != (model.n_states,):
        raise ModelError(f"rewards must have shape ({model.n_states},), got {r.shape}")
    tables = _SamplingTables(model, policy)
    sens_mask = np.zeros(model.n_states, dtype=bool)
    for s in model.sensitive:
        sens_mask[s] = True
    nu = model.initial / model.initial.sum()

    n_chunks = (n_paths + MC_CHUNK - 1) // MC_CHUNK
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    q_sum = 0.0
    q_sq_sum = 0.0
    reach_count = 0
    for c in range(n_chunks):
        size = min(MC_CHUNK, n_paths - c * MC_CHUNK)
        rng = np.random.default_rng(children[c])
        states = rng.choice(model.n_states, size=size, p=nu)
        q = r[states].copy()
        reached = sens_mask[states].copy()
        for _ in range(h):
            u_act = rng.random(size)
            u_next = rng.random(size)
            states = tables.step(states, u_act, u_next)
            q += r[states]
            reached |= sens_mask[states]
        q_sum += float(q.sum())
        q_sq_sum += float((q * q).sum())
        reach_count += int(reached.sum())

    n = float(n_paths)
    q_mean = q_sum / n
    reach_mean = reach_count / n
    if n_paths > 1:
        q_var = max(0.0, (q_sq_sum - n * q_mean * q_mean) / (n - 1.0))
        r_var = max(0.0, (reach_count * (1.0 - reach_mean) ** 2 + (n - reach_count) * reach_mean**2) / (n - 1.0))
        q_stderr = math.sqrt(q_var / n)
        reach_stderr = math.sqrt(r_var / n)
    else:
        q_stderr = float("nan")
        reach_stderr = float("nan")
    return McEstimate(
        q_mean=q_mean,
        q_stderr=q_stderr,
        reach_mean=reach_mean,
        reach_stderr=reach_stderr,
        n_paths=n_paths,
        seed=seed,
    )
