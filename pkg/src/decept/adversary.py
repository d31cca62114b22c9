"""Boundedly rational adversary: probability weighting, reward perception,
and the stochastic policy both induce.

The adversary misperceives transition probabilities through an inverse-S
weighting curve and rewards through a concave power distortion, then picks
actions proportionally to the perceived one-step reward.  Defender utilities
shape those rewards through a per-state power law ``R(s) = c_s * U(s)**e``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ModelError
from .mdp import MdpModel, Policy

DEFAULT_COEFFICIENT_FLOOR = 1e-3
BUDGET_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class AdversaryProfile:
    """Perception parameters plus per-state reward coefficients.

    ``reward_coefficients`` are the c_s of R(s) = c_s * U(s)**e, already
    floored at ``coefficient_floor`` so rewards stay strictly positive even
    where the raw crime counts are zero.
    """

    gamma: float
    alpha: float
    reward_coefficients: np.ndarray
    reward_exponent: float
    coefficient_floor: float = DEFAULT_COEFFICIENT_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "reward_coefficients", np.asarray(self.reward_coefficients, dtype=float))
        self.validate()

    def validate(self) -> None:
        if not (math.isfinite(self.gamma) and 0.0 < self.gamma <= 1.0):
            raise ModelError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha <= 1.0):
            raise ModelError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if not math.isfinite(self.reward_exponent) or self.reward_exponent == 0.0:
            raise ModelError(f"reward exponent must be finite and nonzero, got {self.reward_exponent!r}")
        if not (math.isfinite(self.coefficient_floor) and self.coefficient_floor > 0.0):
            raise ModelError(f"coefficient floor must be > 0, got {self.coefficient_floor!r}")
        c = self.reward_coefficients
        if c.ndim != 1 or c.size == 0:
            raise ModelError("reward coefficients must be a nonempty vector")
        if not np.all(np.isfinite(c)) or np.any(c < self.coefficient_floor - 1e-15):
            raise ModelError("reward coefficients must be finite and >= the floor")

    @classmethod
    def from_crime_counts(
        cls,
        counts: Sequence[float],
        gamma: float,
        alpha: float,
        reward_exponent: float = -1.0,
        coefficient_floor: float = DEFAULT_COEFFICIENT_FLOOR,
    ) -> "AdversaryProfile":
        """Profile whose reward coefficients are floored historical counts."""
        raw = np.asarray(counts, dtype=float)
        if raw.ndim != 1 or raw.size == 0:
            raise ModelError("crime counts must be a nonempty vector")
        if not np.all(np.isfinite(raw)) or np.any(raw < 0):
            raise ModelError("crime counts must be finite and >= 0")
        return cls(
            gamma=gamma,
            alpha=alpha,
            reward_coefficients=np.maximum(raw, coefficient_floor),
            reward_exponent=reward_exponent,
            coefficient_floor=coefficient_floor,
        )


@dataclass(frozen=True, eq=False)
class Allocation:
    """Strictly positive per-state utilities summing to the budget."""

    utilities: np.ndarray
    budget: float

    def __post_init__(self):
        u = np.asarray(self.utilities, dtype=float)
        object.__setattr__(self, "utilities", u)
        if u.ndim != 1 or u.size == 0:
            raise ModelError("allocation must be a nonempty vector")
        if not np.all(np.isfinite(u)) or np.any(u <= 0):
            raise ModelError("allocation entries must be finite and > 0")
        if not math.isfinite(self.budget) or self.budget <= 0:
            raise ModelError(f"budget must be finite and > 0, got {self.budget!r}")
        total = float(u.sum())
        if abs(total - self.budget) > BUDGET_TOL * max(1.0, abs(self.budget)):
            raise ModelError(f"allocation sums to {total!r}, expected budget {self.budget!r}")


def weight_probability(p: float, gamma: float) -> float:
    """Inverse-S probability weighting w(p) = p^g / (p^g + (1-p)^g)^(1/g).

    Overweights rare events and underweights likely ones for gamma < 1;
    the identity for gamma = 1; fixes w(0) = 0 and w(1) = 1.
    """
    if not (math.isfinite(gamma) and 0.0 < gamma <= 1.0):
        raise DomainError(f"gamma must lie in (0, 1], got {gamma!r}")
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"probability must lie in [0, 1], got {p!r}")
    if p in (0.0, 1.0):
        return p
    num = p ** gamma
    return num / (num + (1.0 - p) ** gamma) ** (1.0 / gamma)


def defender_reward(utility: float, coefficient: float, exponent: float) -> float:
    """Objective reward R = c * U**e produced by a utility level at one state."""
    if utility <= 0 or not math.isfinite(utility):
        raise DomainError(f"utility must be finite and > 0, got {utility!r}")
    return coefficient * utility ** exponent


def perceived_reward(utility: float, profile: AdversaryProfile, state: int) -> float:
    """Perceived reward f(U) = (c_s * U**e)**alpha at one state."""
    return defender_reward(utility, float(profile.reward_coefficients[state]), profile.reward_exponent) ** profile.alpha


def state_rewards(allocation: Allocation, profile: AdversaryProfile) -> np.ndarray:
    """Vector of objective rewards R(s) over all states."""
    u = allocation.utilities
    if u.shape != profile.reward_coefficients.shape:
        raise ModelError("allocation and profile cover different numbers of states")
    return profile.reward_coefficients * u ** profile.reward_exponent


def perceived_state_rewards(allocation: Allocation, profile: AdversaryProfile) -> np.ndarray:
    """Vector of perceived rewards f(U(s)) over all states."""
    return state_rewards(allocation, profile) ** profile.alpha


def expected_immediate_reward(model: MdpModel, rewards: Sequence[float], state: int, action: int) -> float:
    """Undistorted one-step lookahead r_a(s) = sum_s' R(s') T(s, a, s')."""
    row = model.successors(state, action)
    r = np.asarray(rewards, dtype=float)
    return float(sum(r[t] * p for t, p in row.items()))


def perceived_expected_reward(
    model: MdpModel, allocation: Allocation, profile: AdversaryProfile, state: int, action: int
) -> float:
    """Distorted one-step lookahead r_a^h(s) = sum_s' f(U(s')) w(T(s, a, s')).

    The weighting is applied to each successor probability independently, so
    the weights need not sum to one.
    """
    row = model.successors(state, action)
    f = perceived_state_rewards(allocation, profile)
    return float(sum(f[t] * weight_probability(p, profile.gamma) for t, p in row.items()))


def derive_policy(model: MdpModel, allocation: Allocation, profile: AdversaryProfile) -> Policy:
    """Proportional-response policy pi(s, a) over available actions.

    Every available action keeps strictly positive probability because
    perceived rewards and the weighting of above-threshold transition mass
    are strictly positive.
    """
    if allocation.utilities.shape != (model.n_states,):
        raise ModelError("allocation does not cover the model's states")
    f = perceived_state_rewards(allocation, profile)
    rows: Dict[int, Dict[int, float]] = {}
    for s, acts in model.action_table().items():
        if not acts:
            raise ModelError(f"state {s} has no available actions")
        scores = []
        for a in acts:
            row = model.successors(s, a)
            scores.append(sum(f[t] * weight_probability(p, profile.gamma) for t, p in row.items()))
        total = sum(scores)
        if total <= 0 or not math.isfinite(total):
            raise ModelError(f"state {s}: perceived rewards do not normalize (sum {total!r})")
        rows[s] = {a: score / total for a, score in zip(acts, scores)}
    return Policy(rows)
