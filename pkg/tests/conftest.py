"""Shared fixtures: the two-action worked example, random model generators."""

import numpy as np
import pytest

from decept.adversary import AdversaryProfile, Allocation
from decept.mdp import MdpModel, Policy


def make_random_mdp(rng: np.random.Generator, n_states: int, n_actions: int) -> MdpModel:
    """Random fully-connected MDP with well-separated transition probabilities.

    Every state offers a random nonempty subset of actions; every row mixes
    over all states with entries bounded away from zero so downstream
    log-domain machinery never sees vanishing probabilities.
    """
    actions = tuple(f"a{i}" for i in range(n_actions))
    transitions = {}
    for s in range(n_states):
        n_avail = int(rng.integers(1, n_actions + 1))
        avail = rng.choice(n_actions, size=n_avail, replace=False)
        for a in sorted(int(a) for a in avail):
            raw = rng.random(n_states) + 0.1
            row = raw / raw.sum()
            transitions[(s, a)] = {t: float(p) for t, p in enumerate(row)}
    raw0 = rng.random(n_states) + 0.1
    initial = raw0 / raw0.sum()
    n_sens = int(rng.integers(1, n_states))
    sensitive = frozenset(int(s) for s in rng.choice(n_states, size=n_sens, replace=False))
    return MdpModel(
        n_states=n_states,
        actions=actions,
        transitions=transitions,
        initial=initial,
        sensitive=sensitive,
    )


def make_random_policy(rng: np.random.Generator, model: MdpModel) -> Policy:
    rows = {}
    for s, acts in model.action_table().items():
        raw = rng.random(len(acts)) + 0.1
        probs = raw / raw.sum()
        rows[s] = {a: float(p) for a, p in zip(acts, probs)}
    return Policy(rows)


@pytest.fixture
def fig1_model() -> MdpModel:
    """Start state with a risky and a safe action, four absorbing outcomes.

    Action a reaches the high-utility state with probability 0.1 and the
    low-utility state otherwise; action b is a fair coin over two mid-utility
    states.  Absorbing states keep a self-loop so the model validates.
    """
    transitions = {
        (0, 0): {1: 0.1, 2: 0.9},
        (0, 1): {3: 0.5, 4: 0.5},
    }
    for s in range(1, 5):
        transitions[(s, 0)] = {s: 1.0}
    return MdpModel(
        n_states=5,
        actions=("a", "b"),
        transitions=transitions,
        initial=np.array([1.0, 0.0, 0.0, 0.0, 0.0]),
        sensitive=frozenset(),
    )


@pytest.fixture
def fig1_allocation() -> Allocation:
    utilities = np.array([1.0, 5.0, 2.0, 2.5, 2.5])
    return Allocation(utilities, float(utilities.sum()))


@pytest.fixture
def fig1_profile() -> AdversaryProfile:
    # Reward law R(s) = U(s): unit coefficients, exponent one.
    return AdversaryProfile(
        gamma=0.6,
        alpha=0.88,
        reward_coefficients=np.ones(5),
        reward_exponent=1.0,
    )
