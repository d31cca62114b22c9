"""Model construction, validation, grids, and path probabilities."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from decept.errors import ModelError, UnavailableActionError
from decept.mdp import (
    GridSpec,
    MdpModel,
    Path,
    Policy,
    build_grid,
    clean_row,
    path_probability,
    validate,
    validate_policy,
)

from conftest import make_random_mdp, make_random_policy


def two_state_model() -> MdpModel:
    return MdpModel(
        n_states=2,
        actions=("stay", "go"),
        transitions={
            (0, 0): {0: 1.0},
            (0, 1): {0: 0.1, 1: 0.9},
            (1, 0): {1: 1.0},
        },
        initial=np.array([0.5, 0.5]),
        sensitive=frozenset({1}),
    )


class TestCleanRow:
    def test_prunes_tiny_mass_and_renormalizes(self):
        row = clean_row({0: 1.0 - 1e-13, 1: 1e-13})
        assert set(row) == {0}
        assert_allclose(row[0], 1.0, rtol=0, atol=1e-15)

    def test_rejects_bad_total(self):
        with pytest.raises(ModelError):
            clean_row({0: 0.5, 1: 0.4})

    def test_rejects_negative_mass(self):
        with pytest.raises(ModelError):
            clean_row({0: 1.2, 1: -0.2})


class TestMdpModel:
    def test_available_actions_sorted(self):
        model = two_state_model()
        assert model.available_actions(0) == (0, 1)
        assert model.available_actions(1) == (0,)

    def test_successors_unavailable_action_raises(self):
        model = two_state_model()
        with pytest.raises(UnavailableActionError):
            model.successors(1, 1)

    def test_action_index_unknown_name(self):
        with pytest.raises(ModelError):
            two_state_model().action_index("jump")

    def test_validate_clean_model(self):
        report = validate(two_state_model())
        assert report.ok
        assert report.findings == ()

    def test_validate_flags_bad_row_sum(self):
        model = two_state_model()
        broken = MdpModel(
            n_states=2,
            actions=model.actions,
            transitions={**model.transitions, (1, 0): {1: 0.9}},
            initial=model.initial,
            sensitive=model.sensitive,
        )
        report = validate(broken)
        assert not report.ok
        assert any("(1" in f and "0.9" in f for f in report.findings)

    def test_validate_flags_bad_initial(self):
        model = two_state_model()
        broken = MdpModel(
            n_states=2,
            actions=model.actions,
            transitions=model.transitions,
            initial=np.array([0.6, 0.5]),
            sensitive=model.sensitive,
        )
        report = validate(broken)
        assert not report.ok

    def test_validate_flags_stateless_state(self):
        broken = MdpModel(
            n_states=2,
            actions=("a",),
            transitions={(0, 0): {0: 1.0}},
            initial=np.array([1.0, 0.0]),
            sensitive=frozenset(),
        )
        report = validate(broken)
        assert not report.ok


class TestPolicy:
    def test_validate_policy_clean(self):
        model = two_state_model()
        policy = Policy({0: {0: 0.3, 1: 0.7}, 1: {0: 1.0}})
        assert validate_policy(model, policy) == []

    def test_validate_policy_flags_bad_row(self):
        model = two_state_model()
        policy = Policy({0: {0: 0.3, 1: 0.6}, 1: {0: 1.0}})
        assert validate_policy(model, policy)

    def test_validate_policy_flags_unavailable_action(self):
        model = two_state_model()
        policy = Policy({0: {0: 1.0}, 1: {1: 1.0}})
        assert validate_policy(model, policy)


class TestPathProbability:
    def test_length_zero_is_initial_mass(self):
        model = two_state_model()
        policy = Policy({0: {0: 0.5, 1: 0.5}, 1: {0: 1.0}})
        assert_allclose(path_probability(model, policy, Path((0,), ())), 0.5, rtol=1e-15)

    def test_hand_product(self):
        model = MdpModel(
            n_states=2,
            actions=("a",),
            transitions={(0, 0): {0: 0.1, 1: 0.9}, (1, 0): {1: 1.0}},
            initial=np.array([0.5, 0.5]),
            sensitive=frozenset(),
        )
        policy = Policy({0: {0: 0.5}, 1: {0: 1.0}})
        prob = path_probability(model, policy, Path((0, 1), (0,)))
        assert_allclose(prob, 0.5 * 0.5 * 0.9, rtol=1e-15)

    def test_deterministic_chain_is_one(self):
        model = MdpModel(
            n_states=2,
            actions=("a",),
            transitions={(0, 0): {1: 1.0}, (1, 0): {1: 1.0}},
            initial=np.array([1.0, 0.0]),
            sensitive=frozenset(),
        )
        policy = Policy({0: {0: 1.0}, 1: {0: 1.0}})
        assert_allclose(path_probability(model, policy, Path((0, 1, 1), (0, 0))), 1.0, rtol=0)

    def test_path_rejects_impossible_transition(self):
        with pytest.raises(ModelError):
            Path((0, 1), ())


class TestGrid:
    def test_two_cell_grid_moves_deterministically(self):
        model = build_grid(GridSpec(rows=1, cols=2, crime_counts=(1.0, 2.0)))
        right = model.action_index("right")
        assert model.successors(0, right) == {1: 1.0}
        left = model.action_index("left")
        assert model.successors(1, left) == {0: 1.0}

    def test_uniform_initial_distribution(self):
        model = build_grid(GridSpec(rows=7, cols=5, crime_counts=tuple(range(35))))
        assert_allclose(model.initial, np.full(35, 1.0 / 35.0), rtol=0, atol=1e-16)

    def test_interior_cell_slip_split(self):
        model = build_grid(GridSpec(rows=3, cols=3, crime_counts=tuple(range(9)), move_success=0.95))
        center = 4
        up = model.action_index("up")
        row = model.successors(center, up)
        assert_allclose(row[7], 0.95, rtol=1e-15)
        for other in (1, 3, 5):
            assert_allclose(row[other], 0.05 / 3.0, rtol=1e-12)
        assert_allclose(sum(row.values()), 1.0, rtol=0, atol=1e-12)

    def test_state_numbering_starts_bottom_left(self):
        spec = GridSpec(rows=2, cols=3, crime_counts=tuple(range(6)))
        assert spec.state_index(0, 0) == 0
        assert spec.state_index(0, 2) == 2
        assert spec.state_index(1, 0) == 3
        model = build_grid(spec)
        assert model.coords[4] == (1, 1)

    def test_corner_actions_limited_to_existing_neighbors(self):
        model = build_grid(GridSpec(rows=2, cols=2, crime_counts=(1, 1, 1, 1)))
        names = {model.actions[a] for a in model.available_actions(0)}
        assert names == {"right", "up"}

    def test_grid_models_validate(self):
        rng = np.random.default_rng(3)
        for rows, cols in [(1, 2), (2, 2), (3, 4), (7, 5)]:
            counts = tuple(float(c) for c in rng.integers(0, 50, size=rows * cols))
            model = build_grid(GridSpec(rows=rows, cols=cols, crime_counts=counts))
            assert validate(model).ok

    def test_bad_specs_rejected(self):
        with pytest.raises(ModelError):
            GridSpec(rows=1, cols=1, crime_counts=(1.0,))
        with pytest.raises(ModelError):
            GridSpec(rows=2, cols=2, crime_counts=(1.0, 2.0))
        with pytest.raises(ModelError):
            GridSpec(rows=1, cols=2, crime_counts=(1.0, 2.0), sensitive_ids=(5,))
        with pytest.raises(ModelError):
            GridSpec(rows=1, cols=2, crime_counts=(1.0, 2.0), move_success=0.0)


class TestRandomModels:
    def test_generated_models_validate(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            model = make_random_mdp(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
            assert validate(model).ok
            policy = make_random_policy(rng, model)
            assert validate_policy(model, policy) == []
