"""Sequential convexification driver: trajectories, helpers, and reports."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from decept.adversary import AdversaryProfile, Allocation, derive_policy, state_rewards
from decept.errors import InfeasibleRegionError, ProgramError
from decept.evaluation import expected_cost, reach_probability
from decept.instance import build_model, build_profile, build_settings, load_bundled
from decept.mdp import MdpModel
from decept.program import build_sp, expansion_point
from decept.scp import (
    ScpSettings,
    brute_force_allocation,
    initial_point,
    interior_start,
    normalize_allocation,
    report_to_dict,
    run,
    save_report,
)


@pytest.fixture(scope="module")
def chain3_setup():
    instance = load_bundled("chain3")
    return instance, build_model(instance), build_profile(instance), build_settings(instance)


@pytest.fixture(scope="module")
def chain3_report(chain3_setup):
    instance, model, profile, settings = chain3_setup
    return run(model, profile, instance.horizon, instance.budget, instance.lam, settings)


def two_state_model() -> MdpModel:
    transitions = {
        (0, 0): {0: 0.7, 1: 0.3},
        (0, 1): {0: 0.2, 1: 0.8},
        (1, 0): {0: 0.5, 1: 0.5},
    }
    return MdpModel(
        n_states=2,
        actions=("stay", "move"),
        transitions=transitions,
        initial=np.array([0.8, 0.2]),
        sensitive=frozenset({1}),
    )


def swap_symmetric_model() -> MdpModel:
    """States 0 and 1 are interchangeable; state 2 is the sensitive sink."""
    transitions = {
        (0, 0): {0: 0.6, 1: 0.2, 2: 0.2},
        (1, 0): {0: 0.2, 1: 0.6, 2: 0.2},
        (2, 0): {2: 1.0},
    }
    return MdpModel(
        n_states=3,
        actions=("go",),
        transitions=transitions,
        initial=np.array([0.45, 0.45, 0.1]),
        sensitive=frozenset({2}),
    )


def small_profile(n_states: int) -> AdversaryProfile:
    return AdversaryProfile(
        gamma=0.6,
        alpha=0.88,
        reward_coefficients=np.ones(n_states),
        reward_exponent=1.0,
    )


class TestHelpers:
    def test_normalize_allocation_hits_budget(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            u = rng.uniform(0.1, 9.0, size=int(rng.integers(2, 8)))
            budget = float(rng.uniform(1.0, 50.0))
            allocation = normalize_allocation(u, budget)
            assert_allclose(allocation.utilities.sum(), budget, rtol=1e-12)
            ratios = allocation.utilities / u
            assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_normalize_allocation_rejects_bad_sums(self):
        with pytest.raises(ProgramError):
            normalize_allocation(np.array([1.0, -1.0]), 5.0)
        with pytest.raises(ProgramError):
            normalize_allocation(np.array([np.nan, 1.0]), 5.0)

    def test_initial_point_is_uniform(self, chain3_setup):
        instance, model, profile, _ = chain3_setup
        point = initial_point(model, profile, instance.budget, instance.horizon, instance.lam)
        share = instance.budget / model.n_states
        for s in range(model.n_states):
            assert_allclose(point[f"U_{s}"], share, rtol=1e-12)

    def test_interior_start_is_strictly_interior(self, chain3_setup):
        instance, model, profile, settings = chain3_setup
        u = np.full(model.n_states, instance.budget / model.n_states)
        point = expansion_point(
            model, profile, Allocation(u, instance.budget), instance.horizon, instance.lam
        )
        start = interior_start(point, instance.horizon, instance.lam, settings.feasibility_margin)
        sp = build_sp(model, profile, instance.horizon, instance.budget, instance.lam, delta=1.0)
        for ineq in sp.inequalities:
            assert ineq.lhs.value(start) < ineq.rhs.value(start)
        for eq in sp.equalities:
            assert_allclose(eq.lhs.value(start) / eq.rhs.value(start), 1.0, rtol=1e-9)

    def test_interior_start_zero_margin_is_identity(self, chain3_setup):
        instance, model, profile, _ = chain3_setup
        u = np.full(model.n_states, instance.budget / model.n_states)
        point = expansion_point(
            model, profile, Allocation(u, instance.budget), instance.horizon, instance.lam
        )
        assert interior_start(point, instance.horizon, instance.lam, 0.0) is point.assignment


class TestDriverOnBundledChain:
    def test_converges_with_improvement(self, chain3_setup, chain3_report):
        instance, *_ = chain3_setup
        report = chain3_report
        assert report.converged
        assert report.n_iterations <= 100
        assert report.final_q <= report.initial_q + 1e-9
        assert report.final_reach <= instance.lam + 1e-6

    def test_budget_preserved_exactly(self, chain3_setup, chain3_report):
        instance, *_ = chain3_setup
        total = float(chain3_report.final_allocation.utilities.sum())
        assert abs(total - instance.budget) <= 1e-6

    def test_every_subproblem_solved_to_optimality(self, chain3_report):
        for record in chain3_report.iterations:
            assert record.gp_status == "optimal"
            assert record.tau >= 1.0 - 1e-12
        # The convexified model drifts from the evaluator at full trust-region
        # steps; agreement is only promised once the steps have shrunk.
        assert chain3_report.iterations[-1].gp_vs_eval <= 1e-3

    def test_penalized_objective_monotone_while_delta_held(self, chain3_report):
        records = chain3_report.iterations
        for prev, nxt in zip(records, records[1:]):
            if prev.delta == nxt.delta:
                assert nxt.gp_objective <= prev.gp_objective * (1.0 + 1e-6)

    def test_final_policy_matches_derivation(self, chain3_setup, chain3_report):
        _, model, profile, _ = chain3_setup
        report = chain3_report
        derived = derive_policy(model, report.final_allocation, profile)
        for s, acts in model.action_table().items():
            for a in acts:
                assert_allclose(report.final_policy.prob(s, a), derived.prob(s, a), atol=1e-12)

    def test_reported_q_matches_evaluator(self, chain3_setup, chain3_report):
        instance, model, profile, _ = chain3_setup
        report = chain3_report
        rewards = state_rewards(report.final_allocation, profile)
        q = expected_cost(model, report.final_policy, rewards, instance.horizon).total
        assert_allclose(report.final_q, q, rtol=1e-9)
        reach = reach_probability(model, report.final_policy, instance.horizon).total
        assert_allclose(report.final_reach, reach, rtol=1e-9)


class TestSmallModels:
    def test_brute_force_respects_cap_and_orders_candidates(self):
        model = two_state_model()
        profile = small_profile(2)
        allocation, q = brute_force_allocation(model, profile, 3, 10.0, 0.5, resolution=0.1)
        assert_allclose(allocation.utilities.sum(), 10.0, rtol=1e-12)
        pt = expansion_point(model, profile, allocation, 3, 0.5)
        assert reach_probability(model, pt.policy, 3).total <= 0.5
        assert_allclose(pt.cost.total, q, rtol=1e-12)

    def test_brute_force_rejects_large_models(self):
        model = swap_symmetric_model()
        rng = np.random.default_rng(5)
        from conftest import make_random_mdp

        big = make_random_mdp(rng, 4, 2)
        with pytest.raises(ProgramError):
            brute_force_allocation(big, small_profile(4), 2, 4.0, 0.5)
        with pytest.raises(ProgramError):
            brute_force_allocation(model, small_profile(3), 2, 3.0, 0.5, resolution=0.5)

    def test_brute_force_reports_empty_feasible_region(self):
        model = two_state_model()
        with pytest.raises(InfeasibleRegionError):
            brute_force_allocation(model, small_profile(2), 3, 10.0, 1e-9)

    def test_scp_close_to_brute_force(self):
        model = two_state_model()
        profile = small_profile(2)
        horizon, budget, lam = 3, 10.0, 0.5
        best_alloc, best_q = brute_force_allocation(
            model, profile, horizon, budget, lam, resolution=0.02
        )
        report = run(model, profile, horizon, budget, lam, ScpSettings())
        assert report.converged
        assert report.final_q <= best_q * 1.05 + 1e-12

    def test_symmetric_model_gets_symmetric_allocation(self):
        model = swap_symmetric_model()
        profile = small_profile(3)
        report = run(model, profile, 3, 6.0, 0.9, ScpSettings())
        assert report.converged
        u = report.final_allocation.utilities
        assert abs(u[0] - u[1]) <= 1e-4


class TestReports:
    def test_dict_schema_and_roundtrip(self, chain3_report):
        payload = report_to_dict(chain3_report)
        assert payload["schema"] == "decept-report/1"
        assert payload["problem"]["budget"] == chain3_report.budget
        assert len(payload["iterations"]) == chain3_report.n_iterations
        text = json.dumps(payload)
        assert json.loads(text) == payload

    def test_timing_excluded_from_payload(self, chain3_report):
        payload = report_to_dict(chain3_report)
        assert "wall_time" not in json.dumps(payload)

    def test_rerun_yields_identical_payload(self, chain3_setup, chain3_report):
        instance, model, profile, settings = chain3_setup
        again = run(model, profile, instance.horizon, instance.budget, instance.lam, settings)
        assert report_to_dict(again) == report_to_dict(chain3_report)

    def test_save_report_bytes_stable(self, chain3_report, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_report(chain3_report, a)
        save_report(chain3_report, b)
        assert a.read_bytes() == b.read_bytes()
