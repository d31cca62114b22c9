"""Instance files: strict parsing, round-trips, and bundled problems."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from decept.errors import InstanceFormatError
from decept.instance import (
    Instance,
    build_model,
    build_profile,
    build_settings,
    bundled_names,
    instance_from_dict,
    instance_to_dict,
    load_bundled,
    load_instance,
    save_instance,
)
from decept.mdp import validate


def minimal_grid_dict() -> dict:
    return {
        "schema": "decept-instance/1",
        "name": "toy",
        "grid": {"rows": 1, "cols": 3, "crime_counts": [4, 7, 1]},
        "adversary": {"gamma": 0.6, "alpha": 0.88},
        "problem": {"horizon": 2, "budget": 6.0, "lambda": 0.5},
    }


def minimal_mdp_dict() -> dict:
    return {
        "schema": "decept-instance/1",
        "name": "pair",
        "mdp": {
            "n_states": 2,
            "actions": ["go"],
            "transitions": [
                {"from": 0, "action": "go", "to": 0, "p": 0.5},
                {"from": 0, "action": "go", "to": 1, "p": 0.5},
                {"from": 1, "action": "go", "to": 1, "p": 1.0},
            ],
            "initial": [1.0, 0.0],
            "sensitive_ids": [1],
            "crime_counts": [3.0, 5.0],
        },
        "adversary": {"gamma": 0.7, "alpha": 0.9},
        "problem": {"horizon": 3, "budget": 4.0, "lambda": 0.8},
    }


class TestParsing:
    def test_minimal_grid_instance(self):
        inst = instance_from_dict(minimal_grid_dict())
        assert inst.name == "toy"
        assert inst.grid is not None and inst.explicit is None
        assert inst.n_states == 3
        assert inst.crime_counts == (4, 7, 1)
        assert inst.reward_exponent == -1.0  # default

    def test_minimal_explicit_instance(self):
        inst = instance_from_dict(minimal_mdp_dict())
        assert inst.explicit is not None and inst.grid is None
        assert inst.explicit.sensitive_ids == (1,)

    def test_unknown_top_level_key(self):
        raw = minimal_grid_dict()
        raw["extra"] = 1
        with pytest.raises(InstanceFormatError, match="unknown keys.*extra"):
            instance_from_dict(raw)

    def test_missing_required_key(self):
        raw = minimal_grid_dict()
        del raw["problem"]
        with pytest.raises(InstanceFormatError, match="missing required"):
            instance_from_dict(raw)

    def test_wrong_schema(self):
        raw = minimal_grid_dict()
        raw["schema"] = "decept-instance/2"
        with pytest.raises(InstanceFormatError, match="unsupported schema"):
            instance_from_dict(raw)

    def test_grid_and_mdp_are_mutually_exclusive(self):
        raw = minimal_grid_dict()
        raw["mdp"] = minimal_mdp_dict()["mdp"]
        with pytest.raises(InstanceFormatError, match="exactly one"):
            instance_from_dict(raw)
        neither = minimal_grid_dict()
        del neither["grid"]
        with pytest.raises(InstanceFormatError, match="exactly one"):
            instance_from_dict(neither)

    @pytest.mark.parametrize(
        "mutate,fragment",
        [
            (lambda r: r["adversary"].__setitem__("gamma", 0.0), "gamma"),
            (lambda r: r["adversary"].__setitem__("gamma", 1.5), "gamma"),
            (lambda r: r["adversary"].__setitem__("alpha", -0.1), "alpha"),
            (lambda r: r["adversary"].__setitem__("reward_exponent", 0.0), "nonzero"),
            (lambda r: r["problem"].__setitem__("budget", 0.0), "budget"),
            (lambda r: r["problem"].__setitem__("lambda", 0.0), "lambda"),
            (lambda r: r["problem"].__setitem__("horizon", -1), "horizon"),
            (lambda r: r["grid"].__setitem__("crime_counts", [1, -2, 3]), "crime_counts"),
            (lambda r: r["grid"].__setitem__("crime_counts", [1.5, 2, 3]), "crime_counts"),
            (lambda r: r["grid"].__setitem__("move_success", 0.0), "move_success"),
            (lambda r: r["grid"].__setitem__("initial", "steady"), "initial"),
        ],
    )
    def test_out_of_range_values(self, mutate, fragment):
        raw = minimal_grid_dict()
        mutate(raw)
        with pytest.raises(InstanceFormatError, match=fragment):
            instance_from_dict(raw)

    def test_duplicate_transition_edge(self):
        raw = minimal_mdp_dict()
        raw["mdp"]["transitions"].append({"from": 0, "action": "go", "to": 1, "p": 0.25})
        with pytest.raises(InstanceFormatError, match="duplicates edge"):
            instance_from_dict(raw)

    def test_transition_referencing_missing_state(self):
        raw = minimal_mdp_dict()
        raw["mdp"]["transitions"][0]["to"] = 7
        with pytest.raises(InstanceFormatError, match="outside"):
            instance_from_dict(raw)

    def test_override_blocks_are_validated(self):
        raw = minimal_grid_dict()
        raw["scp"] = {"epsilon": 1e-5, "eta": 1.4}
        raw["solver"] = {"max_newton": 50}
        inst = instance_from_dict(raw)
        assert dict(inst.scp_overrides) == {"epsilon": 1e-5, "eta": 1.4}
        bad = minimal_grid_dict()
        bad["scp"] = {"step_size": 2.0}
        with pytest.raises(InstanceFormatError, match="unknown keys"):
            instance_from_dict(bad)
        bad2 = minimal_grid_dict()
        bad2["solver"] = {"max_newton": 0}
        with pytest.raises(InstanceFormatError):
            instance_from_dict(bad2)

    def test_error_carries_file_path(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(InstanceFormatError, match="broken.json"):
            load_instance(p)
        with pytest.raises(InstanceFormatError, match="not found"):
            load_instance(tmp_path / "absent.json")


class TestRoundTrip:
    @pytest.mark.parametrize("builder", [minimal_grid_dict, minimal_mdp_dict])
    def test_save_load_identity(self, builder, tmp_path):
        inst = instance_from_dict(builder())
        path = tmp_path / "inst.json"
        save_instance(inst, path)
        again = load_instance(path)
        assert instance_to_dict(again) == instance_to_dict(inst)
        assert again == inst

    def test_dict_export_is_loadable_json(self):
        payload = instance_to_dict(instance_from_dict(minimal_mdp_dict()))
        text = json.dumps(payload, sort_keys=True)
        assert instance_from_dict(json.loads(text)) is not None


class TestBundled:
    def test_names_include_shipped_instances(self):
        names = bundled_names()
        assert "sf_synthetic" in names
        assert "chain3" in names

    def test_unknown_bundled_name(self):
        with pytest.raises(InstanceFormatError, match="no bundled instance"):
            load_bundled("missing_city")

    @pytest.mark.parametrize("name", ["sf_synthetic", "chain3"])
    def test_bundled_instances_build_valid_models(self, name):
        inst = load_bundled(name)
        model = build_model(inst)
        assert validate(model).ok
        profile = build_profile(inst)
        assert profile.reward_coefficients.shape == (model.n_states,)
        assert np.all(profile.reward_coefficients > 0)
        settings = build_settings(inst)
        assert settings.epsilon > 0

    def test_default_bundled_is_city_grid(self):
        inst = load_bundled()
        assert inst.name == "sf_synthetic"
        assert inst.grid is not None
        assert (inst.grid.rows, inst.grid.cols) == (7, 5)
        assert inst.horizon == 20
        assert_allclose(inst.budget, 400.0)
        assert_allclose(inst.lam, 0.3)
        assert_allclose(inst.gamma, 0.6)
        assert_allclose(inst.alpha, 0.88)

    def test_overrides_flow_into_settings(self):
        inst = instance_from_dict(
            {**minimal_grid_dict(), "scp": {"max_outer_iterations": 7}, "solver": {"barrier_mu": 10.0}}
        )
        settings = build_settings(inst)
        assert settings.max_outer_iterations == 7
        assert settings.solver.barrier_mu == 10.0


class TestModelConstruction:
    def test_explicit_rows_normalized_and_validated(self):
        inst = instance_from_dict(minimal_mdp_dict())
        model = build_model(inst)
        assert validate(model).ok
        assert model.sensitive == frozenset({1})
        assert_allclose(model.initial, [1.0, 0.0])

    def test_profile_floor_applies_to_zero_counts(self):
        raw = minimal_grid_dict()
        raw["grid"]["crime_counts"] = [0, 7, 1]
        raw["adversary"]["coefficient_floor"] = 0.01
        inst = instance_from_dict(raw)
        profile = build_profile(inst)
        assert_allclose(profile.reward_coefficients[0], 0.01)
