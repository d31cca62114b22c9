"""Command-line interface: artifacts, JSON output, exit codes."""

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from decept.adversary import Allocation
from decept.cli import main, read_allocation_csv, write_allocation_csv
from decept.instance import build_model, build_profile, load_bundled


def _copy_bundled(name: str, directory) -> Path:
    text = resources.files("decept.instances").joinpath(f"{name}.json").read_text()
    p = directory / f"{name}.json"
    p.write_text(text)
    return p


@pytest.fixture()
def chain3_path(tmp_path):
    """Copy of the bundled chain so tests exercise the --instance path."""
    return _copy_bundled("chain3", tmp_path)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    """One chain3 solve shared by the artifact tests."""
    out_dir = tmp_path_factory.mktemp("solve_out")
    inst = _copy_bundled("chain3", tmp_path_factory.mktemp("inst"))
    code = main(["solve", "--instance", str(inst), "--out-dir", str(out_dir)])
    return code, out_dir, inst


class TestSolve:
    def test_exit_zero_and_artifacts(self, solved):
        code, out_dir, _ = solved
        assert code == 0
        assert (out_dir / "report.json").exists()
        assert (out_dir / "allocation.csv").exists()
        assert (out_dir / "heatmap.csv").exists()

    def test_report_schema(self, solved):
        _, out_dir, _ = solved
        payload = json.loads((out_dir / "report.json").read_text())
        assert payload["schema"] == "decept-report/1"
        assert payload["final"]["converged"] is True
        assert payload["final"]["reach"] <= payload["problem"]["lambda"] + 1e-6
        assert_allclose(payload["cross_check"]["budget_sum"], payload["problem"]["budget"], atol=1e-6)

    def test_allocation_csv_columns_and_budget(self, solved):
        _, out_dir, _ = solved
        with open(out_dir / "allocation.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0].keys()) == ["state", "row", "col", "crime", "utility", "reward"]
        inst = load_bundled("chain3")
        total = sum(float(r["utility"]) for r in rows)
        assert_allclose(total, inst.budget, atol=1e-6)
        assert [int(r["state"]) for r in rows] == list(range(len(rows)))

    def test_heatmap_covers_grid(self, solved):
        _, out_dir, _ = solved
        with open(out_dir / "heatmap.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        inst = load_bundled("chain3")
        assert len(rows) == inst.grid.rows * inst.grid.cols
        assert set(rows[0].keys()) == {"row", "col", "log10_utility"}

    def test_unconverged_solve_exits_one(self, chain3_path, tmp_path, capsys):
        # An unreachable epsilon forces the iteration limit, which must not
        # masquerade as success.
        code = main(
            [
                "solve",
                "--instance",
                str(chain3_path),
                "--horizon",
                "2",
                "--epsilon",
                "1e-16",
                "--out-dir",
                str(tmp_path / "out"),
            ]
        )
        capsys.readouterr()
        assert code == 1


class TestEvaluateAndSimulate:
    def _write_uniform_allocation(self, path, instance):
        model = build_model(instance)
        profile = build_profile(instance)
        u = np.full(model.n_states, instance.budget / model.n_states)
        allocation = Allocation(u, instance.budget)
        from decept.adversary import state_rewards

        write_allocation_csv(path, instance, model, allocation, state_rewards(allocation, profile))

    def test_evaluate_reports_exact_numbers(self, chain3_path, tmp_path, capsys):
        instance = load_bundled("chain3")
        alloc_path = tmp_path / "alloc.csv"
        self._write_uniform_allocation(alloc_path, instance)
        code = main(["evaluate", "--instance", str(chain3_path), "--allocation", str(alloc_path)])
        out = capsys.readouterr().out
        assert code == 0
        doc = json.loads(out)
        assert doc["instance"] == "chain3"
        assert doc["q"] > 0
        assert 0.0 <= doc["reach"] <= 1.0
        assert len(doc["per_state"]) == instance.n_states

    def test_simulate_is_seeded_and_close(self, chain3_path, tmp_path, capsys):
        instance = load_bundled("chain3")
        alloc_path = tmp_path / "alloc.csv"
        self._write_uniform_allocation(alloc_path, instance)
        argv = [
            "simulate",
            "--instance",
            str(chain3_path),
            "--allocation",
            str(alloc_path),
            "--paths",
            "20000",
            "--seed",
            "7",
        ]
        assert main(argv) == 0
        first = json.loads(capsys.readouterr().out)
        assert main(argv) == 0
        second = json.loads(capsys.readouterr().out)
        assert first["q_estimate"] == second["q_estimate"]
        assert first["paths"] == 20000 and first["seed"] == 7
        assert first["q_abs_error"] <= 4.0 * first["q_stderr"] + 1e-12
        assert first["reach_abs_error"] <= 4.0 * first["reach_stderr"] + 1e-12

    def test_evaluate_rejects_mismatched_allocation(self, chain3_path, tmp_path, capsys):
        alloc_path = tmp_path / "short.csv"
        with open(alloc_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "utility"])
            writer.writerow([0, 5.0])
        code = main(["evaluate", "--instance", str(chain3_path), "--allocation", str(alloc_path)])
        err = capsys.readouterr().err
        assert code == 2
        assert "error:" in err


class TestValidate:
    def test_bundled_instance_validates(self, capsys):
        code = main(["validate"])
        doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert doc["ok"] is True
        assert doc["instance"] == "sf_synthetic"

    def test_bad_file_exits_two(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"schema": "decept-instance/1"}')
        code = main(["validate", "--instance", str(p)])
        err = capsys.readouterr().err
        assert code == 2
        assert "missing required" in err


class TestAllocationCsvRoundTrip:
    def test_write_read_identity(self, tmp_path):
        instance = load_bundled("chain3")
        model = build_model(instance)
        profile = build_profile(instance)
        rng = np.random.default_rng(3)
        u = rng.uniform(1.0, 5.0, size=model.n_states)
        u *= instance.budget / u.sum()
        allocation = Allocation(u, instance.budget)
        from decept.adversary import state_rewards

        path = tmp_path / "a.csv"
        write_allocation_csv(path, instance, model, allocation, state_rewards(allocation, profile))
        back = read_allocation_csv(path, instance.budget)
        assert_allclose(back.utilities, allocation.utilities, rtol=1e-10)

    def test_read_rejects_duplicate_and_gapped_states(self, tmp_path):
        from decept.errors import InstanceFormatError

        dup = tmp_path / "dup.csv"
        with open(dup, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "utility"])
            writer.writerow([0, 1.0])
            writer.writerow([0, 2.0])
        with pytest.raises(InstanceFormatError, match="duplicate"):
            read_allocation_csv(dup, 3.0)
        gap = tmp_path / "gap.csv"
        with open(gap, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "utility"])
            writer.writerow([0, 1.0])
            writer.writerow([2, 2.0])
        with pytest.raises(InstanceFormatError, match="0..n-1"):
            read_allocation_csv(gap, 3.0)
