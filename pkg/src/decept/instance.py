"""Problem-instance files: schema decept-instance/1.

An instance bundles an environment (either a grid description or an explicit
MDP), the adversary's perception parameters, the allocation problem (horizon,
budget, reach cap), and optional driver/solver overrides.  Loading is strict:
unknown keys, missing keys, and out-of-range values all raise
InstanceFormatError naming the offending spot.  load -> save -> load is the
identity because loading canonicalizes ordering.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Dict, List, Optional, Tuple

import numpy as np

from .adversary import AdversaryProfile, DEFAULT_COEFFICIENT_FLOOR
from .errors import InstanceFormatError
from .mdp import GridSpec, MdpModel, build_grid, clean_row
from .scp import ScpSettings
from .solver import SolverSettings

INSTANCE_SCHEMA = "decept-instance/1"

_TOP_KEYS = {"schema", "name", "comment", "grid", "mdp", "adversary", "problem", "scp", "solver"}
_GRID_KEYS = {"rows", "cols", "crime_counts", "sensitive_ids", "move_success", "initial"}
_MDP_KEYS = {"n_states", "actions", "transitions", "initial", "sensitive_ids", "crime_counts"}
_ADVERSARY_KEYS = {"gamma", "alpha", "reward_exponent", "coefficient_floor"}
_PROBLEM_KEYS = {"horizon", "budget", "lambda"}
_SCP_KEYS = {
    "epsilon",
    "delta0",
    "mu_delta",
    "delta_max",
    "eta",
    "max_outer_iterations",
    "reach_floor",
    "feasibility_margin",
}
_SOLVER_KEYS = {"max_newton", "barrier_t0", "barrier_mu", "tol_primal", "tol_equality", "armijo", "backtrack"}


def _fail(message: str, path) -> None:
    raise InstanceFormatError(message, path=path)


def _check_mapping(value, context: str, allowed: set, required: set, path) -> dict:
    if not isinstance(value, dict):
        _fail(f"{context} must be an object, got {type(value).__name__}", path)
    unknown = set(value) - allowed
    if unknown:
        _fail(f"{context} has unknown keys: {sorted(unknown)}", path)
    missing = required - set(value)
    if missing:
        _fail(f"{context} is missing required keys: {sorted(missing)}", path)
    return value


def _number(value, context: str, path, minimum=None, maximum=None, strict_min=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"{context} must be a number, got {value!r}", path)
    v = float(value)
    if not math.isfinite(v):
        _fail(f"{context} must be finite, got {value!r}", path)
    if minimum is not None and (v <= minimum if strict_min else v < minimum):
        cmp = ">" if strict_min else ">="
        _fail(f"{context} must be {cmp} {minimum}, got {value!r}", path)
    if maximum is not None and v > maximum:
        _fail(f"{context} must be <= {maximum}, got {value!r}", path)
    return v


def _integer(value, context: str, path, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(f"{context} must be an integer, got {value!r}", path)
    if minimum is not None and value < minimum:
        _fail(f"{context} must be >= {minimum}, got {value!r}", path)
    return int(value)


@dataclass(frozen=True)
class ExplicitMdp:
    """Explicit transition list; canonical ordering by (from, action, to)."""

    n_states: int
    actions: Tuple[str, ...]
    transitions: Tuple[Tuple[int, str, int, float], ...]
    initial: Tuple[float, ...]
    sensitive_ids: Tuple[int, ...]
    crime_counts: Tuple[float, ...]


@dataclass(frozen=True)
class Instance:
    name: str
    grid: Optional[GridSpec]
    explicit: Optional[ExplicitMdp]
    gamma: float
    alpha: float
    reward_exponent: float
    coefficient_floor: float
    horizon: int
    budget: float
    lam: float
    scp_overrides: Tuple[Tuple[str, float], ...]
    solver_overrides: Tuple[Tuple[str, float], ...]
    comment: Optional[str] = None

    @property
    def n_states(self) -> int:
        return self.grid.n_states if self.grid is not None else self.explicit.n_states

    @property
    def crime_counts(self) -> Tuple[float, ...]:
        return self.grid.crime_counts if self.grid is not None else self.explicit.crime_counts


def _parse_grid(raw: dict, path) -> GridSpec:
    _check_mapping(raw, "grid", _GRID_KEYS, {"rows", "cols", "crime_counts"}, path)
    rows = _integer(raw["rows"], "grid.rows", path, minimum=1)
    cols = _integer(raw["cols"], "grid.cols", path, minimum=1)
    counts_raw = raw["crime_counts"]
    if not isinstance(counts_raw, list):
        _fail("grid.crime_counts must be a list", path)
    counts = []
    for i, c in enumerate(counts_raw):
        if isinstance(c, bool) or not isinstance(c, (int, float)) or float(c) < 0 or not float(c).is_integer():
            _fail(f"grid.crime_counts[{i}] must be a nonnegative integer, got {c!r}", path)
        counts.append(int(c))
    sensitive = raw.get("sensitive_ids", [])
    if not isinstance(sensitive, list):
        _fail("grid.sensitive_ids must be a list", path)
    sens = tuple(_integer(s, f"grid.sensitive_ids[{i}]", path, minimum=0) for i, s in enumerate(sensitive))
    move_success = _number(raw.get("move_success", 0.95), "grid.move_success", path, minimum=0.0, maximum=1.0, strict_min=True)
    initial = raw.get("initial", "uniform")
    if isinstance(initial, list):
        initial = tuple(
            _number(p, f"grid.initial[{i}]", path, minimum=0.0, maximum=1.0) for i, p in enumerate(initial)
        )
    elif initial != "uniform":
        _fail(f"grid.initial must be 'uniform' or a list, got {initial!r}", path)
    try:
        return GridSpec(
            rows=rows,
            cols=cols,
            crime_counts=tuple(counts),
            sensitive_ids=sens,
            move_success=move_success,
            initial=initial,
        )
    except Exception as exc:
        _fail(f"grid block invalid: {exc}", path)


def _parse_explicit(raw: dict, path) -> ExplicitMdp:
    _check_mapping(raw, "mdp", _MDP_KEYS, {"n_states", "actions", "transitions", "initial", "crime_counts"}, path)
    n = _integer(raw["n_states"], "mdp.n_states", path, minimum=1)
    actions_raw = raw["actions"]
    if (
        not isinstance(actions_raw, list)
        or not actions_raw
        or any(not isinstance(a, str) or not a for a in actions_raw)
    ):
        _fail("mdp.actions must be a nonempty list of nonempty strings", path)
    if len(set(actions_raw)) != len(actions_raw):
        _fail("mdp.actions contains duplicates", path)
    actions = tuple(actions_raw)
    trans_raw = raw["transitions"]
    if not isinstance(trans_raw, list) or not trans_raw:
        _fail("mdp.transitions must be a nonempty list", path)
    seen = set()
    entries: List[Tuple[int, str, int, float]] = []
    for i, rec in enumerate(trans_raw):
        rec = _check_mapping(rec, f"mdp.transitions[{i}]", {"from", "action", "to", "p"}, {"from", "action", "to", "p"}, path)
        s = _integer(rec["from"], f"mdp.transitions[{i}].from", path, minimum=0)
        a = rec["action"]
        if a not in actions:
            _fail(f"mdp.transitions[{i}].action {a!r} is not in mdp.actions", path)
        s2 = _integer(rec["to"], f"mdp.transitions[{i}].to", path, minimum=0)
        p = _number(rec["p"], f"mdp.transitions[{i}].p", path, minimum=0.0, maximum=1.0, strict_min=True)
        if s >= n or s2 >= n:
            _fail(f"mdp.transitions[{i}] references a state outside 0..{n - 1}", path)
        key = (s, a, s2)
        if key in seen:
            _fail(f"mdp.transitions[{i}] duplicates edge from={s} action={a!r} to={s2}", path)
        seen.add(key)
        entries.append((s, a, s2, p))
    entries.sort(key=lambda e: (e[0], actions.index(e[1]), e[2]))
    initial_raw = raw["initial"]
    if not isinstance(initial_raw, list) or len(initial_raw) != n:
        _fail(f"mdp.initial must be a list of {n} probabilities", path)
    initial = tuple(_number(p, f"mdp.initial[{i}]", path, minimum=0.0, maximum=1.0) for i, p in enumerate(initial_raw))
    sens_raw = raw.get("sensitive_ids", [])
    if not isinstance(sens_raw, list):
        _fail("mdp.sensitive_ids must be a list", path)
    sens = []
    for i, s in enumerate(sens_raw):
        s = _integer(s, f"mdp.sensitive_ids[{i}]", path, minimum=0)
        if s >= n:
            _fail(f"mdp.sensitive_ids[{i}] outside 0..{n - 1}", path)
        sens.append(s)
    counts_raw = raw["crime_counts"]
    if not isinstance(counts_raw, list) or len(counts_raw) != n:
        _fail(f"mdp.crime_counts must be a list of {n} numbers", path)
    counts = tuple(_number(c, f"mdp.crime_counts[{i}]", path, minimum=0.0) for i, c in enumerate(counts_raw))
    return ExplicitMdp(
        n_states=n,
        actions=actions,
        transitions=tuple(entries),
        initial=initial,
        sensitive_ids=tuple(sorted(set(sens))),
        crime_counts=counts,
    )


def _parse_overrides(raw, context: str, allowed: set, path) -> Tuple[Tuple[str, float], ...]:
    if raw is None:
        return ()
    _check_mapping(raw, context, allowed, set(), path)
    out = []
    for key in sorted(raw):
        if key == "max_outer_iterations" or key == "max_newton":
            out.append((key, float(_integer(raw[key], f"{context}.{key}", path, minimum=1))))
        else:
            out.append((key, _number(raw[key], f"{context}.{key}", path, minimum=0.0, strict_min=True)))
    return tuple(out)


def instance_from_dict(raw: dict, path=None) -> Instance:
    _check_mapping(raw, "instance", _TOP_KEYS, {"schema", "name", "adversary", "problem"}, path)
    if raw["schema"] != INSTANCE_SCHEMA:
        _fail(f"unsupported schema {raw['schema']!r} (expected {INSTANCE_SCHEMA!r})", path)
    name = raw["name"]
    if not isinstance(name, str) or not name:
        _fail("name must be a nonempty string", path)
    comment = raw.get("comment")
    if comment is not None and not isinstance(comment, str):
        _fail("comment must be a string", path)
    has_grid = "grid" in raw
    has_mdp = "mdp" in raw
    if has_grid == has_mdp:
        _fail("exactly one of 'grid' or 'mdp' must be present", path)
    grid = _parse_grid(raw["grid"], path) if has_grid else None
    explicit = _parse_explicit(raw["mdp"], path) if has_mdp else None
    n_states = grid.n_states if grid is not None else explicit.n_states

    adv = _check_mapping(raw["adversary"], "adversary", _ADVERSARY_KEYS, {"gamma", "alpha"}, path)
    gamma = _number(adv["gamma"], "adversary.gamma", path, minimum=0.0, maximum=1.0, strict_min=True)
    alpha = _number(adv["alpha"], "adversary.alpha", path, minimum=0.0, maximum=1.0, strict_min=True)
    reward_exponent = _number(adv.get("reward_exponent", -1.0), "adversary.reward_exponent", path)
    if reward_exponent == 0.0:
        _fail("adversary.reward_exponent must be nonzero", path)
    floor = _number(
        adv.get("coefficient_floor", DEFAULT_COEFFICIENT_FLOOR),
        "adversary.coefficient_floor",
        path,
        minimum=0.0,
        strict_min=True,
    )

    prob = _check_mapping(raw["problem"], "problem", _PROBLEM_KEYS, _PROBLEM_KEYS, path)
    horizon = _integer(prob["horizon"], "problem.horizon", path, minimum=0)
    budget = _number(prob["budget"], "problem.budget", path, minimum=0.0, strict_min=True)
    lam = _number(prob["lambda"], "problem.lambda", path, minimum=0.0, maximum=1.0, strict_min=True)

    scp_overrides = _parse_overrides(raw.get("scp"), "scp", _SCP_KEYS, path)
    solver_overrides = _parse_overrides(raw.get("solver"), "solver", _SOLVER_KEYS, path)

    sens = grid.sensitive_ids if grid is not None else explicit.sensitive_ids
    for s in sens:
        if s >= n_states:
            _fail(f"sensitive state {s} outside 0..{n_states - 1}", path)

    return Instance(
        name=name,
        grid=grid,
        explicit=explicit,
        gamma=gamma,
        alpha=alpha,
        reward_exponent=reward_exponent,
        coefficient_floor=floor,
        horizon=horizon,
        budget=budget,
        lam=lam,
        scp_overrides=scp_overrides,
        solver_overrides=solver_overrides,
        comment=comment,
    )


def instance_to_dict(instance: Instance) -> dict:
    out: dict = {"schema": INSTANCE_SCHEMA, "name": instance.name}
    if instance.comment is not None:
        out["comment"] = instance.comment
    if instance.grid is not None:
        g = instance.grid
        grid: dict = {
            "rows": g.rows,
            "cols": g.cols,
            "crime_counts": [int(c) for c in g.crime_counts],
            "sensitive_ids": list(g.sensitive_ids),
            "move_success": g.move_success,
        }
        grid["initial"] = "uniform" if isinstance(g.initial, str) else list(g.initial)
        out["grid"] = grid
    else:
        e = instance.explicit
        out["mdp"] = {
            "n_states": e.n_states,
            "actions": list(e.actions),
            "transitions": [
                {"from": s, "action": a, "to": s2, "p": p} for (s, a, s2, p) in e.transitions
            ],
            "initial": list(e.initial),
            "sensitive_ids": list(e.sensitive_ids),
            "crime_counts": list(e.crime_counts),
        }
    out["adversary"] = {
        "gamma": instance.gamma,
        "alpha": instance.alpha,
        "reward_exponent": instance.reward_exponent,
        "coefficient_floor": instance.coefficient_floor,
    }
    out["problem"] = {"horizon": instance.horizon, "budget": instance.budget, "lambda": instance.lam}
    if instance.scp_overrides:
        out["scp"] = {
            k: (int(v) if k == "max_outer_iterations" else v) for k, v in instance.scp_overrides
        }
    if instance.solver_overrides:
        out["solver"] = {k: (int(v) if k == "max_newton" else v) for k, v in instance.solver_overrides}
    return out


def load_instance(path) -> Instance:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        _fail("file not found", path)
    except json.JSONDecodeError as exc:
        _fail(f"not valid JSON ({exc})", path)
    return instance_from_dict(raw, path=path)


def save_instance(instance: Instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2, sort_keys=True)
        fh.write("\n")


def bundled_names() -> Tuple[str, ...]:
    root = resources.files("decept").joinpath("instances")
    return tuple(sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json")))


def load_bundled(name: str = "sf_synthetic") -> Instance:
    ref = resources.files("decept").joinpath("instances").joinpath(f"{name}.json")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        _fail(f"no bundled instance named {name!r} (have: {', '.join(bundled_names())})", f"bundled:{name}")
    return instance_from_dict(json.loads(text), path=f"bundled:{name}")


def build_model(instance: Instance) -> MdpModel:
    if instance.grid is not None:
        return build_grid(instance.grid)
    e = instance.explicit
    actions = e.actions
    rows: Dict[Tuple[int, int], Dict[int, float]] = {}
    for (s, a, s2, p) in e.transitions:
        rows.setdefault((s, actions.index(a)), {})[s2] = p
    transitions = {key: clean_row(row) for key, row in rows.items()}
    return MdpModel(
        n_states=e.n_states,
        actions=actions,
        transitions=transitions,
        initial=np.asarray(e.initial, dtype=float),
        sensitive=frozenset(e.sensitive_ids),
    )


def build_profile(instance: Instance) -> AdversaryProfile:
    return AdversaryProfile.from_crime_counts(
        counts=instance.crime_counts,
        gamma=instance.gamma,
        alpha=instance.alpha,
        reward_exponent=instance.reward_exponent,
        coefficient_floor=instance.coefficient_floor,
    )


def build_settings(instance: Instance) -> ScpSettings:
    """ScpSettings with the instance's scp/solver overrides applied."""
    solver_kwargs = {k: (int(v) if k == "max_newton" else v) for k, v in instance.solver_overrides}
    scp_kwargs = {k: (int(v) if k == "max_outer_iterations" else v) for k, v in instance.scp_overrides}
    solver = replace(SolverSettings(), **solver_kwargs)
    return replace(ScpSettings(solver=solver), **scp_kwargs)
