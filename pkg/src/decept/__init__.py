"""Deceptive resource allocation against boundedly rational adversaries.

The library designs per-state utility allocations that minimize an
adversary's accumulated reward in a finite-horizon MDP while capping the
probability that the adversary reaches sensitive states.  The adversary
misperceives probabilities and rewards (inverse-S weighting, concave value
distortion) and responds with a proportional stochastic policy; the design
problem is posed as a signomial program and solved by sequential
convexification into geometric programs handled by a log-domain barrier
solver.
"""

from .adversary import (
    Allocation,
    AdversaryProfile,
    defender_reward,
    derive_policy,
    expected_immediate_reward,
    perceived_expected_reward,
    perceived_reward,
    weight_probability,
)
from .errors import (
    DeceptError,
    DomainError,
    ExpressionError,
    InfeasibleRegionError,
    InstanceFormatError,
    ModelError,
    ProgramError,
    SolverError,
    UnavailableActionError,
    UnboundVariableError,
)
from .evaluation import (
    CostTable,
    McEstimate,
    ReachTable,
    cost_by_enumeration,
    expected_cost,
    monte_carlo,
    reach_by_enumeration,
    reach_probability,
)
from .expressions import (
    Assignment,
    Monomial,
    Posynomial,
    SignedMonomial,
    SignomialExpr,
    canonical_text,
    evaluate,
    gradient,
    monomial_approximation,
    parse_text,
    simplify,
)
from .instance import (
    Instance,
    build_model,
    build_profile,
    build_settings,
    load_bundled,
    load_instance,
    save_instance,
)
from .mdp import (
    GridSpec,
    MdpModel,
    Path,
    Policy,
    ValidationReport,
    build_grid,
    path_probability,
    validate,
)
from .program import (
    GpProblem,
    SpProblem,
    build_sp,
    condense,
    expansion_point,
    lint_gp,
    sp_residuals,
    trust_region,
)
from .scp import (
    IterationRecord,
    ScpSettings,
    SolveReport,
    brute_force_allocation,
    initial_point,
    normalize_allocation,
    render_report,
    run,
    save_report,
)
from .solver import (
    GpSolution,
    KktReport,
    SolveStatus,
    SolverSettings,
    kkt_report,
    solve,
    to_log_convex,
)

__version__ = "0.1.0"
