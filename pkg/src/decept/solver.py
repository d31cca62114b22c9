"""Geometric-program solver: log-domain transform plus barrier Newton method.

A standard-form GP — posynomial objective f0, posynomial constraints g_i <= 1,
monomial equalities h_j = 1 over positive variables — becomes convex under
y = log x:

    minimize    lse_0(y)                 lse_i(y) = log sum_k exp(a_ik.y + log c_ik)
    subject to  lse_i(y) <= 0            i = 1..m
                A y = b                  one affine row per monomial equality.

Every log-sum-exp is evaluated with max-shift stabilization; condensed
programs carry coefficients spanning many orders of magnitude, so the shift
is load-bearing.  The solver follows the central path t <- mu_b * t, running
an equality-constrained Newton method per stage (KKT systems solved by block
elimination against a Cholesky factor of the Hessian), with a phase-1
slack-minimization problem when the supplied start violates an inequality.
All heavy per-iteration work is vectorized over a stacked sparse exponent
matrix shared by every constraint.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq, qr

from .errors import SolverError
from .expressions import Assignment, Monomial, Posynomial
from .program import ConstraintTag, GpProblem, lint_gp

NEWTON_DEC_TOL = 1e-13   # stop centering when (Newton decrement)^2 / 2 falls below this
STAGE_DEC_TOL = 1e-10    # accept a flat-lined stage at this decrement; surplus accuracy for the path
NEWTON_STALL_TOL = 1e-6  # a dead line search with (decrement)^2 / 2 below this counts as centered
MIN_STEP = 1e-18         # give up on a line search below this step length
MAX_PHASE1_STEP = 10.0   # cap on |dy| per phase-1 step; its objective is unbounded along feasible rays
ACTIVE_SLACK = 1e-5      # log-space slack below which a constraint counts as active for certificates
POLISH_LIMIT = 600       # skip the multiplier refit when the active set has more columns than this
REFINE_TOL = 1e-13       # stop iterative refinement at this relative KKT residual
DENSE_LIMIT = 4000       # Hessians above this dimension stay sparse and go through LU
EXTRAPOLATE_DEC2 = 0.25  # only extrapolate accepted full steps outside the quadratic region
Y_BOUND = 500.0         # |log x| beyond this means the problem is effectively unbounded
PHASE1_EXIT = -1e-6     # leave phase-1 as soon as constraints clear this margin
PHASE1_DECIDE = -1e-12  # slack needed at the end of phase-1 to declare feasibility


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


def _safe_exp(v: float) -> float:
    """exp that saturates instead of raising on diverged iterates."""
    return math.exp(v) if v < 700.0 else math.inf


@dataclass(frozen=True)
class SolverSettings:
    max_newton: int = 200       # Newton iterations allowed per centering stage
    barrier_t0: float = 1.0
    barrier_mu: float = 20.0
    tol_primal: float = 1e-8    # duality-gap target m / t
    tol_equality: float = 1e-8
    armijo: float = 0.01
    backtrack: float = 0.5


@dataclass(eq=False)
class _TermBlock:
    """Stacked exponent rows of one or more posynomials in log space."""

    E: sp.csr_matrix
    logc: np.ndarray
    starts: np.ndarray  # segment boundaries, len = n_segments + 1
    counts: np.ndarray  # terms per segment

    def lse(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-segment log-sum-exp values and softmax weights."""
        vals = self.E @ y + self.logc
        mx = np.maximum.reduceat(vals, self.starts[:-1])
        ex = np.exp(vals - np.repeat(mx, self.counts))
        sums = np.add.reduceat(ex, self.starts[:-1])
        return mx + np.log(sums), ex / np.repeat(sums, self.counts)

    def row_gradients(self, p: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix whose i-th row is the gradient of lse_i."""
        m = len(self.counts)
        sel = sp.csr_matrix((p, np.arange(len(p)), self.starts), shape=(m, self.E.shape[0]))
        return sel @ self.E


def _compile_block(posynomials: Sequence[Posynomial], index: Dict[str, int], n: int) -> _TermBlock:
    rows: List[int] = []
    cols: List[int] = []
    data: List[float] = []
    logc: List[float] = []
    starts = [0]
    term = 0
    for posy in posynomials:
        for mono in posy.terms:
            logc.append(math.log(mono.coefficient))
            for name, e in sorted(mono.exponents.items()):
                rows.append(term)
                cols.append(index[name])
                data.append(e)
            term += 1
        starts.append(term)
    E = sp.csr_matrix((data, (rows, cols)), shape=(term, n))
    starts_arr = np.asarray(starts, dtype=np.int64)
    return _TermBlock(E=E, logc=np.asarray(logc), starts=starts_arr, counts=np.diff(starts_arr))


@dataclass(eq=False)
class ConvexLogProblem:
    """Compiled log-domain form of a GP, ready for vectorized evaluation."""

    var_names: Tuple[str, ...]
    n: int
    objective: _TermBlock
    constraints: Optional[_TermBlock]
    m: int
    A: np.ndarray  # (p, n) full row rank after preprocessing
    b: np.ndarray
    inconsistent: bool
    dropped_equalities: int


def _reduce_equalities(A: np.ndarray, b: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray, bool, int]:
    """Drop linearly dependent equality rows; detect inconsistent systems."""
    p, n = A.shape
    if p == 0:
        return A, b, False, 0
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    if diag.size and diag[0] > 0:
        rank = int((diag > max(A.shape) * np.finfo(float).eps * diag[0]).sum())
    else:
        rank = 0
    keep = np.sort(piv[:rank])
    A_red, b_red = A[keep], b[keep]
    dropped = p - rank
    inconsistent = False
    if dropped:
        # Any solution of the kept rows must satisfy the dropped ones too.
        y_part, *_ = np.linalg.lstsq(A_red, b_red, rcond=None) if rank else (np.zeros(n),)
        resid = np.abs(A @ y_part - b).max()
        inconsistent = resid > tol * (1.0 + np.abs(b).max())
    return A_red, b_red, inconsistent, dropped


def to_log_convex(gp: GpProblem, tol_equality: float = 1e-8) -> ConvexLogProblem:
    """Compile a GP into stacked log-space blocks plus reduced affine equalities."""
    findings = lint_gp(gp)
    if findings:
        raise SolverError("GP failed lint: " + "; ".join(findings))
    names = gp.pool.names()
    index = {name: i for i, name in enumerate(names)}
    n = len(names)
    objective = _compile_block([gp.objective], index, n)
    constraints = _compile_block(gp.inequalities, index, n) if gp.inequalities else None
    p = len(gp.equalities)
    A = np.zeros((p, n))
    b = np.zeros(p)
    for j, mono in enumerate(gp.equalities):
        for name, e in mono.exponents.items():
            A[j, index[name]] = e
        b[j] = -math.log(mono.coefficient)
    A_red, b_red, inconsistent, dropped = _reduce_equalities(A, b, tol_equality)
    return ConvexLogProblem(
        var_names=names,
        n=n,
        objective=objective,
        constraints=constraints,
        m=len(gp.inequalities),
        A=A_red,
        b=b_red,
        inconsistent=inconsistent,
        dropped_equalities=dropped,
    )


def _row_scaled(E: sp.csr_matrix, w: np.ndarray) -> sp.csr_matrix:
    """diag(w) @ E without densifying."""
    out = E.copy()
    out.data *= np.repeat(w, np.diff(E.indptr))
    return out


def _kkt_step(H, A: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Solve the equality-constrained Newton system for one descent direction.

    Returns (direction, equality multipliers, squared Newton decrement).
    The system is Jacobi-equilibrated first: near the end of the barrier
    schedule the Hessian's diagonal spans ~t^2 orders of magnitude, and an
    unequilibrated solve loses the direction entirely.  Small systems go
    through dense Cholesky, large ones (sparse input) through sparse LU;
    singular matrices get an escalating ridge, and both paths finish with
    iterative refinement — the factor is reused, each pass costs two
    triangular solves, and late-stage barriers need the extra digits.
    """
    n = H.shape[0]
    sparse = sp.issparse(H)
    diag = (H.diagonal() if sparse else np.diag(H)).copy()
    floor = max(float(diag.max()), 1e-300) * 1e-16
    inv_scale = 1.0 / np.sqrt(np.maximum(diag, floor))
    if sparse:
        D = sp.diags(inv_scale)
        Hs = (D @ H @ D).tocsc()
    else:
        Hs = H * np.outer(inv_scale, inv_scale)
    gs = g * inv_scale
    finite = np.isfinite(Hs.data).all() if sparse else bool(np.isfinite(Hs).all())
    if not finite or not np.isfinite(gs).all():
        # A zero diagonal block overflowed the equilibration (0 * inf = nan):
        # there is no usable Newton model, so take a plain gradient step and
        # let the step/iteration caps decide whether the problem is unbounded.
        return -g, np.zeros(A.shape[0] if A.size else 0), float(g @ g)
    As = A * inv_scale[None, :] if A.size else A
    reg = 0.0
    solve_h = None
    Hreg = Hs
    for _ in range(8):
        if sparse:
            Hreg = (Hs + reg * sp.identity(n, format="csc")) if reg else Hs
            try:
                lu = spla.splu(Hreg)
                solve_h = lu.solve
                break
            except RuntimeError:
                reg = 1e-14 if reg == 0.0 else reg * 100.0
        else:
            Hreg = Hs + reg * np.eye(n) if reg else Hs
            try:
                factor = cho_factor(Hreg, lower=True, check_finite=False)
                solve_h = lambda B: cho_solve(factor, B, check_finite=False)  # noqa: E731
                break
            except LinAlgError:
                reg = 1e-14 if reg == 0.0 else reg * 100.0
    if solve_h is None:
        raise SolverError("Hessian could not be factorized even with regularization")
    gnorm = max(float(np.abs(gs).max()), 1e-300)
    if As.size:
        hi_a = solve_h(As.T)
        schur = As @ hi_a
        schur = 0.5 * (schur + schur.T)
        ds = np.zeros(n)
        w = np.zeros(As.shape[0])
        for k in range(3):
            r1 = Hreg @ ds + As.T @ w + gs
            r2 = As @ ds
            if k and max(float(np.abs(r1).max()), float(np.abs(r2).max())) <= REFINE_TOL * gnorm:
                break
            hi_r1 = solve_h(r1)
            try:
                dw = np.linalg.solve(schur, r2 - As @ hi_r1)
            except np.linalg.LinAlgError as exc:
                raise SolverError("equality Schur complement is singular") from exc
            ds = ds - (hi_r1 + hi_a @ dw)
            w = w + dw
    else:
        ds = np.zeros(n)
        for k in range(3):
            r1 = Hreg @ ds + gs
            if k and float(np.abs(r1).max()) <= REFINE_TOL * gnorm:
                break
            ds = ds - solve_h(r1)
        w = np.zeros(0)
    dec2 = float(-(gs @ ds))
    if not math.isfinite(dec2) or dec2 <= 0.0:
        # Falls back on the quadratic form when cancellation corrupts -g.d;
        # for an exact solve the two agree, and this one cannot go negative.
        dec2 = max(0.0, float(ds @ (Hs @ ds)))
    return ds * inv_scale, w, dec2


@dataclass
class StageTrace:
    t: float
    decrements: List[float] = field(default_factory=list)
    objective: float = float("nan")
    newton_steps: int = 0
    stalled: bool = False  # line search hit the numerical floor with a small decrement


@dataclass
class SolveTrace:
    stages: List[StageTrace] = field(default_factory=list)
    phase1_stages: List[StageTrace] = field(default_factory=list)
    phase1_used: bool = False

    @property
    def total_newton_steps(self) -> int:
        return sum(s.newton_steps for s in self.stages) + sum(s.newton_steps for s in self.phase1_stages)


@dataclass(frozen=True)
class KktReport:
    """First-order optimality residuals of a GP solution.

    Feasibility is measured in the original space (g_i(x) vs 1), stationarity
    and complementarity in the log domain where the problem is convex.
    """

    max_inequality_violation: float
    max_equality_violation: float
    stationarity: float
    complementarity: float

    def within(self, tol: float) -> bool:
        worst = max(
            self.max_inequality_violation,
            self.max_equality_violation,
            self.stationarity,
            self.complementarity,
        )
        return bool(worst <= tol)


@dataclass(eq=False)
class GpSolution:
    status: SolveStatus
    assignment: Optional[Assignment]
    objective: Optional[float]
    kkt: Optional[KktReport]
    trace: SolveTrace
    message: str = ""
    ineq_multipliers: Optional[np.ndarray] = None
    eq_multipliers: Optional[np.ndarray] = None
    barrier_t: Optional[float] = None

    def require(self, name: str) -> float:
        if self.assignment is None:
            raise SolverError("solution carries no assignment")
        return self.assignment[name]


def _barrier_value(prob: ConvexLogProblem, y: np.ndarray, t: float) -> Optional[float]:
    """t * f0 + barrier, or None when y is outside the inequality domain."""
    lse0, _ = prob.objective.lse(y)
    val = t * float(lse0[0])
    if prob.constraints is not None:
        f, _ = prob.constraints.lse(y)
        if float(f.max()) >= 0.0:
            return None
        val -= float(np.log(-f).sum())
    return val


def _barrier_grad_hess(prob: ConvexLogProblem, y: np.ndarray, t: float):
    """Gradient, dense Hessian, constraint values, and objective value at y."""
    lse0, p0 = prob.objective.lse(y)
    e0 = prob.objective.E
    g0 = np.asarray(e0.T @ p0).ravel()
    grad = t * g0
    h_sparse = e0.T @ _row_scaled(e0, t * p0)
    f = None
    if prob.constraints is not None:
        block = prob.constraints
        f, p = block.lse(y)
        if float(f.max()) >= 0.0:
            raise SolverError("barrier evaluated at an infeasible point")
        w1 = 1.0 / (-f)
        seg_w1 = np.repeat(w1, block.counts)
        grad = grad + np.asarray(block.E.T @ (p * seg_w1)).ravel()
        g_rows = block.row_gradients(p)
        h_sparse = h_sparse + block.E.T @ _row_scaled(block.E, p * seg_w1)
        h_sparse = h_sparse + g_rows.T @ _row_scaled(g_rows, w1 * w1 - w1)
    support = np.flatnonzero(g0)
    if prob.n > DENSE_LIMIT:
        # Keep the Hessian sparse; the rank-one objective term only touches
        # the objective's variable support, which is small for these programs.
        hess = h_sparse.tocsr()
        if support.size:
            outer = t * np.outer(g0[support], g0[support])
            rank1 = sp.csr_matrix(
                (outer.ravel(), (np.repeat(support, support.size), np.tile(support, support.size))),
                shape=(prob.n, prob.n),
            )
            hess = (hess - rank1).tocsr()
    else:
        hess = h_sparse.toarray()
        if support.size:
            hess[np.ix_(support, support)] -= t * np.outer(g0[support], g0[support])
    return grad, hess, f, float(lse0[0])


def _center(
    prob: ConvexLogProblem,
    y: np.ndarray,
    t: float,
    settings: SolverSettings,
    stage: StageTrace,
    project,
    tangent,
) -> Tuple[np.ndarray, bool]:
    """Newton iterations for one barrier stage; returns (y, ok).

    Search directions are forced onto the equality tangent space and
    accepted steps re-projected onto the affine manifold, so roundoff never
    accumulates across stages and the line search only ever measures
    progress the projection will keep.
    """
    best_dec2 = math.inf
    no_progress = 0
    for _ in range(settings.max_newton):
        grad, hess, f, lse0 = _barrier_grad_hess(prob, y, t)
        d, _, dec2 = _kkt_step(hess, prob.A, grad)
        if prob.A.size:
            d = tangent(d)
            dec2 = float(-(grad @ d))
            if not math.isfinite(dec2) or dec2 <= 0.0:
                dec2 = max(0.0, float(d @ (hess @ d)))
        stage.decrements.append(math.sqrt(dec2))
        if dec2 / 2.0 <= NEWTON_DEC_TOL:
            stage.objective = _safe_exp(lse0)
            return y, True
        # Late barrier stages can grind: the decrement bottoms out above the
        # strict gate because the KKT solve has no digits left.  Flattened
        # progress at a microscopic decrement is already far tighter centering
        # than the next stage needs, so take the point; flattened progress at
        # a merely small decrement is the numerical floor.
        if dec2 >= 0.97 * best_dec2:
            no_progress += 1
            if no_progress >= 2 and dec2 / 2.0 <= STAGE_DEC_TOL:
                stage.objective = _safe_exp(lse0)
                return y, True
            if no_progress >= 6 and dec2 / 2.0 <= NEWTON_STALL_TOL:
                stage.objective = _safe_exp(lse0)
                stage.stalled = True
                return y, True
        else:
            no_progress = 0
        best_dec2 = min(best_dec2, dec2)
        phi0 = t * lse0 - (float(np.log(-f).sum()) if f is not None else 0.0)
        slope = -dec2  # directional derivative of the barrier along the KKT direction
        step = 1.0
        stalled = False
        while True:
            cand = y + step * d
            phi_c = _barrier_value(prob, cand, t)
            if phi_c is not None and phi_c <= phi0 + settings.armijo * step * slope:
                break
            step *= settings.backtrack
            if step < MIN_STEP:
                stalled = True
                break
        if not stalled and step == 1.0 and dec2 > EXTRAPOLATE_DEC2:
            # A trivially accepted full step far from the center usually means
            # a long, nearly flat valley (near-null Hessian direction).  Unit
            # steps would inch along it; doubling while the sufficient-decrease
            # test keeps passing crosses it in logarithmically many moves.
            while step < 1e6:
                trial = step * 2.0
                cand_t = y + trial * d
                phi_t = _barrier_value(prob, cand_t, t)
                if phi_t is not None and phi_t <= phi0 + settings.armijo * trial * slope:
                    step, cand = trial, cand_t
                else:
                    break
        if stalled:
            # No representable step improves the barrier.  Close to the
            # central path that is the numerical floor, not a failure.
            stage.objective = _safe_exp(lse0)
            stage.stalled = True
            return y, dec2 / 2.0 <= NEWTON_STALL_TOL
        y = project(cand)
        stage.newton_steps += 1
        if float(np.abs(y).max()) > Y_BOUND:
            stage.objective = _safe_exp(lse0)
            return y, False
    grad, hess, _, lse0 = _barrier_grad_hess(prob, y, t)
    d, _, dec2 = _kkt_step(hess, prob.A, grad)
    if prob.A.size:
        d = tangent(d)
        dec2 = float(-(grad @ d))
        if not math.isfinite(dec2) or dec2 <= 0.0:
            dec2 = max(0.0, float(d @ (hess @ d)))
    stage.decrements.append(math.sqrt(dec2))
    stage.objective = _safe_exp(lse0)
    if dec2 / 2.0 <= NEWTON_STALL_TOL:
        stage.stalled = True
        return y, True
    return y, False


def _phase1(
    prob: ConvexLogProblem, y: np.ndarray, settings: SolverSettings, trace: SolveTrace, project, tangent
) -> Tuple[np.ndarray, str]:
    """Minimize the worst constraint slack to find a strictly feasible point.

    Works on the augmented variable (y, s) with constraints lse_i(y) <= s and
    exits early once every constraint clears a small negative margin.
    Returns (y, verdict) with verdict in {"feasible", "infeasible", "stuck"}.
    """
    block = prob.constraints
    assert block is not None
    f, _ = block.lse(y)
    s = float(f.max()) + 1.0
    p_eq = prob.A.shape[0]
    a_aug = np.hstack([prob.A, np.zeros((p_eq, 1))]) if p_eq else np.zeros((0, prob.n + 1))
    t = 1.0
    while True:
        stage = StageTrace(t=t)
        trace.phase1_stages.append(stage)
        for _ in range(settings.max_newton):
            f, p = block.lse(y)
            if float(f.max()) < PHASE1_EXIT:
                return y, "feasible"
            slack = s - f
            if float(slack.min()) <= 0.0:
                s = float(f.max()) + 1.0
                slack = s - f
            w1 = 1.0 / slack
            w2 = w1 * w1
            seg_w1 = np.repeat(w1, block.counts)
            g_rows = block.row_gradients(p)
            grad_y = np.asarray(block.E.T @ (p * seg_w1)).ravel()
            grad = np.concatenate([grad_y, [t - float(w1.sum())]])
            h_yy = block.E.T @ _row_scaled(block.E, p * seg_w1) + g_rows.T @ _row_scaled(g_rows, w2 - w1)
            h_yy = h_yy.toarray()
            h_ys = -np.asarray(g_rows.T @ w2).ravel()
            hess = np.zeros((prob.n + 1, prob.n + 1))
            hess[: prob.n, : prob.n] = h_yy
            hess[: prob.n, prob.n] = h_ys
            hess[prob.n, : prob.n] = h_ys
            hess[prob.n, prob.n] = float(w2.sum())
            d, _, dec2 = _kkt_step(hess, a_aug, grad)
            if p_eq:
                d[: prob.n] = tangent(d[: prob.n])
                dec2 = float(-(grad @ d))
                if not math.isfinite(dec2) or dec2 <= 0.0:
                    dec2 = max(0.0, float(d @ (hess @ d)))
            stage.decrements.append(math.sqrt(dec2))
            if dec2 / 2.0 <= NEWTON_DEC_TOL:
                break
            psi0 = t * s - float(np.log(slack).sum())
            slope = -dec2
            # The phase-1 objective decreases forever along any strictly
            # feasible ray; an uncapped Newton step can jump to astronomically
            # deep (useless) interior points in one move.
            d_inf = float(np.abs(d).max())
            step = min(1.0, MAX_PHASE1_STEP / max(d_inf, 1e-300))
            while True:
                y_c = y + step * d[: prob.n]
                s_c = s + step * d[prob.n]
                f_c, _ = block.lse(y_c)
                ok = float((s_c - f_c).min()) > 0.0
                if ok and t * s_c - float(np.log(s_c - f_c).sum()) <= psi0 + settings.armijo * step * slope:
                    break
                step *= settings.backtrack
                if step < MIN_STEP:
                    return y, "stuck"
            y, s = project(y_c), s_c
            stage.newton_steps += 1
        else:
            return y, "stuck"
        f, _ = block.lse(y)
        if float(f.max()) < PHASE1_EXIT:
            return y, "feasible"
        if block.counts.size / t <= settings.tol_primal:
            # Central path exhausted: optimal slack is (numerically) nonnegative.
            return (y, "feasible") if float(f.max()) < PHASE1_DECIDE else (y, "infeasible")
        t *= settings.barrier_mu


def _make_projector(prob: ConvexLogProblem):
    """Correctors for the equality manifold {y : A y = b}.

    Returns (project, tangent): project moves a point onto the manifold by
    the least-norm correction, tangent removes a direction's normal
    component.  Keeping search directions exactly tangent matters: the
    barrier never sees the equalities, so an off-manifold direction
    component — roundoff from the block solve, amplified by the barrier
    parameter through the objective gradient — can fake a large decrement
    and unlimited line-search "progress" that the per-step projection then
    silently undoes.  Both are identities when there are no equalities.
    """
    if not prob.A.size:
        return (lambda y: y), (lambda d: d)
    try:
        factor = cho_factor(prob.A @ prob.A.T, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SolverError("equality projection failed on a rank-deficient system") from exc

    def project(y: np.ndarray) -> np.ndarray:
        return y + prob.A.T @ cho_solve(factor, prob.b - prob.A @ y, check_finite=False)

    def tangent(d: np.ndarray) -> np.ndarray:
        return d - prob.A.T @ cho_solve(factor, prob.A @ d, check_finite=False)

    return project, tangent


def _stationarity_residual(
    prob: ConvexLogProblem, y: np.ndarray, lam: Optional[np.ndarray], nu: Optional[np.ndarray]
) -> float:
    """Max-norm of the Lagrangian gradient at y for a candidate multiplier pair."""
    _, p0 = prob.objective.lse(y)
    r = np.asarray(prob.objective.E.T @ p0).ravel()
    if lam is not None and prob.constraints is not None:
        _, p = prob.constraints.lse(y)
        r = r + np.asarray(prob.constraints.row_gradients(p).T @ lam).ravel()
    if nu is not None and prob.A.size:
        r = r + prob.A.T @ nu
    return float(np.abs(r).max())


def _polish_multipliers(
    prob: ConvexLogProblem, y: np.ndarray, f: np.ndarray, lam: np.ndarray
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Refit the multipliers of near-active constraints by least squares.

    The barrier formula lambda_i = 1/(t (-f_i)) inherits whatever centering
    error the last stage left behind.  Holding the (provably tiny) inactive
    multipliers fixed and refitting the active block can only sharpen the
    certificate; it never touches the solution itself.  The sign constraint
    lambda >= 0 is enforced by dropping negative components and refitting —
    a few passes settle it because active multipliers are generically
    positive.  Oversized active sets are skipped: the refit would dwarf the
    solve, and the programs that need sharp certificates are the small ones.
    """
    active = np.flatnonzero(-f <= ACTIVE_SLACK)
    p_eq = prob.A.shape[0] if prob.A.size else 0
    if not active.size or active.size + p_eq > POLISH_LIMIT:
        return None
    _, p0 = prob.objective.lse(y)
    g0 = np.asarray(prob.objective.E.T @ p0).ravel()
    _, p = prob.constraints.lse(y)
    g_rows = prob.constraints.row_gradients(p)
    lam_inactive = lam.copy()
    lam_inactive[active] = 0.0
    target = -(g0 + np.asarray(g_rows.T @ lam_inactive).ravel())
    g_active = np.asarray(g_rows[active].todense()).T
    a_t = prob.A.T if p_eq else np.zeros((prob.n, 0))
    keep = np.ones(active.size, dtype=bool)
    lam_fit = np.zeros(0)
    for _ in range(4):
        n_keep = int(keep.sum())
        cols = np.hstack([g_active[:, keep], a_t])
        if not cols.shape[1]:
            return None
        fit, *_ = lstsq(cols, target, lapack_driver="gelsy", check_finite=False)
        lam_fit = fit[:n_keep]
        if not lam_fit.size or float(lam_fit.min()) >= 0.0:
            break
        keep[np.flatnonzero(keep)[lam_fit < 0.0]] = False
    else:
        return None
    lam_new = lam_inactive
    lam_active = np.zeros(active.size)
    lam_active[keep] = np.maximum(lam_fit, 0.0)
    lam_new[active] = lam_active
    nu_new = fit[len(lam_fit) :] if p_eq else np.zeros(0)
    return lam_new, nu_new


def _fit_eq_multipliers(prob: ConvexLogProblem, y: np.ndarray, lam: Optional[np.ndarray]) -> np.ndarray:
    """Least-squares equality multipliers for the stationarity certificate.

    The barrier's own equality multipliers degrade with the squared barrier
    parameter through the Hessian's conditioning; refitting them at the final
    point against the (accurately computable) inequality multipliers gives
    the sharpest certificate this point supports.
    """
    if not prob.A.size:
        return np.zeros(0)
    _, p0 = prob.objective.lse(y)
    resid = np.asarray(prob.objective.E.T @ p0).ravel()
    if lam is not None and prob.constraints is not None:
        _, p = prob.constraints.lse(y)
        resid = resid + np.asarray(prob.constraints.row_gradients(p).T @ lam).ravel()
    nu, *_ = lstsq(prob.A.T, -resid, lapack_driver="gelsy", check_finite=False)
    return nu


def _kkt_from_state(
    gp: GpProblem,
    prob: ConvexLogProblem,
    y: np.ndarray,
    lam: Optional[np.ndarray],
    nu: Optional[np.ndarray],
) -> KktReport:
    # Clip so runaway iterates (flagged via status) still yield a finite,
    # honestly-bad report instead of an exp underflow to zero.
    x = np.exp(np.clip(y, -700.0, 700.0))
    point = Assignment(dict(zip(prob.var_names, x)))
    ineq_violation = 0.0
    f = None
    if prob.constraints is not None:
        f, _ = prob.constraints.lse(y)
        ineq_violation = max(0.0, float(np.exp(f).max()) - 1.0)
    eq_violation = 0.0
    for mono in gp.equalities:
        eq_violation = max(eq_violation, abs(mono.value(point) - 1.0))
    stationarity = float("nan")
    complementarity = float("nan") if prob.m else 0.0
    if lam is not None and f is not None:
        _, p0 = prob.objective.lse(y)
        g0 = np.asarray(prob.objective.E.T @ p0).ravel()
        f_, p = prob.constraints.lse(y)
        g_rows = prob.constraints.row_gradients(p)
        resid = g0 + np.asarray(g_rows.T @ lam).ravel()
        if nu is not None and prob.A.size:
            resid = resid + prob.A.T @ nu
        stationarity = float(np.abs(resid).max())
        complementarity = float(np.abs(lam * f_).max()) if lam.size else 0.0
    elif lam is None and prob.m == 0:
        _, p0 = prob.objective.lse(y)
        g0 = np.asarray(prob.objective.E.T @ p0).ravel()
        resid = g0.copy()
        if nu is not None and prob.A.size:
            resid = resid + prob.A.T @ nu
        stationarity = float(np.abs(resid).max())
    return KktReport(
        max_inequality_violation=ineq_violation,
        max_equality_violation=eq_violation,
        stationarity=stationarity,
        complementarity=complementarity,
    )


def solve(gp: GpProblem, start: Assignment, settings: Optional[SolverSettings] = None) -> GpSolution:
    """Solve a standard-form GP from a positive starting assignment.

    The start must bind every variable; it need not be feasible (phase-1 runs
    when it violates an inequality).  Returns Optimal with KKT residuals and
    multipliers, Infeasible when phase-1 certifies there is no strictly
    feasible point within tolerance, or MaxIterations when iteration limits
    or numerical stagnation stop progress first.
    """
    settings = settings or SolverSettings()
    prob = to_log_convex(gp, tol_equality=settings.tol_equality)
    trace = SolveTrace()
    if prob.inconsistent:
        return GpSolution(
            status=SolveStatus.INFEASIBLE,
            assignment=None,
            objective=None,
            kkt=None,
            trace=trace,
            message="monomial equality constraints are mutually inconsistent",
        )
    y = np.array([math.log(start[name]) for name in prob.var_names])
    project, tangent = _make_projector(prob)
    y = project(y)

    if prob.constraints is not None:
        f, _ = prob.constraints.lse(y)
        if float(f.max()) >= 0.0:
            trace.phase1_used = True
            y, verdict = _phase1(prob, y, settings, trace, project, tangent)
            if verdict == "infeasible":
                return GpSolution(
                    status=SolveStatus.INFEASIBLE,
                    assignment=None,
                    objective=None,
                    kkt=None,
                    trace=trace,
                    message="phase-1 found no strictly feasible point within tolerance",
                )
            if verdict == "stuck":
                return GpSolution(
                    status=SolveStatus.MAX_ITERATIONS,
                    assignment=None,
                    objective=None,
                    kkt=None,
                    trace=trace,
                    message="phase-1 stalled before reaching the feasible region",
                )

    t = settings.barrier_t0
    status = SolveStatus.OPTIMAL
    message = ""
    while True:
        stage = StageTrace(t=t)
        trace.stages.append(stage)
        y, ok = _center(prob, y, t, settings, stage, project, tangent)
        if not ok:
            status = SolveStatus.MAX_ITERATIONS
            message = f"centering at t={t:g} did not converge within limits"
            break
        if prob.m == 0 or prob.m / t <= settings.tol_primal:
            break
        t *= settings.barrier_mu
    n_stalled = sum(1 for s in trace.stages if s.stalled)
    if status is SolveStatus.OPTIMAL and n_stalled:
        message = f"{n_stalled} centering stage(s) stopped at the line-search floor"

    x = np.exp(np.clip(y, -700.0, 700.0))
    assignment = Assignment(dict(zip(prob.var_names, x)))
    lse0, _ = prob.objective.lse(y)
    objective = _safe_exp(float(lse0[0]))
    lam = None
    if prob.constraints is not None:
        f, _ = prob.constraints.lse(y)
        lam = 1.0 / (t * (-f)) if float(f.max()) < 0 else None
    nu = _fit_eq_multipliers(prob, y, lam)
    if lam is not None:
        polished = _polish_multipliers(prob, y, f, lam)
        if polished is not None and _stationarity_residual(
            prob, y, *polished
        ) < _stationarity_residual(prob, y, lam, nu):
            lam, nu = polished
    kkt = _kkt_from_state(gp, prob, y, lam, nu)
    return GpSolution(
        status=status,
        assignment=assignment,
        objective=objective,
        kkt=kkt,
        trace=trace,
        message=message,
        ineq_multipliers=lam,
        eq_multipliers=nu,
        barrier_t=t,
    )


def kkt_report(gp: GpProblem, solution: GpSolution) -> KktReport:
    """Recompute optimality residuals for a solution of this GP.

    Uses the solution's stored multipliers when present; otherwise fits
    nonnegative inequality multipliers by bounded least squares (small
    problems only — stationarity is NaN past that size).
    """
    if solution.assignment is None:
        raise SolverError("solution carries no assignment to check")
    prob = to_log_convex(gp)
    y = np.array([math.log(solution.assignment[name]) for name in prob.var_names])
    lam = solution.ineq_multipliers
    nu = solution.eq_multipliers
    if lam is None and prob.m and prob.m + prob.A.shape[0] <= 4000:
        from scipy.optimize import lsq_linear

        _, p0 = prob.objective.lse(y)
        g0 = np.asarray(prob.objective.E.T @ p0).ravel()
        f, p = prob.constraints.lse(y)
        g_rows = np.asarray(prob.constraints.row_gradients(p).todense())
        columns = [g_rows.T]
        lower = [np.zeros(prob.m)]
        upper = [np.full(prob.m, np.inf)]
        if prob.A.size:
            columns.append(prob.A.T)
            lower.append(np.full(prob.A.shape[0], -np.inf))
            upper.append(np.full(prob.A.shape[0], np.inf))
        design = np.hstack(columns)
        fit = lsq_linear(design, -g0, bounds=(np.concatenate(lower), np.concatenate(upper)))
        lam = fit.x[: prob.m]
        nu = fit.x[prob.m :] if prob.A.size else np.zeros(0)
    return _kkt_from_state(gp, prob, y, lam, nu)
