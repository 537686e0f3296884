"""Log-barrier interior-point solver for smooth convex programs.

Solves min c.x subject to g_i(x) <= 0 and box bounds, where every g_i is
convex and twice differentiable on the box interior and a strictly feasible
start point is supplied. Path following: for increasing kappa, minimize
kappa*c.x - sum(log(-g_i(x))) by damped Newton with backtracking line search,
until the duality-gap bound m/kappa drops below the KKT tolerance. Dual
multipliers fall out of the barrier as lambda_i = 1/(kappa*(-g_i)).

Dense linear algebra throughout; problem sizes here are a few hundred
variables at most, and determinism matters more than sparsity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "Constraint",
    "LinearConstraint",
    "NlpProblem",
    "NlpSolution",
    "KktReport",
    "SolverError",
    "solve",
    "check_kkt",
]


class SolverError(RuntimeError):
    def __init__(self, message: str, status: str = "error"):
        super().__init__(message)
        self.status = status


class Constraint:
    """Smooth convex inequality g(x) <= 0 touching a small set of variables.

    Subclasses fill ``indices`` and implement ``value_local`` and
    ``derivs_local`` on the local slice x[indices]. ``derivs_local`` may
    return None for the Hessian when it is identically zero.
    """

    tag: str = "constraint"
    indices: np.ndarray

    def value_local(self, xloc: np.ndarray) -> float:
        raise NotImplementedError

    def derivs_local(self, xloc: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return self.value_local(x[self.indices])

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(len(x))
        gl, _ = self.derivs_local(x[self.indices])
        g[self.indices] = gl
        return g

    def hess(self, x: np.ndarray) -> np.ndarray:
        h = np.zeros((len(x), len(x)))
        _, hl = self.derivs_local(x[self.indices])
        if hl is not None:
            h[np.ix_(self.indices, self.indices)] = hl
        return h


class LinearConstraint(Constraint):
    """a.x + b <= 0 on the touched indices."""

    def __init__(self, indices, coeffs, offset: float, tag: str = "linear"):
        self.indices = np.asarray(indices, dtype=int)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.offset = float(offset)
        self.tag = tag

    def value_local(self, xloc):
        return float(self.coeffs @ xloc + self.offset)

    def derivs_local(self, xloc):
        return self.coeffs, None


@dataclass
class NlpProblem:
    """Affine objective c.x + obj_const over a convex inequality system.

    ``blocks`` optionally lists disjoint variable groups such that every
    constraint touches a single group; the solver then factors the problem
    into independent subproblems (the barrier Hessian is block diagonal and
    line searches decouple).
    """

    n: int
    c: np.ndarray
    constraints: list
    lb: np.ndarray
    ub: np.ndarray
    x0: np.ndarray
    obj_const: float = 0.0
    var_scale: np.ndarray | None = None
    blocks: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.var_scale is None:
            self.var_scale = np.ones(self.n)
        self.var_scale = np.asarray(self.var_scale, dtype=float)
        for name, arr in (("c", self.c), ("lb", self.lb), ("ub", self.ub),
                          ("x0", self.x0), ("var_scale", self.var_scale)):
            if arr.shape != (self.n,):
                raise ValueError(f"{name} must have shape ({self.n},)")
        if np.any(self.var_scale <= 0):
            raise ValueError("var_scale entries must be positive")

    def all_constraints(self) -> list:
        """User constraints followed by materialized finite box rows."""
        rows = list(self.constraints)
        for j in range(self.n):
            if np.isfinite(self.lb[j]):
                rows.append(LinearConstraint([j], [-1.0], self.lb[j], tag=f"lb[{j}]"))
        for j in range(self.n):
            if np.isfinite(self.ub[j]):
                rows.append(LinearConstraint([j], [1.0], -self.ub[j], tag=f"ub[{j}]"))
        return rows


@dataclass
class KktReport:
    """Raw first-order residuals plus the objective scale they are judged
    against: stationarity and complementarity carry the objective's units,
    so a pass means residual <= tol * max(1, ||c||_inf)."""

    stationarity: float
    feasibility: float
    complementarity: float
    tol: float
    objective_scale: float = 1.0

    @property
    def ok(self) -> bool:
        budget = self.tol * self.objective_scale
        return (
            self.stationarity <= budget
            and self.complementarity <= budget
            and self.feasibility <= self.tol
        )

    @property
    def max_residual(self) -> float:
        return max(
            self.stationarity / self.objective_scale,
            self.complementarity / self.objective_scale,
            self.feasibility,
        )


@dataclass
class NlpSolution:
    x: np.ndarray
    duals: np.ndarray
    kkt: KktReport
    status: str
    iterations: int
    objective: float
    barrier_weight: float
    diagnostics: dict = field(default_factory=dict)


def _values(cons, x) -> np.ndarray:
    return np.array([ci.value_local(x[ci.indices]) for ci in cons])


def _coordinate_polish(cons, by_var, x, vals, kappa, c, grad_target, rounds=40):
    """Cyclic exact 1-D barrier minimizations.

    Dense Newton loses accuracy in directions where a single constraint
    carries a huge multiplier (condition ~ 1/slack**2); a safeguarded scalar
    Newton along each coordinate has no such limit. Used as a final-stage
    polish until the barrier gradient meets the target.
    """
    n = len(x)
    for _ in range(rounds):
        worst = 0.0
        for j in range(n):
            rows = by_var[j]
            if not rows:
                continue
            for _ in range(8):
                g = kappa * c[j]
                h = 0.0
                for ci, pos in rows:
                    xl = x[ci.indices]
                    gl, hl = ci.derivs_local(xl)
                    vi = vals[ci.row]
                    g += gl[pos] / (-vi)
                    h += gl[pos] * gl[pos] / (vi * vi)
                    if hl is not None:
                        h += hl[pos, pos] / (-vi)
                if abs(g) <= 0.25 * grad_target or h <= 0:
                    break
                step = -g / h
                for _ in range(60):
                    ok = True
                    for ci, pos in rows:
                        xl = x[ci.indices].copy()
                        xl[pos] += step
                        v_new = ci.value_local(xl)
                        if not (np.isfinite(v_new) and v_new < 0):
                            ok = False
                            break
                    if ok:
                        break
                    step *= 0.5
                else:
                    break
                x[j] += step
                for ci, pos in rows:
                    vals[ci.row] = ci.value_local(x[ci.indices])
            worst = max(worst, abs(g))
        if worst <= grad_target:
            break
    return x, vals


class _Reindexed(Constraint):
    """View of a constraint with indices remapped into block coordinates."""

    def __init__(self, inner: Constraint, local_indices: np.ndarray):
        self.inner = inner
        self.indices = np.asarray(local_indices, dtype=int)
        self.tag = inner.tag

    def value_local(self, xloc):
        return self.inner.value_local(xloc)

    def derivs_local(self, xloc):
        return self.inner.derivs_local(xloc)


def solve(problem: NlpProblem, tol_kkt: float = 1e-7, max_iters: int = 4000) -> NlpSolution:
    """Path-following barrier solve to KKT tolerance.

    Raises SolverError on loss of strict feasibility (line search below
    1e-14), iteration exhaustion, or non-finite constraint values at the
    start point.
    """
    if problem.blocks is not None:
        split = _split_blocks(problem)
        if split is not None:
            return _solve_blockwise(problem, split, tol_kkt, max_iters)
    return _solve_monolithic(problem, tol_kkt, max_iters)


def _split_blocks(problem: NlpProblem):
    """Per-block subproblems, or None if a constraint spans blocks."""
    var_block = np.full(problem.n, -1, dtype=int)
    for b, vars_b in enumerate(problem.blocks):
        var_block[np.asarray(vars_b, dtype=int)] = b
    if np.any(var_block < 0):
        return None
    rows_by_block: list[list[int]] = [[] for _ in problem.blocks]
    for row, ci in enumerate(problem.constraints):
        owners = set(var_block[ci.indices])
        if len(owners) != 1:
            return None
        rows_by_block[owners.pop()].append(row)
    split = []
    for b, vars_b in enumerate(problem.blocks):
        vars_b = np.sort(np.asarray(vars_b, dtype=int))
        local = {int(j): i for i, j in enumerate(vars_b)}
        cons_b = [
            _Reindexed(problem.constraints[r],
                       [local[int(j)] for j in problem.constraints[r].indices])
            for r in rows_by_block[b]
        ]
        sub = NlpProblem(
            n=len(vars_b),
            c=problem.c[vars_b],
            constraints=cons_b,
            lb=problem.lb[vars_b],
            ub=problem.ub[vars_b],
            x0=problem.x0[vars_b],
            var_scale=problem.var_scale[vars_b],
        )
        split.append((vars_b, rows_by_block[b], sub))
    return split


def _solve_blockwise(problem, split, tol_kkt, max_iters) -> NlpSolution:
    n_user = len(problem.constraints)
    lb_rows = {int(j): n_user + i
               for i, j in enumerate(np.flatnonzero(np.isfinite(problem.lb)))}
    n_lb = len(lb_rows)
    ub_rows = {int(j): n_user + n_lb + i
               for i, j in enumerate(np.flatnonzero(np.isfinite(problem.ub)))}
    x = problem.x0.copy()
    duals = np.zeros(n_user + n_lb + len(ub_rows))
    iterations = 0
    kappa_max = 0.0
    stage_phi: list[list[float]] = []
    for vars_b, rows_b, sub in split:
        sol = _solve_monolithic(sub, tol_kkt, max_iters - iterations)
        x[vars_b] = sol.x
        pos = 0
        for r in rows_b:
            duals[r] = sol.duals[pos]
            pos += 1
        for j in vars_b:
            if int(j) in lb_rows:
                duals[lb_rows[int(j)]] = sol.duals[pos]
                pos += 1
        for j in vars_b:
            if int(j) in ub_rows:
                duals[ub_rows[int(j)]] = sol.duals[pos]
                pos += 1
        iterations += sol.iterations
        kappa_max = max(kappa_max, sol.barrier_weight)
        stage_phi.extend(sol.diagnostics.get("stage_phi", []))
    report = check_kkt(problem, x, duals, tol_kkt)
    if not report.ok:
        raise SolverError(
            f"KKT residuals {report.max_residual:.2e} exceed tolerance {tol_kkt:.1e}",
            "kkt_failure")
    return NlpSolution(
        x=x,
        duals=duals,
        kkt=report,
        status="optimal",
        iterations=iterations,
        objective=float(problem.c @ x) + problem.obj_const,
        barrier_weight=kappa_max,
        diagnostics={"stage_phi": stage_phi},
    )


def _solve_monolithic(problem: NlpProblem, tol_kkt: float, max_iters: int) -> NlpSolution:
    cons = problem.all_constraints()
    m = len(cons)
    n = problem.n
    # Work with a unit-scale objective: multipliers stay O(1), so the
    # centered slacks 1/(kappa*lambda) do not collapse below evaluation
    # noise when the raw objective is steep. KKT residuals are judged
    # relative to the objective scale accordingly.
    omega = max(1.0, float(np.max(np.abs(problem.c))))
    c = problem.c / omega
    s = problem.var_scale
    for row, ci in enumerate(cons):
        ci.row = row
    by_var: list[list] = [[] for _ in range(n)]
    for ci in cons:
        for pos, j in enumerate(ci.indices):
            by_var[j].append((ci, pos))

    x = problem.x0.copy()
    vals = _values(cons, x)
    if not np.all(np.isfinite(vals)):
        raise SolverError("non-finite constraint value at start point", "degenerate")
    if np.any(vals >= 0):
        worst = int(np.argmax(vals))
        raise SolverError(
            f"start point is not strictly feasible (constraint '{cons[worst].tag}' "
            f"= {vals[worst]:.3e})", "infeasible_start")

    # Initial barrier weight: least-squares fit of kappa*c ~ -barrier_grad at
    # x0 (in scaled coordinates), so the first centering starts near the
    # central path instead of detouring toward the analytic center.
    b0 = np.zeros(n)
    for ci, vi in zip(cons, vals):
        gl, _ = ci.derivs_local(x[ci.indices])
        b0[ci.indices] += gl / (-vi)
    cs = c * s
    bs = b0 * s
    kappa = float(np.clip(-(cs @ bs) / max(cs @ cs, 1e-300), 1.0, 1e8))
    total_newton = 0
    stage_phi: list[list[float]] = []

    def phi_value(xp) -> tuple[float, np.ndarray]:
        v = _values(cons, xp)
        if np.any(v >= 0) or not np.all(np.isfinite(v)):
            return np.inf, v
        return kappa * float(c @ xp) - float(np.sum(np.log(-v))), v

    while True:
        final_stage = m / kappa <= tol_kkt
        grad_target = 0.1 * tol_kkt * kappa
        # Centering: damped Newton on kappa*c.x - sum log(-g)
        phi, vals = phi_value(x)
        path = [phi]
        for attempt in range(3):
            grad = None
            for _ in range(600):
                if total_newton >= max_iters:
                    raise SolverError(
                        f"iteration limit {max_iters} exceeded (kappa={kappa:.1e})",
                        "max_iterations")
                grad = kappa * c.copy()
                J = np.zeros((m, n))
                B = np.zeros((n, n))
                for i, (ci, vi) in enumerate(zip(cons, vals)):
                    gl, hl = ci.derivs_local(x[ci.indices])
                    idx = ci.indices
                    grad[idx] += gl / (-vi)
                    J[i, idx] = gl
                    if hl is not None:
                        B[np.ix_(idx, idx)] += hl / (-vi)
                dx = _newton_direction(J, B, vals, grad, s)
                decrement2 = float(-grad @ dx)
                if decrement2 <= 0:
                    break
                if final_stage:
                    if np.max(np.abs(grad)) <= grad_target:
                        break
                    if decrement2 / 2.0 <= 1e-16 * max(1.0, abs(phi)):
                        break  # numerical floor; coordinate polish takes over
                elif decrement2 / 2.0 <= 1e-10 * max(1.0, abs(phi)):
                    break
                # Backtracking: keep strict feasibility, then Armijo decrease
                step = 1.0
                while True:
                    phi_new, vals_new = phi_value(x + step * dx)
                    if phi_new <= phi - 0.25 * step * decrement2:
                        break
                    step *= 0.5
                    if step < 1e-14:
                        raise SolverError(
                            f"line search failed at kappa={kappa:.1e} "
                            "(loss of strict feasibility)", "line_search_failure")
                x = x + step * dx
                phi, vals = phi_new, vals_new
                path.append(phi)
                total_newton += 1
            if not final_stage or grad is None:
                break
            if np.max(np.abs(grad)) <= grad_target:
                break
            # Dense Newton hit its accuracy floor; finish coordinate-wise.
            x, vals = _coordinate_polish(cons, by_var, x, vals, kappa, c, grad_target)
            phi = kappa * float(c @ x) - float(np.sum(np.log(-vals)))
        stage_phi.append(path)
        if final_stage:
            break
        kappa *= 10.0

    duals = 1.0 / (kappa * (-vals))
    duals = _refine_duals(cons, x, c, duals, n, kappa, tol_kkt)
    duals = duals * omega
    report = check_kkt(problem, x, duals, tol_kkt)
    if not report.ok:
        raise SolverError(
            f"KKT residuals {report.max_residual:.2e} exceed tolerance {tol_kkt:.1e}",
            "kkt_failure")
    return NlpSolution(
        x=x,
        duals=duals,
        kkt=report,
        status="optimal",
        iterations=total_newton,
        objective=float(problem.c @ x) + problem.obj_const,
        barrier_weight=kappa,
        diagnostics={"stage_phi": stage_phi},
    )


def _refine_duals(cons, x, c, duals, n, kappa, tol):
    """Least-squares correction of the barrier duals on numerically active rows.

    A centered constraint sits at slack 1/(kappa*lambda); once that drops
    toward the float64 evaluation noise of the constraint value, the barrier
    dual 1/(kappa*(-g)) inherits the noise and the stationarity readout
    stalls. Refitting those multipliers against the stationarity equation,
    bounded so every complementarity product stays within half the
    tolerance, yields a sharper certificate for the same primal point.
    """
    slack = np.empty(len(cons))
    scale = np.empty(len(cons))
    grads = []
    for i, ci in enumerate(cons):
        xl = x[ci.indices]
        gl, _ = ci.derivs_local(xl)
        grads.append(gl)
        slack[i] = -ci.value_local(xl)
        scale[i] = max(1.0, float(np.abs(gl) @ np.abs(xl)))
    refit = [i for i in range(len(cons)) if slack[i] <= 1e-5 * scale[i]]
    if not refit:
        return duals
    r = c.copy()
    for ci, li, gl in zip(cons, duals, grads):
        r[ci.indices] += li * gl
    A = np.zeros((n, len(refit)))
    for col, i in enumerate(refit):
        A[cons[i].indices, col] = grads[i]
    lam = duals[refit]
    upper = np.maximum(0.5 * tol / np.maximum(slack[refit], 1e-300) - lam, 0.0)
    try:
        from scipy.optimize import lsq_linear
        fit = lsq_linear(A, -r, bounds=(-lam, upper), method="bvls")
        delta = fit.x
    except Exception:
        return duals
    out = duals.copy()
    out[refit] = np.maximum(lam + delta, 0.0)
    return out


def _newton_direction(J, B, vals, grad, s) -> np.ndarray:
    """Newton step for the barrier via the augmented system.

    The condensed Hessian J'U^2J + B squares the inverse slacks and loses
    the step direction in float64 once a constraint is tightly active.
    Solving the equivalent augmented system

        [B  J'] [dx]   [-grad]          w = U^2 J dx,  U = diag(1/(-g))
        [J -U^-2] [w] = [  0  ]

    keeps the conditioning at 1/slack instead of 1/slack^2. Rows and
    variables are diagonally scaled, the factorization is plain LU with
    partial pivoting, plus one round of iterative refinement.
    """
    m, n = J.shape
    u = 1.0 / (-vals)
    Js = J * s[None, :]
    Bs = B * np.outer(s, s)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Bs
    K[:n, n:] = Js.T
    K[n:, :n] = Js
    K[n:, n:] = -np.diag(1.0 / (u * u))
    rhs = np.concatenate([-(grad * s), np.zeros(m)])
    # scale the constraint rows to unit magnitude for pivoting
    row_scale = np.ones(n + m)
    row_scale[n:] = np.maximum(np.max(np.abs(K[n:, :]), axis=1), 1e-300)
    Kr = K / row_scale[:, None]
    br = rhs / row_scale
    try:
        lu = scipy.linalg.lu_factor(Kr, check_finite=False)
        sol = scipy.linalg.lu_solve(lu, br, check_finite=False)
        resid = br - Kr @ sol
        sol = sol + scipy.linalg.lu_solve(lu, resid, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as err:
        raise SolverError(f"Newton system is numerically singular ({err})",
                          "singular_system") from err
    if not np.all(np.isfinite(sol)):
        raise SolverError("Newton system produced non-finite step", "singular_system")
    return sol[:n] * s


def check_kkt(problem: NlpProblem, point: np.ndarray, duals: np.ndarray, tol: float) -> KktReport:
    """First-order optimality residuals at (point, duals).

    Stationarity ||c + sum(lambda_i grad g_i)||_inf, primal feasibility
    max(g_i)_+, complementarity max|lambda_i g_i|, over user constraints and
    materialized box rows in ``all_constraints`` order.
    """
    cons = problem.all_constraints()
    if len(duals) != len(cons):
        raise ValueError(f"expected {len(cons)} duals, got {len(duals)}")
    r = problem.c.copy()
    feas = 0.0
    comp = 0.0
    for ci, li in zip(cons, duals):
        vi = ci.value_local(point[ci.indices])
        gl, _ = ci.derivs_local(point[ci.indices])
        r[ci.indices] += li * gl
        feas = max(feas, vi)
        comp = max(comp, abs(li * vi))
    return KktReport(
        stationarity=float(np.max(np.abs(r))),
        feasibility=max(feas, 0.0),
        complementarity=comp,
        tol=tol,
        objective_scale=max(1.0, float(np.max(np.abs(problem.c)))),
    )
