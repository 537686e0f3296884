"""Successive convex approximation of the mixed-criticality age objective.

Each outer iteration fixes the quadratic-transform multipliers and the
first-order expansion point, builds an inner convex program in the variables
(t, p, y, z, a) per link, solves it with the interior-point solver, and
updates the expansion point. The y/z/a variables carry the outage-probability
closed form: e**y is the SINR threshold implied by the rate N/t, z its
noise-side transform, and a the reciprocal success probability, so that the
original outage budget p >= P_out(N/t) becomes a - p*a - 1 <= 0.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .aoi import Allocation, LinkProfile, RegulationError, objective_psi
from .network import LN2, Topology, outage_vector, sample_rate_statistics
from .solver import Constraint, LinearConstraint, NlpProblem, SolverError, solve

__all__ = [
    "SolverConfig",
    "FixedPoint",
    "QtMultipliers",
    "ConvexSubproblem",
    "SolveReport",
    "InfeasibleFixedPointError",
    "InitializationError",
    "update_multipliers",
    "surrogate_coefficients",
    "surrogate_objective",
    "build_constraints",
    "initialize",
    "iterate",
]

_EXP_CAP = 700.0


class InfeasibleFixedPointError(RuntimeError):
    """Expansion point violates its own convexified constraint set."""


class InitializationError(RuntimeError):
    """No regulation-feasible starting allocation exists for the scenario."""


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop and inner-solver parameters.

    ``epsilon`` closes the strict inequalities (regulation bound 1 - epsilon,
    expansion slack); ``p_floor``/``p_ceil_margin`` box the outage bound into
    [p_floor, 1 - p_ceil_margin]. ``bilinear_coeff_squared`` restores the
    published squared coefficient in the linearized outage-budget constraint
    instead of the exact first-order one (for comparison runs).
    """

    init_samples: int = 1000
    v_max: int = 100
    tol_outer: float = 1e-5
    tol_kkt: float = 1e-7
    epsilon: float = 1e-6
    p_floor: float = 1e-9
    p_ceil_margin: float = 1e-6
    damping: bool = True
    bilinear_coeff_squared: bool = False
    max_inner_iters: int = 4000
    t_min_safety: float = 0.5
    init_hi_horizon: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class FixedPoint:
    """Feasible expansion point (t, p, y, a) plus the per-link time floor.

    The z variable is implied: the threshold-slack constraint is tied to
    equality, z = exp(y - x_kk). Invariants: 0 < p < 1 with
    2**(t/tau_bar)*p < 1, t >= t_min > 0, a >= 1.
    """

    t: np.ndarray
    p: np.ndarray
    y: np.ndarray
    a: np.ndarray
    t_min: np.ndarray

    def __post_init__(self):
        for name in ("t", "p", "y", "a", "t_min"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (np.all(self.t > 0) and np.all(self.t_min > 0)):
            raise ValueError("t and t_min must be positive")
        if np.any((self.p <= 0) | (self.p >= 1)):
            raise ValueError("p must lie strictly in (0, 1)")
        if np.any(self.a < 1.0 - 1e-12):
            raise ValueError("a must be >= 1")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y must be finite")

    @property
    def K(self) -> int:
        return int(self.t.shape[0])

    def allocation(self) -> Allocation:
        return Allocation(self.t, self.p)


@dataclass(frozen=True)
class QtMultipliers:
    """Quadratic-transform weights: alpha on LO links, beta on HI links."""

    alpha: np.ndarray
    beta: np.ndarray


def update_multipliers(fp: FixedPoint, profile: LinkProfile) -> QtMultipliers:
    """Closed-form optimal multipliers at the expansion point.

    alpha_k = sqrt(p~ t~/tau)/(1-p~) and
    beta_k = sqrt(2**(2t~/tau)(1-p~)) / (1 - 2**(t~/tau) p~).
    """
    tau = profile.tau_bar
    if np.any(fp.p >= 1.0):
        raise RegulationError("fixed point has p >= 1")
    w = np.exp2(fp.t / tau)
    denom = 1.0 - w * fp.p
    if np.any(denom <= 0):
        raise RegulationError("fixed point violates 2**(t/tau_bar)*p < 1")
    alpha = np.zeros(fp.K)
    beta = np.zeros(fp.K)
    lo, hi = profile.lo_indices, profile.hi_indices
    alpha[lo] = np.sqrt(fp.p[lo] * fp.t[lo] / tau) / (1.0 - fp.p[lo])
    beta[hi] = w[hi] * np.sqrt(1.0 - fp.p[hi]) / denom[hi]
    return QtMultipliers(alpha=alpha, beta=beta)


def surrogate_coefficients(
    fp: FixedPoint, qt: QtMultipliers, profile: LinkProfile
) -> tuple[np.ndarray, np.ndarray, float]:
    """Affine form of the convexified objective: (c_t, c_p, constant).

    Terms are grouped so the value at the expansion point reproduces the true
    objective without catastrophic cancellation even near the regulation
    boundary.
    """
    tau = profile.tau_bar
    K = fp.K
    c_t = np.zeros(K)
    c_p = np.zeros(K)
    const = 0.0
    for k in profile.lo_indices:
        a_k = qt.alpha[k]
        r_tilde = math.sqrt(fp.p[k] * fp.t[k] / tau)
        c_t[k] = 2.0 / tau + a_k * fp.p[k] / (tau * r_tilde)
        c_p[k] = a_k * fp.t[k] / (tau * r_tilde) + a_k * a_k
        value = 2.0 * fp.t[k] / tau + a_k * (2.0 * r_tilde - a_k * (1.0 - fp.p[k]))
        const += value - c_t[k] * fp.t[k] - c_p[k] * fp.p[k]
    for k in profile.hi_indices:
        b_k = qt.beta[k]
        w = 2.0 ** (fp.t[k] / tau)
        s = math.sqrt(1.0 - fp.p[k])
        d = 1.0 - w * fp.p[k]
        c_t[k] = (LN2 / tau) * w * (2.0 * b_k * s + b_k * b_k * fp.p[k])
        c_p[k] = b_k * w * (b_k - 1.0 / s)
        value = b_k * (2.0 * w * s - b_k * d)
        const += value - c_t[k] * fp.t[k] - c_p[k] * fp.p[k]
    return c_t, c_p, const


def surrogate_objective(t, p, fp: FixedPoint, qt: QtMultipliers, profile: LinkProfile) -> float:
    """Linearized objective evaluated at (t, p) for the given multipliers.

    Equals the true objective at (t~, p~) when qt comes from
    update_multipliers (quadratic-transform fixed-point identity), and is
    affine in (t, p).
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    tau = profile.tau_bar
    total = 0.0
    for k in profile.lo_indices:
        a_k = qt.alpha[k]
        r_tilde = math.sqrt(fp.p[k] * fp.t[k] / tau)
        taylor = (
            r_tilde
            + fp.p[k] / (2.0 * tau * r_tilde) * (t[k] - fp.t[k])
            + (fp.t[k] / tau) / (2.0 * r_tilde) * (p[k] - fp.p[k])
        )
        total += 2.0 * t[k] / tau + a_k * (2.0 * taylor - a_k * (1.0 - p[k]))
    for k in profile.hi_indices:
        b_k = qt.beta[k]
        w = 2.0 ** (fp.t[k] / tau)
        s = math.sqrt(1.0 - fp.p[k])
        taylor_growth = w * s * (1.0 + (LN2 / tau) * (t[k] - fp.t[k])) - w / (2.0 * s) * (
            p[k] - fp.p[k]
        )
        u = (1.0 - w * fp.p[k]) - (LN2 / tau) * w * fp.p[k] * (t[k] - fp.t[k]) - w * (
            p[k] - fp.p[k]
        )
        total += b_k * (2.0 * taylor_growth - b_k * u)
    return float(total)


# -- Inner convex subproblem ----------------------------------------------------

class _RateTimeCoupling(Constraint):
    """N/t - [tangent of B*log2(1+e**y) at y~] <= 0."""

    def __init__(self, k: int, K: int, payload: float, y_tilde: float, bandwidth: float):
        self.indices = np.array([k, 2 * K + k])
        self.payload = payload
        sig = 1.0 / (1.0 + math.exp(-y_tilde))
        softplus = max(y_tilde, 0.0) + math.log1p(math.exp(-abs(y_tilde)))
        self.slope = bandwidth * sig / LN2
        self.offset = -bandwidth * softplus / LN2 + self.slope * y_tilde
        self.tag = f"rate_time[{k}]"

    def value_local(self, xloc):
        t, y = xloc
        if t <= 0:
            return math.inf
        return self.payload / t - self.slope * y + self.offset

    def derivs_local(self, xloc):
        t, y = xloc
        grad = np.array([-self.payload / (t * t), -self.slope])
        hess = np.zeros((2, 2))
        hess[0, 0] = 2.0 * self.payload / (t * t * t)
        return grad, hess


class _ThresholdSlack(Constraint):
    """exp(y - x_kk) - z <= 0."""

    def __init__(self, k: int, K: int, x_kk: float):
        self.indices = np.array([2 * K + k, 3 * K + k])
        self.x_kk = x_kk
        self.tag = f"threshold_slack[{k}]"

    def value_local(self, xloc):
        y, z = xloc
        arg = y - self.x_kk
        if arg > _EXP_CAP:
            return math.inf
        return math.exp(arg) - z

    def derivs_local(self, xloc):
        y, z = xloc
        e = math.exp(min(y - self.x_kk, _EXP_CAP))
        grad = np.array([e, -1.0])
        hess = np.zeros((2, 2))
        hess[0, 0] = e
        return grad, hess


class _OutageProduct(Constraint):
    """exp(sigma2*z) * prod(1 + e**(x_ik - x_kk + y)) - a <= 0."""

    def __init__(self, k: int, K: int, sigma2: float, cross_offsets: np.ndarray):
        self.indices = np.array([2 * K + k, 3 * K + k, 4 * K + k])
        self.sigma2 = sigma2
        self.cross = np.asarray(cross_offsets, dtype=float)
        self.tag = f"outage_product[{k}]"

    def _exponent(self, y: float, z: float) -> tuple[float, float, float]:
        w = self.cross + y
        softplus = np.maximum(w, 0.0) + np.log1p(np.exp(-np.abs(w)))
        sig = 1.0 / (1.0 + np.exp(-w))
        u = self.sigma2 * z + float(np.sum(softplus))
        return u, float(np.sum(sig)), float(np.sum(sig * (1.0 - sig)))

    def value_local(self, xloc):
        y, z, a = xloc
        u, _, _ = self._exponent(y, z)
        if u > _EXP_CAP:
            return math.inf
        return math.exp(u) - a

    def derivs_local(self, xloc):
        y, z, a = xloc
        u, u_y, u_yy = self._exponent(y, z)
        e = math.exp(min(u, _EXP_CAP))
        grad = np.array([e * u_y, e * self.sigma2, -1.0])
        hess = np.zeros((3, 3))
        hess[0, 0] = e * (u_y * u_y + u_yy)
        hess[0, 1] = hess[1, 0] = e * u_y * self.sigma2
        hess[1, 1] = e * self.sigma2 * self.sigma2
        return grad, hess


class _OutageBudget(Constraint):
    """Linearized bilinear budget: a - p*a - 1 <= 0 around (p~, a~).

    -p*a is written as (p-a)**2/4 - (p+a)**2/4 and the concave part replaced
    by its tangent, whose first-order coefficient is (p~+a~)/2. The squared
    variant keeps the published coefficient (p~+a~)**2/2 instead.
    """

    def __init__(self, k: int, K: int, p_tilde: float, a_tilde: float, squared_coeff: bool):
        self.indices = np.array([K + k, 4 * K + k])
        self.p_tilde = p_tilde
        self.a_tilde = a_tilde
        st = p_tilde + a_tilde
        self.coef = 0.5 * st * st if squared_coeff else 0.5 * st
        self.anchor = -0.25 * st * st
        self.tag = f"outage_budget[{k}]"

    def value_local(self, xloc):
        p, a = xloc
        return (
            a
            + 0.25 * (p - a) ** 2
            + self.anchor
            - self.coef * ((p - self.p_tilde) + (a - self.a_tilde))
            - 1.0
        )

    def derivs_local(self, xloc):
        p, a = xloc
        half = 0.5 * (p - a)
        grad = np.array([half - self.coef, 1.0 - half - self.coef])
        hess = np.array([[0.5, -0.5], [-0.5, 0.5]])
        return grad, hess


@dataclass
class ConvexSubproblem:
    """Inner convex program around one expansion point.

    Working variables are (t, p, y, z, a) per link, n = 5K total; ``xi``
    records the 6K figure used in the interior-point complexity bound, which
    also counts the eliminated per-link rate variable.
    """

    K: int
    c: np.ndarray
    obj_const: float
    constraints: list
    lb: np.ndarray
    ub: np.ndarray
    x0: np.ndarray
    var_scale: np.ndarray
    x_const: np.ndarray
    sigma2: float
    B: float
    payload_bits: np.ndarray

    @property
    def n(self) -> int:
        return 5 * self.K

    @property
    def xi(self) -> int:
        return 6 * self.K

    @property
    def tags(self) -> list[str]:
        return [c.tag for c in self.constraints]

    def problem(self) -> NlpProblem:
        K = self.K
        blocks = [np.arange(k, 5 * K, K) for k in range(K)]
        return NlpProblem(
            n=self.n,
            c=self.c,
            constraints=self.constraints,
            lb=self.lb,
            ub=self.ub,
            x0=self.x0,
            obj_const=self.obj_const,
            var_scale=self.var_scale,
            blocks=blocks,
        )


def _cross_offset_matrix(topology: Topology) -> np.ndarray:
    """x[i, k] = ln(q_i / d_ik**(mu/2)); uncoupled entries are -inf."""
    with np.errstate(divide="ignore"):
        x = np.log(topology.q[:, None]) - (topology.mu / 2.0) * np.log(topology.d)
        return np.where(topology.coupling > 0, x, -np.inf)


def _a_equality(y: np.ndarray, x_const: np.ndarray, sigma2: float) -> np.ndarray:
    """a at equality in the outage-product constraint with z = e**(y - x_kk)."""
    K = y.shape[0]
    out = np.empty(K)
    for k in range(K):
        z_eq = math.exp(y[k] - x_const[k, k])
        u = sigma2 * z_eq
        for i in range(K):
            if i == k or not np.isfinite(x_const[i, k]):
                continue
            w = x_const[i, k] - x_const[k, k] + y[k]
            u += max(w, 0.0) + math.log1p(math.exp(-abs(w)))
        if u > _EXP_CAP:
            raise InfeasibleFixedPointError(f"outage product overflows at link {k}")
        out[k] = math.exp(u)
    return out


def _canonical_fixed_point(
    t: np.ndarray,
    p_target: np.ndarray,
    y: np.ndarray,
    topology: Topology,
    profile: LinkProfile,
    config: SolverConfig,
    t_min: np.ndarray,
) -> FixedPoint:
    """Clamp a candidate expansion point into the feasible domain.

    Ties a to outage-product equality, lifts y to keep the rate bound valid,
    and clips p between the outage floor 1 - (1 - eps)/a and the regulation
    ceiling (1 - 2*eps) * 2**(-t/tau_bar). Raises InfeasibleFixedPointError
    when that interval is empty.
    """
    eps = config.epsilon
    tau = profile.tau_bar
    t = np.maximum(np.asarray(t, dtype=float), t_min * (1.0 + 1e-9))
    r = profile.payload_bits / t
    x_const = _cross_offset_matrix(topology)
    # small relative lift keeps B*log2(1+e^y) >= r under float rounding
    y_floor = np.log(np.expm1(LN2 * r / topology.B))
    y_floor += 1e-12 * np.maximum(1.0, np.abs(y_floor))
    y = np.maximum(np.asarray(y, dtype=float), y_floor)
    a = _a_equality(y, x_const, topology.sigma2)
    p_lo = np.maximum(config.p_floor + 1e-13, 1.0 - (1.0 - eps) / a)
    p_hi = np.minimum(
        1.0 - config.p_ceil_margin - 1e-12, (1.0 - 2.0 * eps) * np.exp2(-t / tau)
    )
    if np.any(p_lo > p_hi):
        bad = int(np.argmax(p_lo - p_hi))
        raise InfeasibleFixedPointError(
            f"no regulation-feasible outage bound for link {bad}: "
            f"needs p >= {p_lo[bad]:.3e} but p <= {p_hi[bad]:.3e}"
        )
    p = np.clip(np.asarray(p_target, dtype=float), p_lo, p_hi)
    return FixedPoint(t=t, p=p, y=y, a=a, t_min=np.asarray(t_min, dtype=float))


def build_constraints(
    fp: FixedPoint,
    topology: Topology,
    profile: LinkProfile,
    epsilon: float | None = None,
    *,
    config: SolverConfig | None = None,
    qt: QtMultipliers | None = None,
) -> ConvexSubproblem:
    """Assemble the convex inner program around the expansion point.

    Per link: the SCA rate-time bound, the threshold slack z >= e**(y-x_kk),
    the outage product bound, the linearized bilinear outage budget, the
    linearized regulation constraint, and the boxes t >= t_min,
    p in [p_floor, 1 - p_ceil_margin]. The start point is the expansion
    point nudged into the strict interior.
    """
    config = config or SolverConfig()
    eps = config.epsilon if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    K = fp.K
    if profile.K != K or topology.K != K:
        raise ValueError("profile/topology/fixed point sizes disagree")
    tau = profile.tau_bar
    n = 5 * K
    x_const = _cross_offset_matrix(topology)

    qt = qt or update_multipliers(fp, profile)
    c_t, c_p, obj_const = surrogate_coefficients(fp, qt, profile)
    c = np.zeros(n)
    c[:K] = c_t
    c[K : 2 * K] = c_p

    cons: list = []
    for k in range(K):
        cross = np.array(
            [
                x_const[i, k] - x_const[k, k]
                for i in range(K)
                if i != k and np.isfinite(x_const[i, k])
            ]
        )
        cons.append(_RateTimeCoupling(k, K, float(profile.payload_bits[k]), float(fp.y[k]), topology.B))
        cons.append(_ThresholdSlack(k, K, float(x_const[k, k])))
        cons.append(_OutageProduct(k, K, topology.sigma2, cross))
        cons.append(_OutageBudget(k, K, float(fp.p[k]), float(fp.a[k]), config.bilinear_coeff_squared))
        w = 2.0 ** (fp.t[k] / tau)
        slope_t = (LN2 / tau) * w * fp.p[k]
        cons.append(
            LinearConstraint(
                [k, K + k],
                [slope_t, w],
                -slope_t * fp.t[k] - (1.0 - eps),
                tag=f"regulation[{k}]",
            )
        )

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[:K] = fp.t_min
    lb[K : 2 * K] = config.p_floor
    ub[K : 2 * K] = 1.0 - config.p_ceil_margin

    # Expansion point extended with equality z and a must be feasible
    # (tolerance relative to each constraint's own magnitude).
    z_eq = np.exp(fp.y - np.diag(x_const))
    xe = np.concatenate([fp.t, fp.p, fp.y, z_eq, fp.a])
    rel = np.empty(len(cons))
    for i, ci in enumerate(cons):
        xl = xe[ci.indices]
        gl, _ = ci.derivs_local(xl)
        rel[i] = ci.value_local(xl) / max(1.0, float(np.abs(gl) @ np.abs(xl)))
    if np.any(rel > 1e-9):
        worst = int(np.argmax(rel))
        raise InfeasibleFixedPointError(
            f"expansion point violates '{cons[worst].tag}' by relative {rel[worst]:.3e}"
        )

    x0 = _strict_start(fp, cons, xe, z_eq, lb, ub, config, tau)
    x0 = _scan_start(fp, cons, x0, c, lb, ub, config)

    var_scale = np.ones(n)
    var_scale[:K] = fp.t
    var_scale[K : 2 * K] = np.clip(fp.p, 1e-6, 1.0)
    var_scale[3 * K : 4 * K] = np.maximum(z_eq, 1e-12)
    var_scale[4 * K : 5 * K] = np.maximum(fp.a, 1.0)

    return ConvexSubproblem(
        K=K,
        c=c,
        obj_const=obj_const,
        constraints=cons,
        lb=lb,
        ub=ub,
        x0=x0,
        var_scale=var_scale,
        x_const=x_const,
        sigma2=topology.sigma2,
        B=topology.B,
        payload_bits=profile.payload_bits.copy(),
    )


def _strict_start(fp, cons, xe, z_eq, lb, ub, config, tau: float) -> np.ndarray:
    """Nudge the expansion point into the strict interior of the subproblem.

    y, z, and a are inflated multiplicatively, and p is lifted toward the
    regulation ceiling; raising p relaxes the linearized outage budget, which
    pays for the inflated outage product. Deltas are halved per link until
    every constraint is strictly negative, so the start point keeps healthy
    slack whenever the expansion point allows it.
    """
    K = fp.K
    eps = config.epsilon
    w = 2.0 ** (fp.t / tau)
    p_room = np.minimum(
        (1.0 - eps) / w - fp.p, (1.0 - config.p_ceil_margin - 1e-12) - fp.p
    )
    delta = np.full(K, 0.05)
    dp = np.minimum(0.25 * p_room, 0.05)
    for _ in range(60):
        x0 = xe.copy()
        x0[K : 2 * K] = fp.p + dp
        x0[2 * K : 3 * K] = fp.y + delta
        x0[3 * K : 4 * K] = z_eq * np.exp(delta) * (1.0 + delta)
        for k in range(K):
            prod = cons[5 * k + 2]
            u, _, _ = prod._exponent(x0[2 * K + k], x0[3 * K + k])
            x0[4 * K + k] = math.exp(min(u, _EXP_CAP)) * (1.0 + delta[k])
        vals = np.array([ci.value(x0) for ci in cons]).reshape(K, 5)
        inside = ((x0 > lb) & (x0 < ub)).reshape(5, K)
        bad = (
            np.any(vals >= 0.0, axis=1)
            | ~np.all(np.isfinite(vals), axis=1)
            | ~np.all(inside, axis=0)
        )
        if not np.any(bad):
            return x0
        delta[bad] *= 0.5
        dp[bad] *= 0.5
    raise InfeasibleFixedPointError("could not construct a strictly feasible start point")


def _scan_start(fp, cons, x0_base, c, lb, ub, config) -> np.ndarray:
    """Per-link line search for a cheap strictly feasible start point.

    The subproblem separates across links, so each link's start can be
    pre-optimized independently: sweep the threshold variable y, place t at
    the linearized rate bound, derive z and a from their defining
    constraints, and take the smallest outage bound the linearized budget
    admits. This keeps the interior-point warm start near the subproblem
    optimum even when the expansion point is orders of magnitude away
    (worst-case initialization).
    """
    K = fp.K
    x0 = x0_base.copy()
    for k in range(K):
        rate_con, thr, prod, budget, reg = cons[5 * k : 5 * k + 5]
        payload = rate_con.payload
        best = None
        base_cost = c[k] * x0_base[k] + c[K + k] * x0_base[K + k]
        def min_budget_p(a_val: float) -> float | None:
            # smallest p admitted by the linearized budget (decreasing in p)
            b_lin = -(0.5 * a_val + budget.coef)
            c_lin = (
                a_val + 0.25 * a_val * a_val + budget.anchor
                + budget.coef * (budget.p_tilde + budget.a_tilde - a_val) - 1.0
            )
            disc = b_lin * b_lin - c_lin
            if disc <= 0:
                return None
            return 2.0 * (-b_lin - math.sqrt(disc))

        for dy in np.linspace(0.0, 16.0, 81):
            y_c = fp.y[k] + dy
            rate_bound = rate_con.slope * y_c - rate_con.offset
            if rate_bound <= 0:
                continue
            t_c = max(payload / rate_bound * 1.02, lb[k] * (1.0 + 1e-6))
            z_eq = math.exp(min(y_c - thr.x_kk, _EXP_CAP))
            z_c = z_eq * 1.001
            u, _, _ = prod._exponent(y_c, z_c)
            if u > 300.0:
                break
            a_eq = math.exp(u)
            cap5 = (-reg.offset - reg.coeffs[0] * t_c) / reg.coeffs[1]
            p_cap = min(cap5, ub[K + k]) * (1.0 - 1e-9)
            p_base = min_budget_p(a_eq * (1.0 + 1e-9))
            if p_base is None or p_base >= p_cap:
                continue
            # inflate a only as far as the outage-budget corridor allows
            room = p_cap - p_base
            a_c = a_eq + min(0.01 * max(a_eq, 1.0), 0.2 * room)
            p_left = min_budget_p(a_c)
            if p_left is None or p_left >= p_cap:
                continue
            p_c = min(p_left + 0.25 * (p_cap - p_left), p_cap)
            p_c = max(p_c, lb[K + k] + 1e-13)
            cost = c[k] * t_c + c[K + k] * p_c
            if best is None or cost < best[0]:
                best = (cost, t_c, p_c, y_c, z_c, a_c)
        if best is None or best[0] >= base_cost:
            continue
        cand = x0.copy()
        cand[k], cand[K + k] = best[1], best[2]
        cand[2 * K + k], cand[3 * K + k], cand[4 * K + k] = best[3], best[4], best[5]
        vals = [ci.value(cand) for ci in cons[5 * k : 5 * k + 5]]
        if all(v < 0 and math.isfinite(v) for v in vals):
            x0 = cand
    return x0


def initialize(
    topology: Topology,
    profile: LinkProfile,
    M: int,
    rng: np.random.Generator,
    config: SolverConfig | None = None,
) -> FixedPoint:
    """Worst-case-rate initialization of the expansion point.

    Samples M channel realizations; the per-link worst achievable rate gives
    t~ = N/r~, y~ the implied threshold, p~ the closed-form outage clamped
    into the feasible band, and a~ the outage-product equality value. The
    per-link time floor is t_min = safety * N/(B log2(1 + max sampled SINR)).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    config = config or SolverConfig()
    rates, sinrs = sample_rate_statistics(topology, M, rng)
    r_wc = rates.min(axis=0)
    sinr_max = sinrs.max(axis=0)
    if np.any(r_wc <= 0):
        raise InitializationError("sampled a zero worst-case rate")
    t_min = config.t_min_safety * profile.payload_bits / (topology.B * np.log2(1.0 + sinr_max))
    r_init = _regulation_feasible_rates(r_wc, topology, profile, config)
    t = profile.payload_bits / r_init
    y = np.log(np.expm1(LN2 * r_init / topology.B))
    p_raw = outage_vector(topology, r_init)
    try:
        return _canonical_fixed_point(t, p_raw, y, topology, profile, config, t_min)
    except InfeasibleFixedPointError as err:
        raise InitializationError(
            "worst-case initialization is regulation-infeasible; reduce the "
            f"payload or increase transmit power ({err})"
        ) from err


def _regulation_feasible_rates(
    r_wc: np.ndarray, topology: Topology, profile: LinkProfile, config: SolverConfig
) -> np.ndarray:
    """Smallest per-link rate lift that makes the worst-case start feasible.

    A sufficiently slow worst-case rate can put t = N/r so far beyond
    tau_bar that no outage bound satisfies the geometric-series regulation.
    The scenario itself is still feasible at higher rates, so each
    infeasible link's rate is raised geometrically until the outage floor
    fits under the regulation ceiling; links that never fit raise the
    initialization error in the caller. Safety-critical links are
    additionally lifted until t <= init_hi_horizon * tau_bar: expansion
    points with 2**(t/tau_bar) in the hundreds produce surrogate
    coefficients beyond what the inner solver can certify in float64, and
    the descent iteration only ever moves away from that regime.
    """
    eps = config.epsilon
    tau = profile.tau_bar
    x_const = _cross_offset_matrix(topology)
    t_cap = np.where(profile.hi_mask, config.init_hi_horizon * tau, np.inf)
    r = r_wc.copy()
    for _ in range(300):
        t = profile.payload_bits / r
        y = np.log(np.expm1(LN2 * r / topology.B))
        try:
            a = _a_equality(y, x_const, topology.sigma2)
        except InfeasibleFixedPointError:
            return r  # let the canonical clip report the failing link
        p_lo = np.maximum(config.p_floor + 1e-13, 1.0 - (1.0 - eps) / a)
        p_hi = np.minimum(
            1.0 - config.p_ceil_margin - 1e-12, (1.0 - 2.0 * eps) * np.exp2(-t / tau)
        )
        bad = (p_lo > p_hi) | (t > t_cap)
        if not np.any(bad):
            return r
        r[bad] *= 1.25
    return r


@dataclass
class SolveReport:
    """Outer-loop trace: true and surrogate objective values, inner-solver
    certificates, and the final allocation."""

    psi_history: np.ndarray
    surrogate_history: np.ndarray
    kkt_residuals: np.ndarray
    inner_iterations: np.ndarray
    theta_history: np.ndarray
    status: str
    iterations: int
    wall_time_s: float
    allocation: Allocation
    fixed_point: FixedPoint
    descent_violations: int
    n_vars: int
    xi: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "stalled")

    @property
    def psi(self) -> float:
        return float(self.psi_history[-1])


def iterate(
    topology: Topology,
    profile: LinkProfile,
    config: SolverConfig | None = None,
    rng: np.random.Generator | None = None,
) -> SolveReport:
    """Outer SCA loop: initialize, then alternate multiplier updates, inner
    convex solves, and damped expansion-point updates until the true
    objective stops improving.

    A candidate update is accepted only if the true objective does not
    increase; the step is halved down to 1/16 otherwise. If no step length
    descends, the current point is reported with status ``stalled`` (the
    inner solution direction has nonnegative directional derivative, i.e.
    the iteration is at a surrogate stationary point).
    """
    config = config or SolverConfig()
    rng = rng or np.random.default_rng(config.seed)
    t_start = time.perf_counter()

    fp = initialize(topology, profile, config.init_samples, rng, config)
    psi = objective_psi(fp.allocation(), profile)
    K = fp.K

    psi_hist = [psi]
    surr_hist: list[float] = []
    kkt_hist: list[float] = []
    inner_hist: list[int] = []
    theta_hist: list[float] = []
    violations = 0
    status = "max_iterations"
    iterations = config.v_max

    thetas = [1.0, 0.5, 0.25, 0.125, 0.0625] if config.damping else [1.0]

    for v in range(1, config.v_max + 1):
        qt = update_multipliers(fp, profile)
        sub = build_constraints(fp, topology, profile, config.epsilon, config=config, qt=qt)
        try:
            sol = solve(sub.problem(), config.tol_kkt, config.max_inner_iters)
        except SolverError as err:
            raise SolverError(
                f"inner solve failed at outer iteration {v}: {err}", err.status
            ) from err
        surr_hist.append(sol.objective)
        kkt_hist.append(sol.kkt.max_residual)
        inner_hist.append(sol.iterations)

        sol_t, sol_p, sol_y = sol.x[:K], sol.x[K : 2 * K], sol.x[2 * K : 3 * K]
        accepted = None
        for theta in thetas:
            cand_t = fp.t + theta * (sol_t - fp.t)
            cand_p = fp.p + theta * (sol_p - fp.p)
            cand_y = fp.y + theta * (sol_y - fp.y)
            try:
                cand = _canonical_fixed_point(
                    cand_t, cand_p, cand_y, topology, profile, config, fp.t_min
                )
            except InfeasibleFixedPointError:
                continue
            cand_psi = objective_psi(cand.allocation(), profile)
            if cand_psi <= psi + 1e-12 * max(1.0, abs(psi)):
                accepted = (cand, cand_psi, theta)
                break
        if accepted is None:
            status = "stalled"
            iterations = v
            break

        fp, new_psi, theta = accepted
        theta_hist.append(theta)
        if new_psi > psi + 1e-8:
            violations += 1
        psi_hist.append(new_psi)
        if abs(new_psi - psi) <= config.tol_outer * max(1.0, abs(new_psi)):
            psi = new_psi
            status = "converged"
            iterations = v
            break
        psi = new_psi

    return SolveReport(
        psi_history=np.array(psi_hist),
        surrogate_history=np.array(surr_hist),
        kkt_residuals=np.array(kkt_hist),
        inner_iterations=np.array(inner_hist, dtype=int),
        theta_history=np.array(theta_hist),
        status=status,
        iterations=iterations,
        wall_time_s=time.perf_counter() - t_start,
        allocation=fp.allocation(),
        fixed_point=fp,
        descent_violations=violations,
        n_vars=5 * K,
        xi=6 * K,
    )
