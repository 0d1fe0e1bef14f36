"""Input-constrained receding-horizon tracking and the multi-waypoint loop.

The finite-horizon problem is condensed over the input sequence U = (u_0..u_{N-1}):

    f(U) = 0.5 U'HU + g'U + const,   ||u_k|| <= u_max,

with stage weights Q on q_1..q_N (q_0 is fixed) and R on every input. H is
badly conditioned for the case-study weights, so plain projected gradient
converges slowly. The solver first tries the unconstrained minimizer, then a
projected Newton method on the ball multipliers followed by a Newton polish of
the KKT system on the active set, and falls back to accelerated projected
gradient only if that fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .errors import ParameterError, StallError
from .orbit import DiscreteSystem, OrbitParams, RelativeState, deviation_angle, on_circle_position


@dataclass(frozen=True)
class ControlParams:
    dt: float = 0.6
    N: int = 30
    Q_aug: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 1.0, 1.0]))
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    u_max: float = 0.01
    arrive_eps: float = 1e-3
    W: int = 3
    max_iter: int = 2000
    tol: float = 1e-8
    max_steps_per_waypoint: int = 2000

    def __post_init__(self):
        Q = np.asarray(self.Q_aug, float)
        R = np.asarray(self.R, float)
        if Q.shape != (4, 4) or R.shape != (2, 2):
            raise ParameterError("Q_aug must be 4x4 and R 2x2")
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0:
            raise ParameterError("Q_aug must be positive definite")
        if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
            raise ParameterError("R must be positive definite")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.N < 1 or self.W < 1:
            raise ParameterError("N and W must be at least 1")
        if not self.u_max > 0:
            raise ParameterError("u_max must be positive")
        if not self.arrive_eps > 0:
            raise ParameterError("arrive_eps must be positive")

    @property
    def T_f(self) -> float:
        return self.N * self.dt


# --------------------------------------------------------------------------
# condensed QP


@dataclass
class CondensedQP:
    H: np.ndarray
    Phi: np.ndarray
    Gamma: np.ndarray
    Qbar: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    chol: tuple
    L: float

    @classmethod
    def build(cls, sys: DiscreteSystem, Q, R, N: int) -> "CondensedQP":
        A, B = sys.A_d, sys.B_d
        Phi = np.zeros((4 * N, 4))
        Gamma = np.zeros((4 * N, 2 * N))
        Ak = np.eye(4)
        powers = []
        for k in range(N):
            powers.append(Ak)
            Ak = A @ Ak
            Phi[4 * k:4 * k + 4] = Ak
        # q_{k+1} = A^{k+1} q0 + sum_{j<=k} A^{k-j} B u_j
        for k in range(N):
            for j in range(k + 1):
                Gamma[4 * k:4 * k + 4, 2 * j:2 * j + 2] = powers[k - j] @ B
        Qbar = np.kron(np.eye(N), Q)
        Rbar = np.kron(np.eye(N), R)
        H = 2.0 * (Gamma.T @ Qbar @ Gamma + Rbar)
        H = 0.5 * (H + H.T)
        return cls(H, Phi, Gamma, Qbar, np.asarray(Q, float), np.asarray(R, float),
                   cho_factor(H), float(np.linalg.eigvalsh(H)[-1]))

    def linear_term(self, q0, q_target) -> np.ndarray:
        e = self.Phi @ q0 - np.tile(q_target, self.Phi.shape[0] // 4)
        return 2.0 * self.Gamma.T @ (self.Qbar @ e)

    def cost(self, U, q0, q_target) -> float:
        """Full objective including the constant q0 stage."""
        e = self.Phi @ q0 + self.Gamma @ U - np.tile(q_target, self.Phi.shape[0] // 4)
        d0 = q0 - q_target
        N = U.shape[0] // 2
        Ur = U.reshape(N, 2)
        return float(e @ self.Qbar @ e + d0 @ self.Q @ d0 + np.einsum("ki,ij,kj->", Ur, self.R, Ur))


def _ball_project(U, r):
    V = U.reshape(-1, 2).copy()
    nrm = np.sqrt((V * V).sum(axis=1))
    over = nrm > r
    V[over] *= (r / nrm[over])[:, None]
    return V.ravel()


def pg_residual(H, g, U, r, L) -> float:
    """Fixed-point residual of projected gradient with step 1/L, scaled by L."""
    return L * float(np.linalg.norm(U - _ball_project(U - (H @ U + g) / L, r)))


def _dual_newton(H, g, r, lam0=None, max_iter=60, tol=1e-12):
    """Projected Newton ascent on the multipliers of ||u_k||^2 <= r^2.

    For fixed multipliers the primal minimizer is U = -(H + D)^-1 g; the dual
    gradient is 0.5 (||u_k||^2 - r^2) and its Hessian is -S with
    S_jk = u_j' [(H + D)^-1]_jk u_k.
    """
    N = g.shape[0] // 2
    lam = np.zeros(N) if lam0 is None else np.maximum(np.asarray(lam0, float), 0.0)
    r2 = r * r

    def primal(lam):
        c = cho_factor(H + np.diag(np.repeat(lam, 2)))
        U = -cho_solve(c, g)
        d = 0.5 * U @ (H @ U) + g @ U + 0.5 * float(lam @ ((U.reshape(N, 2) ** 2).sum(1) - r2))
        return U, c, d

    U, c, d = primal(lam)
    for it in range(max_iter):
        Ur = U.reshape(N, 2)
        grad = 0.5 * ((Ur ** 2).sum(1) - r2)
        pg = np.where(lam > 0, grad, np.maximum(grad, 0.0))
        if np.abs(pg).max() <= tol * r2:
            return U, lam, True, it
        Minv = cho_solve(c, np.eye(2 * N)).reshape(N, 2, N, 2)
        S = np.einsum("ja,jakb,kb->jk", Ur, Minv, Ur)
        # epsilon-active set: multipliers about to hit zero are held there
        dS = np.maximum(np.diag(S), 1e-300)
        w = float(np.linalg.norm(lam - np.maximum(lam + grad / dS, 0.0)))
        eps_k = min(1e-3 * max(1.0, float(lam.max())), w)
        free = ~((lam <= eps_k) & (grad < 0))
        step = np.zeros(N)
        step[free] = np.linalg.solve(S[np.ix_(free, free)], grad[free])
        t = 1.0
        while True:
            lam_new = np.maximum(lam + t * step, 0.0)
            U_new, c_new, d_new = primal(lam_new)
            # Armijo on the concave dual
            if d_new >= d + 1e-4 * float(grad @ (lam_new - lam)):
                break
            t *= 0.5
            if t < 1e-10:
                # no ascent left: round-off floor
                return U, lam, False, it
        lam, U, c, d = lam_new, U_new, c_new, d_new
    return U, lam, False, max_iter


def _kkt_polish(H, g, r, U, lam, iters=8):
    """Newton on the KKT equations with the active set of ``lam`` held fixed."""
    N = g.shape[0] // 2
    act = np.flatnonzero(lam > 0)
    if act.size == 0:
        return U, lam
    U = U.copy()
    la = lam[act].copy()
    m = act.size
    for _ in range(iters):
        lam_full = np.zeros(N)
        lam_full[act] = la
        Ur = U.reshape(N, 2)
        F1 = H @ U + g + np.repeat(lam_full, 2) * U
        F2 = 0.5 * ((Ur[act] ** 2).sum(1) - r * r)
        Jc = np.zeros((m, 2 * N))
        for a, k in enumerate(act):
            Jc[a, 2 * k:2 * k + 2] = Ur[k]
        K = np.block([[H + np.diag(np.repeat(lam_full, 2)), Jc.T], [Jc, np.zeros((m, m))]])
        try:
            d = np.linalg.solve(K, -np.concatenate([F1, F2]))
        except np.linalg.LinAlgError:
            break
        U = U + d[:2 * N]
        la = la + d[2 * N:]
        if np.abs(d[:2 * N]).max() <= 1e-16 * max(1.0, np.abs(U).max()):
            break
    out = np.zeros(N)
    out[act] = la
    return U, out


@dataclass
class LqrSolution:
    U: np.ndarray
    states: np.ndarray
    cost: float
    residual: float
    converged: bool
    method: str
    iterations: int
    multipliers: np.ndarray | None = None

    @property
    def inputs(self) -> np.ndarray:
        return self.U.reshape(-1, 2)


def solve_constrained_lqr(q0, q_target, sys: DiscreteSystem, params: ControlParams,
                          qp: CondensedQP | None = None, lam0=None) -> LqrSolution:
    """Minimize the soft-terminal tracking cost under ||u_k|| <= u_max.

    Returns the input sequence, the predicted states q_0..q_N and the
    projected-gradient residual of the returned point.
    """
    q0 = np.asarray(q0, float)
    q_target = np.asarray(q_target, float)
    if qp is None:
        qp = CondensedQP.build(sys, params.Q_aug, params.R, params.N)
    r = float(params.u_max)
    g = qp.linear_term(q0, q_target)
    U = -cho_solve(qp.chol, g)
    method, iters, lam = "unconstrained", 0, None
    if math.isfinite(r) and np.sqrt((U.reshape(-1, 2) ** 2).sum(1)).max() > r:
        U, lam, _, iters = _dual_newton(qp.H, g, r, lam0)
        method = "dual-newton"
        U = _ball_project(U, r)
        if lam0 is not None and pg_residual(qp.H, g, U, r, qp.L) >= params.tol:
            U_c, lam_c, _, it_c = _dual_newton(qp.H, g, r, None)
            U_c = _ball_project(U_c, r)
            iters += it_c
            if pg_residual(qp.H, g, U_c, r, qp.L) < pg_residual(qp.H, g, U, r, qp.L):
                U, lam = U_c, lam_c
        if pg_residual(qp.H, g, U, r, qp.L) >= params.tol:
            U_p, lam_p = _kkt_polish(qp.H, g, r, U, lam)
            U_p = _ball_project(U_p, r)
            if (lam_p >= 0).all() and pg_residual(qp.H, g, U_p, r, qp.L) < pg_residual(qp.H, g, U, r, qp.L):
                U, lam = U_p, lam_p
                method = "dual-newton+kkt"
    res = pg_residual(qp.H, g, U, r, qp.L)
    if res >= params.tol:
        U2, it2, res2 = kernels.apg_ball_qp(qp.H, g, r, U, qp.L, params.max_iter, params.tol)
        if math.isfinite(r):
            U2 = _ball_project(U2, r)
        res2 = pg_residual(qp.H, g, U2, r, qp.L)
        if res2 < res:
            U, res = U2, res2
            method = "apg"
        iters += it2
    ok = res < params.tol
    states = np.vstack([q0, (qp.Phi @ q0 + qp.Gamma @ U).reshape(-1, 4)])
    return LqrSolution(U, states, qp.cost(U, q0, q_target), res, ok, method, iters, lam)


# --------------------------------------------------------------------------
# waypoints and the multi-waypoint loop


@dataclass
class WaypointPlan:
    points: list[np.ndarray]

    def __len__(self):
        return len(self.points)


def make_waypoints(p_start, p_target, W: int, params: OrbitParams) -> WaypointPlan:
    """W on-circle points at equal deviation-angle spacing; the last is ``p_target``."""
    if W < 1:
        raise ParameterError(f"need at least one waypoint, got W={W}")
    d0 = deviation_angle(p_start, params.r_s)
    d1 = deviation_angle(p_target, params.r_s)
    pts = [on_circle_position(d0 + (m / W) * (d1 - d0), params.r_s) for m in range(1, W)]
    pts.append(np.asarray(p_target, float).copy())
    return WaypointPlan(pts)


@dataclass
class StepInfo:
    u: np.ndarray
    cost: float
    reached: bool
    finished: bool


class WaypointController:
    """Per-satellite receding-horizon controller walking through a waypoint plan."""

    def __init__(self, state: RelativeState, plan: WaypointPlan, sys: DiscreteSystem,
                 params: ControlParams, qp: CondensedQP | None = None):
        self.state = RelativeState(state.p.copy(), state.v.copy())
        self.plan = plan
        self.sys = sys
        self.params = params
        self.qp = qp if qp is not None else CondensedQP.build(sys, params.Q_aug, params.R, params.N)
        self.m = 0
        self.steps_on_leg = 0
        self.cost = 0.0
        self.last_solution: LqrSolution | None = None
        self.max_residual = 0.0
        self.nonconverged = 0

    @property
    def finished(self) -> bool:
        return self.m >= len(self.plan)

    @property
    def target(self) -> np.ndarray:
        return np.concatenate([self.plan.points[self.m], np.zeros(2)])

    def arrived(self) -> bool:
        return float(np.linalg.norm(self.state.q - self.target)) < self.params.arrive_eps

    def advance_if_arrived(self) -> bool:
        """Move to the next waypoint if the current one is reached."""
        if not self.finished and self.arrived():
            self.m += 1
            self.steps_on_leg = 0
            return True
        return False

    def step(self) -> StepInfo:
        """Solve, apply the first input for one dt, and check arrival."""
        if self.finished:
            return StepInfo(np.zeros(2), 0.0, False, True)
        if self.steps_on_leg >= self.params.max_steps_per_waypoint:
            raise StallError(f"waypoint {self.m} not reached within "
                             f"{self.params.max_steps_per_waypoint} steps")
        lam0 = None
        prev = self.last_solution
        if prev is not None and prev.multipliers is not None:
            # shifted warm start for the receding horizon
            lam0 = np.append(prev.multipliers[1:], prev.multipliers[-1])
        sol = solve_constrained_lqr(self.state.q, self.target, self.sys, self.params, self.qp, lam0)
        self.last_solution = sol
        self.max_residual = max(self.max_residual, sol.residual)
        self.nonconverged += int(not sol.converged)
        u = sol.inputs[0].copy()
        self.state = RelativeState.from_q(self.sys.A_d @ self.state.q + self.sys.B_d @ u)
        c = float(u @ self.params.R @ u) * self.params.dt
        self.cost += c
        self.steps_on_leg += 1
        reached = self.advance_if_arrived()
        return StepInfo(u, c, reached, self.finished)


@dataclass
class MwmpcResult:
    states: list[np.ndarray]
    inputs: list[np.ndarray]
    control_cost: float
    status: str  # "arrived" | "attacked"
    time: float
    waypoint_index: int


def mwmpc_run(sat_state: RelativeState, plan: WaypointPlan, sys: DiscreteSystem,
              params: ControlParams, event_probe=None, t0: float = 0.0) -> MwmpcResult:
    """Drive one satellite through ``plan``, probing for attacks at every waypoint.

    ``event_probe(t)`` returns True when an attack is detected at time t.
    """
    ctl = WaypointController(sat_state, plan, sys, params)
    t = t0
    states = [ctl.state.q.copy()]
    inputs = []

    def probe():
        return event_probe is not None and bool(event_probe(t))

    while not ctl.finished:
        if ctl.advance_if_arrived():
            if probe():
                return MwmpcResult(states, inputs, ctl.cost, "attacked", t, ctl.m)
            continue
        try:
            info = ctl.step()
        except StallError as e:
            e.trajectory = states
            raise
        t += params.dt
        states.append(ctl.state.q.copy())
        inputs.append(info.u)
        if info.reached and probe():
            return MwmpcResult(states, inputs, ctl.cost, "attacked", t, ctl.m)
    return MwmpcResult(states, inputs, ctl.cost, "arrived", t, ctl.m)
