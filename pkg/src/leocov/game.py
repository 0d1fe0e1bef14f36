"""Coverage game: gradients, feasible projection, distributed planner, certificates.

Because every satellite and the demand rotate together, integrals of the global
intensity over a satellite's half-regions do not depend on tau. The gradient
is therefore a closed-form sum of triangle antiderivatives; only the demand
term (which is dropped by the planner) needs time sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coverage import (Configuration, DemandProfile, QuadSettings, SatelliteSpec, TWO_PI,
                       potential)
from .errors import DomainError, ParameterError, ProtocolError, QueryError
from .orbit import OrbitParams, deviation_angle, deviation_angle_grad, on_circle_position

C_PLUS, C_MINUS, OUTSIDE = "C_plus", "C_minus", "outside"


# --------------------------------------------------------------------------
# closed-form pieces


def _tent_antiderivative(t, a, psi):
    """Integral of a centered triangle (half-width a, peak psi) from -inf to t."""
    k = psi / a
    if t <= -a:
        return 0.0
    if t <= 0.0:
        return 0.5 * k * (t + a) ** 2
    if t < a:
        return 0.5 * a * psi + psi * t - 0.5 * k * t * t
    return a * psi


def tent_integral(x0: float, x1: float, c: float, a: float, psi: float) -> float:
    """Integral over [x0, x1] (x1 - x0 <= 2*pi) of a 2*pi-periodic triangle centered at c."""
    total = 0.0
    # lifts of the center that can touch [x0, x1]
    m_lo = math.floor((x0 - a - c) / TWO_PI)
    m_hi = math.ceil((x1 + a - c) / TWO_PI)
    for m in range(m_lo, m_hi + 1):
        cm = c + TWO_PI * m
        total += _tent_antiderivative(x1 - cm, a, psi) - _tent_antiderivative(x0 - cm, a, psi)
    return total


def _half_integrals(phi, alpha, members):
    """(int over C+ of beta, int over C- of beta); members are (center, alpha, psi)."""
    ip = im = 0.0
    for c, a, s in members:
        ip += tent_integral(phi, phi + alpha, c, a, s)
        im += tent_integral(phi - alpha, phi, c, a, s)
    return ip, im


def _members(i: int, config: Configuration) -> list[int]:
    if config.n <= 3:
        return list(config.order)
    prev, nxt = config.neighbors(i)
    return [prev, i, nxt]


def half_region_integrals(i: int, config: Configuration) -> tuple[float, float]:
    """Integrals of the composite intensity over C+_i and C-_i."""
    if i not in config.order:
        raise QueryError(f"satellite {i} is not alive")
    members = [(config.center(j), config.specs[j].alpha, config.specs[j].psi_max)
               for j in _members(i, config)]
    return _half_integrals(config.center(i), config.specs[i].alpha, members)


# --------------------------------------------------------------------------
# gradients


def intensity_gradient(spec: SatelliteSpec, p_i, theta_class: str, params: OrbitParams) -> np.ndarray:
    """d psi_i / d p_i on one half-region (piecewise constant in theta)."""
    g = spec.k * deviation_angle_grad(p_i, params.r_s)
    if theta_class == C_PLUS:
        return g
    if theta_class == C_MINUS:
        return -g
    if theta_class == OUTSIDE:
        return np.zeros(2)
    raise ValueError(f"unknown region class {theta_class!r}")


def potential_gradient(i: int, config: Configuration, quad: QuadSettings | None = None) -> np.ndarray:
    """dJ/dp_i from satellite i's and its adjacent neighbors' data.

    ``quad`` is accepted for interface symmetry; the integral is exact.
    """
    ip, im = half_region_integrals(i, config)
    spec = config.specs[i]
    return spec.k * deviation_angle_grad(config.p[i], config.params.r_s) * (ip - im)


def angle_gradient(i: int, config: Configuration) -> float:
    """dJ/d(phi_i)."""
    ip, im = half_region_integrals(i, config)
    return config.specs[i].k * (ip - im)


def demand_gradient_term(i: int, config: Configuration, profile: DemandProfile,
                         quad: QuadSettings = QuadSettings()) -> np.ndarray:
    """Time average of the demand term the planner drops; zero up to sampling error."""
    if i not in config.order:
        raise QueryError(f"satellite {i} is not alive")
    spec = config.specs[i]
    phi = config.center(i)
    x, w = quad.gl
    a = spec.alpha
    nodes_p = phi + 0.5 * a * (x + 1.0)
    nodes_m = phi - a + 0.5 * a * (x + 1.0)
    shifts = TWO_PI * np.arange(quad.n_tau) / quad.n_tau
    mu_p = profile(nodes_p[None, :] + shifts[:, None])
    mu_m = profile(nodes_m[None, :] + shifts[:, None])
    diff = float(((mu_p - mu_m) @ (0.5 * a * w)).sum()) / quad.n_tau
    return spec.k * deviation_angle_grad(config.p[i], config.params.r_s) * diff


# --------------------------------------------------------------------------
# feasible set


def project_feasible(p_raw, params: OrbitParams) -> np.ndarray:
    """Nearest point of the feasible arc to ``p_raw``."""
    x = float(p_raw[0]) + params.r_s
    y = float(p_raw[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise DomainError("cannot project a non-finite point")
    if x == 0.0 and y == 0.0:
        raise DomainError("projection undefined at the Earth center (-r_s, 0)")
    delta = math.atan2(y, x)
    dmax = params.max_deviation_angle
    # the nearest arc point minimizes angular distance; clamp wins ties
    if delta >= dmax:
        delta = dmax
    elif delta <= -dmax:
        delta = -dmax
    return on_circle_position(delta, params.r_s)


def on_bound(dphi: float, params: OrbitParams, rtol: float = 1e-9) -> bool:
    return abs(dphi) >= params.max_deviation_angle * (1.0 - rtol)


# --------------------------------------------------------------------------
# distributed planner


@dataclass(frozen=True)
class PlannerParams:
    s0: float = 5e-3
    eps: float = 1e-5
    max_cnt: int = 5
    max_k: int = 5000
    quad: QuadSettings = QuadSettings()
    track_potential: bool = True

    def __post_init__(self):
        if not self.s0 > 0:
            raise ParameterError("s0 must be positive")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.max_cnt < 1 or self.max_k < 1:
            raise ParameterError("max_cnt and max_k must be at least 1")

    def step(self, k: int) -> float:
        return self.s0 / (k + 1)


@dataclass(frozen=True)
class NeighborMessage:
    sender: int
    round: int
    p: np.ndarray
    alpha: float
    psi_max: float
    phi0: float
    exited: bool


@dataclass
class AgentState:
    id: int
    spec: SatelliteSpec
    neighbors: tuple[int, ...]
    p_current: np.ndarray
    exit_flag: bool = False
    stall_count: int = 0
    p_target: np.ndarray | None = None
    timed_out: bool = False

    def message(self, k: int) -> NeighborMessage:
        p = self.p_target if self.exit_flag and self.p_target is not None else self.p_current
        return NeighborMessage(self.id, k, p.copy(), self.spec.alpha, self.spec.psi_max,
                               self.spec.phi0, self.exit_flag)


def make_agents(config: Configuration) -> dict[int, AgentState]:
    agents = {}
    for i in config.order:
        spec = config.specs[i]
        nb = tuple(j for j in dict.fromkeys(_members(i, config)) if j != i)
        a = AgentState(i, spec, nb, config.p[i].copy())
        if spec.anchored:
            a.exit_flag = True
            a.p_target = a.p_current.copy()
        agents[i] = a
    return agents


def _agent_gradient(agent: AgentState, msgs, params: OrbitParams) -> np.ndarray:
    spec = agent.spec
    phi = spec.phi0 + deviation_angle(agent.p_current, params.r_s)
    members = [(phi, spec.alpha, spec.psi_max)]
    for m in msgs:
        members.append((m.phi0 + deviation_angle(m.p, params.r_s), m.alpha, m.psi_max))
    ip, im = _half_integrals(phi, spec.alpha, members)
    return spec.k * deviation_angle_grad(agent.p_current, params.r_s) * (ip - im)


def dpgd_round(agents: dict[int, AgentState], inbox: dict[int, NeighborMessage], k: int,
               params: PlannerParams, orbit: OrbitParams):
    """One synchronous planner round.

    Every agent reads only ``inbox`` (messages from the previous round), so
    the update order does not matter. Returns the new agents and the outbox.
    """
    new = {}
    for i, ag in agents.items():
        ag = AgentState(ag.id, ag.spec, ag.neighbors, ag.p_current.copy(), ag.exit_flag,
                        ag.stall_count, None if ag.p_target is None else ag.p_target.copy(),
                        ag.timed_out)
        if not ag.exit_flag:
            msgs = []
            for j in ag.neighbors:
                m = inbox.get(j)
                if m is None:
                    raise ProtocolError(f"agent {i} got no message from neighbor {j} in round {k}")
                msgs.append(m)
            g = _agent_gradient(ag, msgs, orbit)
            p_new = project_feasible(ag.p_current - params.step(k) * g, orbit)
            if np.linalg.norm(g) < params.eps or np.linalg.norm(p_new - ag.p_current) < params.eps:
                ag.stall_count += 1
            else:
                ag.stall_count = 0
                ag.p_current = p_new
            if ag.stall_count >= params.max_cnt:
                ag.exit_flag = True
                ag.p_target = ag.p_current.copy()
            elif k + 1 >= params.max_k:
                ag.exit_flag = True
                ag.timed_out = True
                ag.p_target = ag.p_current.copy()
        new[i] = ag
    outbox = {i: ag.message(k) for i, ag in new.items()}
    return new, outbox


@dataclass
class PlanResult:
    config: Configuration
    report: "OptimalityReport"
    rounds: int
    converged: bool
    J_history: list[float] = field(default_factory=list)


def plan(config: Configuration, profile: DemandProfile, params: PlannerParams = PlannerParams(),
         callback=None) -> PlanResult:
    """Run rounds until every agent has exited; returns the target configuration.

    ``callback(k, config_k, J_k)`` is called for the initial iterate (k = 0)
    and after every round.
    """
    if config.n < 1:
        raise ParameterError("planning needs at least one alive satellite")
    orbit = config.params
    agents = make_agents(config)
    outbox = {i: ag.message(-1) for i, ag in agents.items()}
    cur = config.copy()
    hist = []

    def observe(k):
        J = potential(cur, profile, params.quad) if params.track_potential else float("nan")
        hist.append(J)
        if callback is not None:
            callback(k, cur, J)

    observe(0)
    k = 0
    while not all(a.exit_flag for a in agents.values()):
        agents, outbox = dpgd_round(agents, outbox, k, params, orbit)
        k += 1
        for i, a in agents.items():
            cur.p[i] = a.p_current.copy()
        observe(k)
    converged = not any(a.timed_out for a in agents.values())
    report = optimality_certificate(cur, params.quad, eps=params.eps)
    return PlanResult(cur, report, k, converged, hist)


# --------------------------------------------------------------------------
# certificates


def stationarity_residual(i: int, config: Configuration, quad: QuadSettings | None = None) -> float:
    """Normalized C+/C- imbalance of the composite intensity."""
    ip, im = half_region_integrals(i, config)
    tot = ip + im
    return abs(ip - im) / tot if tot > 0 else 0.0


def coupled_outer_block(x, y, beta: float) -> np.ndarray:
    """Block matrix [[x xᵀ, −β x yᵀ], [−β y xᵀ, y yᵀ]]; PSD exactly when |β| <= 1 for nonzero x, y."""
    x = np.asarray(x, float).reshape(-1, 1)
    y = np.asarray(y, float).reshape(-1, 1)
    return np.block([[x @ x.T, -beta * x @ y.T], [-beta * y @ x.T, y @ y.T]])


def is_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    M = 0.5 * (M + M.T)
    scale = max(1.0, float(np.abs(M).max()))
    return bool(np.linalg.eigvalsh(M).min() >= -tol * scale)


INTERIOR_STATIONARY = "interior-stationary"
BOUNDARY = "boundary"
NON_STATIONARY = "non-stationary"


@dataclass
class OptimalityReport:
    ids: list[int]
    classification: dict[int, str]
    residuals: dict[int, float]
    anchored: dict[int, bool]
    pairs: list[tuple[int, int]]
    overlaps: list[float]
    margins: list[float]
    block_psd: list[bool]
    hessian_psd: bool
    boundary_directional: dict[int, float]

    @property
    def certified(self) -> bool:
        return (all(c != NON_STATIONARY for c in self.classification.values())
                and all(self.block_psd) and self.hessian_psd)

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "satellites": [{"id": i, "class": self.classification[i], "residual": self.residuals[i],
                            "anchored": self.anchored[i],
                            "boundary_directional": self.boundary_directional.get(i)}
                           for i in self.ids],
            "pairs": [{"i": a, "j": b, "overlap": o, "margin": m, "block_psd": f}
                      for (a, b), o, m, f in zip(self.pairs, self.overlaps, self.margins, self.block_psd)],
            "hessian_psd": self.hessian_psd,
            "certified": self.certified,
        }


def pair_overlap(i: int, j: int, config: Configuration) -> float:
    """alpha_i + alpha_j minus the forward gap from i to j (positive when overlapping)."""
    gap = float(np.mod(config.center(j) - config.center(i), TWO_PI))
    return config.specs[i].alpha + config.specs[j].alpha - gap


def optimality_certificate(config: Configuration, quad: QuadSettings | None = None,
                           eps: float = 1e-5) -> OptimalityReport:
    """Classify satellites and check the banded Hessian for positive semidefiniteness.

    Perturbations of boundary (and anchored) satellites are zeroed, so their
    Hessian rows and columns drop out of the blocks.
    """
    ids = list(config.order)
    n = len(ids)
    r_s = config.params.r_s
    cls, res, anch, bdir = {}, {}, {}, {}
    free = {}
    for i in ids:
        spec = config.specs[i]
        dphi = config.dphi(i)
        res[i] = stationarity_residual(i, config)
        anch[i] = spec.anchored
        if spec.anchored or on_bound(dphi, config.params):
            cls[i] = BOUNDARY
            free[i] = False
            g = angle_gradient(i, config)
            # derivative of J along the feasible tangent directions
            if spec.anchored:
                dirs = []
            elif dphi > 0:
                dirs = [-1.0]
            else:
                dirs = [1.0]
            bdir[i] = min((d * g for d in dirs), default=0.0)
        else:
            free[i] = True
            cls[i] = INTERIOR_STATIONARY if res[i] < 10.0 * eps else NON_STATIONARY
    v = {i: (config.specs[i].k * deviation_angle_grad(config.p[i], r_s) if free[i] else np.zeros(2))
         for i in ids}
    pairs, overlaps, margins, psd = [], [], [], []
    H = np.zeros((2 * n, 2 * n))
    if n >= 2:
        npairs = n if n >= 3 else 1
        for a in range(npairs):
            i, j = ids[a], ids[(a + 1) % n]
            d = max(pair_overlap(i, j, config), 0.0)
            ai, aj = config.specs[i].alpha, config.specs[j].alpha
            vi, vj = v[i][:, None], v[j][:, None]
            blk = np.block([[ai * vi @ vi.T, -d * vi @ vj.T], [-d * vj @ vi.T, aj * vj @ vj.T]])
            pairs.append((i, j))
            overlaps.append(d)
            margins.append(math.sqrt(ai * aj) - abs(d))
            psd.append(is_psd(blk))
            ia, ja = 2 * a, 2 * ((a + 1) % n)
            H[ia:ia + 2, ia:ia + 2] += blk[:2, :2]
            H[ja:ja + 2, ja:ja + 2] += blk[2:, 2:]
            H[ia:ia + 2, ja:ja + 2] += blk[:2, 2:]
            H[ja:ja + 2, ia:ia + 2] += blk[2:, :2]
    elif n == 1:
        i = ids[0]
        H[:2, :2] = 2.0 * config.specs[i].alpha * np.outer(v[i], v[i])
    return OptimalityReport(ids, cls, res, anch, pairs, overlaps, margins, psd,
                            is_psd(H) if n else True, bdir)
