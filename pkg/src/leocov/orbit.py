"""In-plane Clohessy-Wiltshire relative dynamics and angle maps.

Units follow the normalized case-study convention: 1 DU = 1e6 m and
1 TU = 100 s, so Earth's gravitational parameter is 3.986 DU^3/TU^2.

The LVLH frame has x radially outward and y along-track. The Earth center sits
at (-r_s, 0), so same-orbit positions lie on the circle of radius r_s around it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, ParameterError

MU_EARTH = 3.986  # DU^3 / TU^2
R_EARTH = 6.371  # DU


@dataclass(frozen=True)
class OrbitParams:
    r_s: float
    omega: float
    T_s: float
    R_e: float
    p_max: float
    mu_grav: float = MU_EARTH

    def __post_init__(self):
        if not (self.r_s > 0 and self.omega > 0 and self.R_e > 0):
            raise ParameterError("r_s, omega and R_e must be positive")
        if not (0.0 < self.p_max < self.r_s):
            raise ParameterError(f"p_max must lie in (0, r_s={self.r_s}), got {self.p_max}")
        if not math.isclose(self.T_s, 2.0 * math.pi / self.omega, rel_tol=1e-12):
            raise ParameterError("T_s must equal 2*pi/omega")

    @classmethod
    def from_altitude(cls, altitude: float, p_max: float, R_e: float = R_EARTH,
                      mu_grav: float = MU_EARTH) -> "OrbitParams":
        r_s = R_e + altitude
        omega = math.sqrt(mu_grav / r_s**3)
        return cls(r_s=r_s, omega=omega, T_s=2.0 * math.pi / omega, R_e=R_e,
                   p_max=p_max, mu_grav=mu_grav)

    @property
    def max_deviation_angle(self) -> float:
        """Largest |deviation angle| whose chord stays within p_max."""
        return 2.0 * math.asin(self.p_max / (2.0 * self.r_s))


@dataclass
class RelativeState:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(2)
        self.v = np.asarray(self.v, dtype=float).reshape(2)
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.v))):
            raise ValueError("relative state must be finite")

    @property
    def q(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])

    @classmethod
    def from_q(cls, q) -> "RelativeState":
        q = np.asarray(q, dtype=float)
        return cls(q[:2], q[2:4])


@dataclass(frozen=True)
class DiscreteSystem:
    A_d: np.ndarray
    B_d: np.ndarray
    dt: float


def cw_continuous(params: OrbitParams) -> tuple[np.ndarray, np.ndarray]:
    """State and input matrices of the planar CW equations, state (p, v)."""
    w = params.omega
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 0] = 3.0 * w * w
    A[2, 3] = 2.0 * w
    A[3, 2] = -2.0 * w
    B = np.zeros((4, 2))
    B[2:, :] = np.eye(2)
    return A, B


def discretize(A: np.ndarray, B: np.ndarray, dt: float) -> DiscreteSystem:
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * dt)
    return DiscreteSystem(A_d=E[:n, :n].copy(), B_d=E[:n, n:].copy(), dt=float(dt))


def cw_discrete(params: OrbitParams, dt: float) -> DiscreteSystem:
    return discretize(*cw_continuous(params), dt)


def propagate(state: RelativeState, u, sys: DiscreteSystem) -> RelativeState:
    q = sys.A_d @ state.q + sys.B_d @ np.asarray(u, dtype=float)
    return RelativeState.from_q(q)


def deviation_angle(p, r_s: float) -> float:
    """Arc angle between a displaced position and its chief, sgn(0) := +1."""
    x = float(p[0]) + r_s
    y = float(p[1])
    if x == 0.0 and y == 0.0:
        raise DomainError("deviation angle undefined at the Earth center (-r_s, 0)")
    # atan2(|y|, x) == arccos(x / hypot(x, y)) without arccos's loss near 0
    sign = 1.0 if y >= 0.0 else -1.0
    return sign * math.atan2(abs(y), x)


def deviation_angle_grad(p, r_s: float) -> np.ndarray:
    """Row gradient of the deviation angle with respect to p."""
    x = float(p[0]) + r_s
    y = float(p[1])
    d2 = x * x + y * y
    if d2 == 0.0:
        raise DomainError("deviation angle undefined at the Earth center (-r_s, 0)")
    return np.array([-y / d2, x / d2])


def configuration_angle(phi0: float, p, tau: float, params: OrbitParams) -> float:
    """Ground-frame angle of a satellite; not wrapped."""
    return phi0 + deviation_angle(p, params.r_s) + params.omega * tau


def on_circle_position(dphi: float, r_s: float) -> np.ndarray:
    """Relative position on the orbit circle at deviation angle ``dphi``."""
    s = math.sin(0.5 * dphi)
    return np.array([-2.0 * r_s * s * s, r_s * math.sin(dphi)])


def circle_residual(p, r_s: float) -> float:
    """|(p_x + r_s)^2 + p_y^2 - r_s^2|, zero on the orbit circle."""
    return abs((p[0] + r_s) ** 2 + p[1] ** 2 - r_s**2)
