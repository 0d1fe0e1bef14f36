"""Coverage model: intensities on the ground-track circle, costs and potential.

Angles are radians and stored unwrapped; wrapping happens only where positions
on the circle are compared.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ParameterError, QueryError
from .orbit import OrbitParams, configuration_angle, deviation_angle, on_circle_position

TWO_PI = 2.0 * math.pi


def wrap_2pi(theta):
    return np.mod(theta, TWO_PI)


def wrap_pi(theta):
    return np.mod(np.asarray(theta) + math.pi, TWO_PI) - math.pi


class NonAdjacentOverlapWarning(UserWarning):
    """Two satellites that are not ring neighbors cover the same ground."""


@dataclass(frozen=True)
class QuadSettings:
    n_tau: int = 64
    gl_order: int = 8

    def __post_init__(self):
        if self.n_tau < 1 or self.gl_order < 1:
            raise ParameterError("n_tau and gl_order must be positive")

    @property
    def gl(self):
        return _gl_cache(self.gl_order)


_GL = {}


def _gl_cache(order):
    if order not in _GL:
        _GL[order] = kernels.gauss_legendre(order)
    return _GL[order]


@dataclass(frozen=True)
class SatelliteSpec:
    id: int
    alpha: float
    psi_max: float
    phi0: float = 0.0
    anchored: bool = False
    alive: bool = True

    def __post_init__(self):
        if not (0.0 < self.alpha < math.pi):
            raise ParameterError(f"satellite {self.id}: alpha must lie in (0, pi), got {self.alpha}")
        if not self.psi_max > 0:
            raise ParameterError(f"satellite {self.id}: psi_max must be positive")

    @property
    def k(self) -> float:
        return self.psi_max / self.alpha


@dataclass(frozen=True)
class ArcInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.hi - self.lo < TWO_PI):
            raise ValueError("arc length must lie in [0, 2*pi)")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, theta) -> np.ndarray:
        """Open-interval membership, modulo 2*pi."""
        off = np.mod(np.asarray(theta, dtype=float) - self.lo, TWO_PI)
        return (off > 0.0) & (off < self.length)


@dataclass
class DemandProfile:
    """Wrapped Gaussian mixture scaled so that its integral equals ``scale``."""

    components: list[tuple[float, float, float]]
    scale: float = 1.0

    def __post_init__(self):
        if not self.components:
            raise ParameterError("demand needs at least one component")
        for mean, std, w in self.components:
            if not (std > 0 and w >= 0):
                raise ParameterError("demand components need std > 0 and weight >= 0")
        wsum = sum(c[2] for c in self.components)
        if not wsum > 0:
            raise ParameterError("demand weights must not all be zero")
        self.components = [(float(m), float(s), float(w) / wsum) for m, s, w in self.components]
        if not self.scale >= 0:
            raise ParameterError("demand scale must be nonnegative")
        self._arrays = None

    @classmethod
    def normalized(cls, components, total: float) -> "DemandProfile":
        return cls(list(components), scale=float(total))

    @classmethod
    def random(cls, rng: np.random.Generator, n_components: int = 3, total: float = 1.0,
               std_range=(0.15, 1.0)) -> "DemandProfile":
        comps = [(float(rng.uniform(0, TWO_PI)), float(rng.uniform(*std_range)),
                  float(rng.uniform(0.2, 1.0))) for _ in range(n_components)]
        return cls(comps, scale=total)

    @property
    def arrays(self):
        if self._arrays is None:
            m = np.array([c[0] for c in self.components])
            s = np.array([c[1] for c in self.components])
            w = np.array([c[2] for c in self.components])
            self._arrays = (m, s, w, float(self.scale))
        return self._arrays

    def __call__(self, theta):
        return kernels.demand_values(theta, self.arrays)


def demand(profile: DemandProfile, theta):
    return profile(theta)


def coverage_half_angle(fov: float, r_s: float, R_e: float) -> float:
    """Earth-central half-angle of the footprint of a nadir cone of full angle ``fov``."""
    if not (0.0 < fov < math.pi):
        raise ParameterError(f"fov must lie in (0, pi), got {fov}")
    s = (r_s / R_e) * math.sin(0.5 * fov)
    if s > 1.0:
        raise ParameterError(
            f"fov {math.degrees(fov):.3f} deg misses the Earth from r_s={r_s}: "
            f"(r_s/R_e)*sin(fov/2) = {s:.6f} > 1")
    return math.asin(s) - 0.5 * fov


@dataclass
class Configuration:
    """Alive satellites in ring order with their on-circle relative positions."""

    params: OrbitParams
    order: list[int]
    specs: dict[int, SatelliteSpec]
    p: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.order = list(self.order)
        if len(set(self.order)) != len(self.order):
            raise ParameterError("ring order lists a satellite twice")
        for i in self.order:
            if i not in self.specs:
                raise ParameterError(f"satellite {i} has no spec")
            if not self.specs[i].alive:
                raise ParameterError(f"satellite {i} is dead but in the ring")
            self.p[i] = np.asarray(self.p.get(i, np.zeros(2)), dtype=float).reshape(2).copy()

    @property
    def n(self) -> int:
        return len(self.order)

    def copy(self) -> "Configuration":
        return Configuration(self.params, list(self.order), dict(self.specs),
                             {i: v.copy() for i, v in self.p.items() if i in self.specs})

    def with_position(self, i: int, p) -> "Configuration":
        c = self.copy()
        c.p[i] = np.asarray(p, dtype=float).reshape(2).copy()
        return c

    def with_spec(self, spec: SatelliteSpec) -> "Configuration":
        c = self.copy()
        c.specs[spec.id] = spec
        return c

    def index(self, i: int) -> int:
        try:
            return self.order.index(i)
        except ValueError:
            raise QueryError(f"satellite {i} is not alive in this configuration") from None

    def neighbors(self, i: int) -> tuple[int, int]:
        """(previous, next) along the direction of motion."""
        k = self.index(i)
        n = self.n
        return self.order[(k - 1) % n], self.order[(k + 1) % n]

    def dphi(self, i: int) -> float:
        return deviation_angle(self.p[i], self.params.r_s)

    def center(self, i: int) -> float:
        """Configuration angle at tau = 0."""
        return self.specs[i].phi0 + self.dphi(i)

    def arrays(self):
        """(centers, alphas, psis) in ring order."""
        c = np.array([self.center(i) for i in self.order])
        a = np.array([self.specs[i].alpha for i in self.order])
        s = np.array([self.specs[i].psi_max for i in self.order])
        return c, a, s

    def is_feasible(self, i: int, tol: float = 1e-10) -> bool:
        p = self.p[i]
        r = self.params.r_s
        on = abs((p[0] + r) ** 2 + p[1] ** 2 - r * r) <= tol * r * r
        return on and float(np.hypot(*p)) <= self.params.p_max * (1 + tol)

    def non_adjacent_overlaps(self) -> list[tuple[int, int]]:
        """Pairs that overlap without being ring neighbors."""
        ids = self.order
        c, a, _ = self.arrays()
        out = []
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                if ids[y] in self.neighbors(ids[x]):
                    continue
                if abs(float(wrap_pi(c[x] - c[y]))) < a[x] + a[y]:
                    out.append((ids[x], ids[y]))
        return out


def make_configuration(params: OrbitParams, specs, p=None) -> Configuration:
    """Ring of alive specs ordered by initial angle."""
    specs = [s for s in specs if s.alive]
    specs.sort(key=lambda s: (s.phi0 % TWO_PI, s.id))
    return Configuration(params, [s.id for s in specs], {s.id: s for s in specs}, dict(p or {}))


def coverage_region(spec: SatelliteSpec, p_i, tau: float, params: OrbitParams):
    """(C+, C-) half-regions at time tau."""
    phi = configuration_angle(spec.phi0, p_i, tau, params)
    return ArcInterval(phi, phi + spec.alpha), ArcInterval(phi - spec.alpha, phi)


def local_intensity(spec: SatelliteSpec, p_i, theta, tau: float, params: OrbitParams):
    """Triangular intensity: psi_max at the nadir angle, zero beyond +-alpha."""
    phi = configuration_angle(spec.phi0, p_i, tau, params)
    d = np.abs(wrap_pi(np.asarray(theta, dtype=float) - phi))
    out = np.where(d < spec.alpha, spec.psi_max - spec.k * d, 0.0)
    return out if out.ndim else float(out)


def global_intensity(config: Configuration, theta, tau: float):
    c, a, s = config.arrays()
    out = kernels.intensity_values(np.asarray(theta, dtype=float) - config.params.omega * tau, c, a, s)
    return out if np.ndim(out) else float(out)


def _check_overlaps(config: Configuration):
    bad = config.non_adjacent_overlaps()
    if bad:
        warnings.warn(f"non-adjacent coverage overlap between {bad}; the neighbor-only "
                      "cost model no longer matches the potential", NonAdjacentOverlapWarning,
                      stacklevel=3)


def potential(config: Configuration, profile: DemandProfile, quad: QuadSettings = QuadSettings()) -> float:
    """Accumulated average coverage cost J over one orbital period."""
    if config.n == 0:
        return kernels.arc_quadrature(0.0, TWO_PI, np.zeros(0), np.zeros(0), np.zeros(0),
                                      profile.arrays, quad.n_tau, quad.gl)
    c, a, s = config.arrays()
    lo = float(np.min(wrap_2pi(c - a)))
    return kernels.arc_quadrature(lo, lo + TWO_PI, c, a, s, profile.arrays, quad.n_tau, quad.gl)


def neighborhood_arc(i: int, config: Configuration) -> tuple[float, float, list[int]]:
    """Integration arc of satellite i's cost and the satellites that shape it.

    The arc runs from the previous neighbor's nadir angle to the next
    neighbor's, i.e. it is the span of C+_{i-1}, C_i and C-_{i+1}. Its length
    does not depend on p_i, which is what makes the unilateral cost changes
    equal the potential changes.
    """
    if config.n <= 2:
        members = list(config.order)
        if config.n == 1:
            ci = config.center(i)
            return ci - math.pi, ci + math.pi, members
        j = config.neighbors(i)[0]
        lo = config.center(j)
        return lo, lo + TWO_PI, members
    prev, nxt = config.neighbors(i)
    ci = config.center(i)
    lo = ci - float(np.mod(ci - config.center(prev), TWO_PI))
    hi = ci + float(np.mod(config.center(nxt) - ci, TWO_PI))
    return lo, hi, [prev, i, nxt]


def satellite_cost(i: int, config: Configuration, profile: DemandProfile,
                   quad: QuadSettings = QuadSettings()) -> float:
    """Average coverage cost of satellite i over its neighborhood arc."""
    if i not in config.specs or not config.specs[i].alive or i not in config.order:
        raise QueryError(f"satellite {i} is not alive")
    _check_overlaps(config)
    lo, hi, members = neighborhood_arc(i, config)
    c = np.array([config.center(j) for j in members])
    a = np.array([config.specs[j].alpha for j in members])
    s = np.array([config.specs[j].psi_max for j in members])
    return kernels.arc_quadrature(lo, hi, c, a, s, profile.arrays, quad.n_tau, quad.gl)


def total_capacity(specs) -> float:
    """Sum of alpha_i * psi_i over alive satellites (area under all triangles)."""
    return float(sum(s.alpha * s.psi_max for s in specs if s.alive))


def position_for_angle(dphi: float, params: OrbitParams) -> np.ndarray:
    return on_circle_position(dphi, params.r_s)


def replace_spec(spec: SatelliteSpec, **kw) -> SatelliteSpec:
    return replace(spec, **kw)
