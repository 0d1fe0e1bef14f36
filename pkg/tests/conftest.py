import math
import time
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leocov.coverage import DemandProfile, SatelliteSpec, coverage_half_angle, make_configuration
from leocov.orbit import OrbitParams, on_circle_position

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SCENARIOS = ("cyber_partial_recovery", "cyber_full_recovery", "anchored_vs_free",
             "loss_recovery_I", "loss_recovery_II", "equal_spacing_baseline")


def scenario_path(name: str):
    return resources.files("leocov") / "scenarios" / f"{name}.json"


@pytest.fixture(scope="session")
def orbit() -> OrbitParams:
    return OrbitParams.from_altitude(0.8, 0.3)


@pytest.fixture(scope="session")
def alpha48(orbit) -> float:
    return coverage_half_angle(math.radians(48.0), orbit.r_s, orbit.R_e)


def admissible(cfg) -> bool:
    """Footprints stay between the neighbors' nadir points and overlap neighbors only.

    This is the standing assumption under which a satellite's cost arc
    contains its whole coverage region.
    """
    ids = cfg.order
    c, a, _ = cfg.arrays()
    for k in range(len(ids)):
        m = (k + 1) % len(ids)
        if float(np.mod(c[m] - c[k], 2 * math.pi)) < max(a[k], a[m]):
            return False
    return not cfg.non_adjacent_overlaps()


def random_deviation(rng, orbit) -> np.ndarray:
    d = orbit.max_deviation_angle
    return on_circle_position(float(rng.uniform(-d, d)), orbit.r_s)


def random_config(rng: np.random.Generator, orbit: OrbitParams, n: int = 25,
                  spread=(0.35, 1.65), psi=(6.0, 10.0), fov_deg=(42.0, 48.0), min_overlaps: int = 1):
    """Random admissible ring with at least ``min_overlaps`` overlapping adjacent pairs.

    Initial angles are spaced by random multiples of the mean gap; deviation
    angles are drawn inside the feasible arc and redrawn for offending pairs.
    """
    while True:
        gaps = rng.uniform(*spread, size=n)
        phi0 = np.cumsum(gaps / gaps.sum() * 2 * math.pi)
        phi0 -= phi0[0]
        specs = [SatelliteSpec(j + 1, coverage_half_angle(math.radians(rng.uniform(*fov_deg)),
                                                          orbit.r_s, orbit.R_e),
                               float(rng.uniform(*psi)), float(phi0[j])) for j in range(n)]
        cfg = make_configuration(orbit, specs, {j + 1: random_deviation(rng, orbit) for j in range(n)})
        for _ in range(200):
            if admissible(cfg):
                if len(overlapping_pairs(cfg)) >= min_overlaps:
                    return cfg
                break
            c, a, _ = cfg.arrays()
            for k in range(n):
                m = (k + 1) % n
                if float(np.mod(c[m] - c[k], 2 * math.pi)) < max(a[k], a[m]) + 0.01:
                    cfg.p[cfg.order[k]] = random_deviation(rng, orbit)
                    cfg.p[cfg.order[m]] = random_deviation(rng, orbit)


def admissible_move(rng, cfg, i):
    """Copy of cfg with satellite i at a random feasible point that keeps the ring admissible."""
    while True:
        out = cfg.with_position(i, random_deviation(rng, cfg.params))
        if admissible(out):
            return out


def random_profile(rng, total, n_components=3):
    return DemandProfile.random(rng, n_components, total)


_RUNS = {}
RUN_SECONDS = {}


@pytest.fixture(scope="session")
def scenario_run():
    """Cached full runs keyed by (scenario, variant)."""
    from leocov.scenario import load_script
    from leocov.sim import run_scenario

    def get(name, variant=None):
        key = (name, variant)
        if key not in _RUNS:
            t0 = time.perf_counter()
            _RUNS[key] = run_scenario(load_script(scenario_path(name), variant))
            RUN_SECONDS[key] = time.perf_counter() - t0
        return _RUNS[key]

    return get


_PLANS = {}


@pytest.fixture(scope="session")
def post_attack_plan():
    """Init plan and post-attack plan of the full-recovery scenario.

    Returns (script, attacked_ic, result, iterates) where iterates holds every
    planner iterate of the attack plan.
    """
    from leocov.game import plan
    from leocov.scenario import apply_event, load_script

    if not _PLANS:
        script = load_script(scenario_path("cyber_full_recovery"))
        init = plan(script.initial_configuration(), script.demand, script.planner_for("init"))
        attacked = apply_event(init.config, script.events[0])
        iterates = []
        res = plan(attacked, script.demand, script.planner_for("attack"),
                   callback=lambda k, cfg, J: iterates.append(cfg.copy()))
        _PLANS["v"] = (script, attacked, res, iterates)
    return _PLANS["v"]


def overlapping_pairs(cfg) -> list[tuple[int, int]]:
    from leocov.game import pair_overlap

    ids = cfg.order
    pairs = [(i, ids[(k + 1) % cfg.n]) for k, i in enumerate(ids)]
    return [(i, j) for i, j in pairs if pair_overlap(i, j, cfg) > 0]


def overlapping_ids(cfg) -> list[int]:
    """Satellites whose footprint overlaps at least one ring neighbor."""
    return sorted({i for pair in overlapping_pairs(cfg) for i in pair})


CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
