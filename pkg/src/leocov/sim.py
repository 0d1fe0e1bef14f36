"""Plan, maneuver, interrupt, replan: the scenario loop and its metrics timeline.

Each plan starts from the nominal configuration: the on-circle positions the
satellites were last commanded to (their targets, or the waypoint they stopped
at after an interrupt). Physical relative states are propagated separately
with the discrete CW model and J is logged at the physical positions. Idle
satellites are assumed to be station-kept and do not drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import CondensedQP, WaypointController, make_waypoints
from .coverage import Configuration, potential
from .errors import StallError
from .game import optimality_certificate, plan
from .orbit import RelativeState, cw_discrete, deviation_angle
from .scenario import Event, ScenarioScript, apply_event, equal_spacing_targets


@dataclass
class MetricsRecord:
    step: int
    sim_time: float
    phase: str
    J: float
    cum_control_cost: float
    dphi: dict[int, float]
    planner_round: int | None = None
    kind: str = "control"  # "event" | "planner" | "control"


@dataclass
class PhaseSummary:
    label: str
    start_time: float
    events: list[dict]
    J_before_event: float | None
    J_after_event: float
    converged_J: float = float("nan")
    control_cost: float = 0.0
    planner_rounds: int = 0
    plans: int = 0
    planner_converged: bool = True


@dataclass
class SimResult:
    name: str
    baseline: str
    timeline: list[MetricsRecord]
    phases: list[PhaseSummary]
    config: Configuration
    certificates: list[dict]
    all_ids: list[int]
    max_input_norm: float = 0.0
    max_solver_residual: float = 0.0
    aborted: str | None = None
    plan_J_histories: list[tuple[str, list[float]]] = field(default_factory=list)

    @property
    def total_control_cost(self) -> float:
        return control_cost_total(self.timeline)


class SimulationAborted(RuntimeError):
    def __init__(self, message: str, result: SimResult):
        super().__init__(message)
        self.result = result


def control_cost_total(timeline) -> float:
    """Final cumulative control cost of a timeline (0 for an empty one)."""
    return float(timeline[-1].cum_control_cost) if timeline else 0.0


def _phys_config(nominal: Configuration, phys: dict[int, RelativeState]) -> Configuration:
    c = nominal.copy()
    for i in c.order:
        c.p[i] = phys[i].p.copy()
    return c


def run_scenario(script: ScenarioScript, progress=None) -> SimResult:
    """Run the plan-maneuver-replan loop over the script's events.

    Raises SimulationAborted (carrying the partial result) if the planner
    does not converge or a controller stalls.
    """
    orbit = script.orbit
    ctl_params = script.control
    sys = cw_discrete(orbit, ctl_params.dt)
    qp = CondensedQP.build(sys, ctl_params.Q_aug, ctl_params.R, ctl_params.N)
    profile = script.demand
    quad = script.planner.quad

    nominal = script.initial_configuration()
    phys = {i: RelativeState(nominal.p[i].copy(), np.zeros(2)) for i in nominal.order}
    all_ids = sorted(nominal.specs)
    pending = list(script.events)
    timeline: list[MetricsRecord] = []
    phases: list[PhaseSummary] = []
    certs: list[dict] = []
    res = SimResult(script.name, script.baseline, timeline, phases, nominal, certs, all_ids)
    state = {"step": 0, "t": 0.0, "cost": 0.0}
    counters: dict[str, int] = {}

    def log(J, dphi, kind, rnd=None):
        timeline.append(MetricsRecord(state["step"], state["t"], phases[-1].label, float(J),
                                      state["cost"], dphi, rnd, kind))
        state["step"] += 1

    def phys_record(kind="control"):
        cfg = _phys_config(nominal, phys)
        log(potential(cfg, profile, quad), {i: deviation_angle(phys[i].p, orbit.r_s) for i in cfg.order}, kind)

    def open_phase(label, evs, J_before):
        cfg = _phys_config(nominal, phys)
        J_after = potential(cfg, profile, quad)
        phases.append(PhaseSummary(label, state["t"], [_event_dict(e) for e in evs], J_before, J_after))
        log(J_after, {i: deviation_angle(phys[i].p, orbit.r_s) for i in cfg.order}, "event")

    def apply_due():
        nonlocal nominal
        due = []
        while pending and pending[0].time <= state["t"] + 1e-12:
            due.append(pending.pop(0))
        if not due:
            return False
        J_before = potential(_phys_config(nominal, phys), profile, quad)
        for ev in due:
            nominal = apply_event(nominal, ev)
            if ev.kind == "replenish":
                i = ev.targets[0]
                phys[i] = RelativeState(np.zeros(2), np.zeros(2))
                all_ids.append(i)
            elif ev.kind == "loss":
                for i in ev.targets:
                    phys.pop(i, None)
        kind = due[0].label
        if any(e.label == "attack" for e in due):
            kind = "attack"
        counters[kind] = counters.get(kind, 0) + 1
        open_phase(f"{kind}-{counters[kind]}", due, J_before)
        return True

    open_phase("init", [], None)
    apply_due()

    while True:
        ph = phases[-1]
        # planning stage
        if script.baseline == "equal_spacing":
            target = equal_spacing_targets(nominal)
            cert = optimality_certificate(target, quad, eps=script.planner_for(ph.label).eps)
            converged = True
        else:
            def on_round(k, cfg, J):
                if k > 0:
                    log(J, {i: cfg.dphi(i) for i in cfg.order}, "planner", k)

            pr = plan(nominal, profile, script.planner_for(ph.label), callback=on_round)
            target, cert, converged = pr.config, pr.report, pr.converged
            ph.planner_rounds += pr.rounds
            res.plan_J_histories.append((ph.label, pr.J_history))
        ph.plans += 1
        ph.planner_converged &= converged
        certs.append({"phase": ph.label, "time": state["t"], "converged": converged,
                      **cert.to_dict()})
        if progress:
            progress(f"{ph.label}: planned at t={state['t']:.1f} TU")
        if not converged:
            res.config = nominal
            res.aborted = f"planner did not converge in phase {ph.label}"
            _close(res)
            raise SimulationAborted(res.aborted, res)

        # control stage, lock-step over satellites
        ctls: dict[int, WaypointController] = {}
        for i in nominal.order:
            if nominal.specs[i].anchored:
                continue
            if np.array_equal(target.p[i], nominal.p[i]):
                continue
            wp = make_waypoints(nominal.p[i], target.p[i], ctl_params.W, orbit)
            c = WaypointController(phys[i], wp, sys, ctl_params, qp)
            c.advance_if_arrived()
            if c.finished:
                nominal.p[i] = target.p[i].copy()
            else:
                ctls[i] = c
        stopped: set[int] = set()
        interrupted = False
        if ctls:
            phys_record()
        while any(not c.finished and i not in stopped for i, c in ctls.items()):
            for i in sorted(ctls):
                c = ctls[i]
                if c.finished or i in stopped:
                    continue
                try:
                    info = c.step()
                except StallError as e:
                    res.config = nominal
                    res.aborted = f"satellite {i}: {e}"
                    _close(res)
                    raise SimulationAborted(res.aborted, res) from e
                phys[i] = c.state
                state["cost"] += info.cost
                res.max_input_norm = max(res.max_input_norm, float(np.linalg.norm(info.u)))
                res.max_solver_residual = max(res.max_solver_residual, c.last_solution.residual)
                if info.reached:
                    nominal.p[i] = c.plan.points[c.m - 1].copy()
            state["t"] += ctl_params.dt
            phys_record()
            # attack detection happens at waypoints: a satellite that has just
            # reached one while an event is due stops there
            if pending and pending[0].time <= state["t"] + 1e-12:
                interrupted = True
            if interrupted:
                for i, c in ctls.items():
                    if i not in stopped and (c.finished or c.steps_on_leg == 0):
                        stopped.add(i)
        ph.control_cost = state["cost"] - _cost_before(timeline, ph.label)

        if not pending:
            break
        if not interrupted and pending[0].time > state["t"]:
            # everyone idle: wait for the next scripted event
            state["t"] = pending[0].time
        apply_due()

    res.config = nominal
    _close(res)
    return res


def _cost_before(timeline, label) -> float:
    for r in timeline:
        if r.phase == label:
            return r.cum_control_cost
    return 0.0


def _close(res: SimResult) -> None:
    for ph in res.phases:
        recs = [r for r in res.timeline if r.phase == ph.label]
        if recs:
            ph.converged_J = recs[-1].J
            ph.control_cost = recs[-1].cum_control_cost - recs[0].cum_control_cost


def _event_dict(e: Event) -> dict:
    d = {"time_tu": e.time, "kind": e.kind, "targets": list(e.targets)}
    if "fov" in e.params:
        d["fov_deg"] = [math.degrees(x) for x in e.params["fov"]]
        d["psi_max"] = list(e.params["psi_max"])
    if "neighbors" in e.params:
        d["neighbors"] = list(e.params["neighbors"])
    return d


def phase_table(res: SimResult) -> list[dict]:
    return [{"phase": p.label, "start_time_tu": p.start_time, "J_before_event": p.J_before_event,
             "J_after_event": p.J_after_event, "converged_J": p.converged_J,
             "control_cost": p.control_cost, "planner_rounds": p.planner_rounds,
             "plans": p.plans, "planner_converged": p.planner_converged}
            for p in res.phases]
