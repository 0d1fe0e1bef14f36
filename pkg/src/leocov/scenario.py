"""Scenario scripts: loading, validation, event application and the equal-spacing baseline.

Files use degrees for every angle; everything inside the library is radians.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .control import ControlParams
from .coverage import (Configuration, DemandProfile, QuadSettings, SatelliteSpec, TWO_PI,
                       coverage_half_angle, make_configuration, wrap_pi)
from .errors import ParameterError, ScriptError
from .game import PlannerParams
from .orbit import OrbitParams, on_circle_position

EVENT_KINDS = ("cyber", "recover", "loss", "replenish", "anchor", "unanchor")
BASELINES = ("dpgd_mwmpc", "equal_spacing")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_num_or_list = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "required": ["name", "constellation", "demand", "events"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "constellation": {
            "type": "object",
            "required": ["n", "altitude_du", "fov_deg", "psi_max", "p_max_du"],
            "additionalProperties": False,
            "properties": {
                "n": _posint,
                "ids": {"type": "array", "items": {"type": "integer"}},
                "altitude_du": _pos,
                "earth_radius_du": _pos,
                "mu_grav": _pos,
                "fov_deg": _pos,
                "psi_max": _pos,
                "p_max_du": _pos,
                "initial_angles_deg": {"type": "array", "items": _num},
                "layout": {
                    "type": "object",
                    "required": ["groups", "spacing_deg"],
                    "additionalProperties": False,
                    "properties": {"groups": _posint, "spacing_deg": _pos},
                },
                "anchored": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "demand": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "components": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["mean_deg", "std_deg", "weight"],
                        "additionalProperties": False,
                        "properties": {"mean_deg": _num, "std_deg": _pos,
                                       "weight": {"type": "number", "minimum": 0}},
                    },
                },
                "random_components": _posint,
                "seed": {"type": "integer"},
            },
        },
        "planner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"s0": _pos, "eps": _pos, "max_cnt": _posint, "max_k": _posint,
                           "n_tau": _posint, "gl_order": _posint,
                           "phases": {
                               "type": "object",
                               "additionalProperties": False,
                               "properties": {k: {"type": "object", "additionalProperties": False,
                                                  "properties": {"s0": _pos, "eps": _pos,
                                                                 "max_cnt": _posint, "max_k": _posint}}
                                              for k in ("init", "attack", "recovery", "reconfig")},
                           }},
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _pos, "N": _posint, "u_max": _pos, "arrive_eps": _pos, "waypoints": _posint,
                "q_diag": {"type": "array", "items": _pos, "minItems": 4, "maxItems": 4},
                "r_diag": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "max_steps_per_waypoint": _posint,
            },
        },
        "baseline": {"enum": list(BASELINES)},
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time_tu", "kind", "targets"],
                "additionalProperties": False,
                "properties": {
                    "time_tu": {"type": "number", "minimum": 0},
                    "kind": {"enum": list(EVENT_KINDS)},
                    "targets": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    "fov_deg": _num_or_list,
                    "psi_max": _num_or_list,
                    "neighbors": {"type": "array", "items": {"type": "integer"},
                                  "minItems": 2, "maxItems": 2},
                    "initial_angle_deg": _num,
                },
            },
        },
        "variants": {
            "type": "object",
            "additionalProperties": {"type": "object"},
        },
    },
}


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    targets: tuple[int, ...]
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.kind in ("cyber", "loss"):
            return "attack"
        if self.kind in ("recover", "replenish"):
            return "recovery"
        return "reconfig"


@dataclass
class ScenarioScript:
    name: str
    orbit: OrbitParams
    specs: list[SatelliteSpec]
    demand: DemandProfile
    planner: PlannerParams
    control: ControlParams
    baseline: str
    events: list[Event]
    raw: dict = field(default_factory=dict)
    planner_phases: dict[str, PlannerParams] = field(default_factory=dict)

    def planner_for(self, phase_label: str) -> PlannerParams:
        """Planner settings for a phase label such as ``attack-1``."""
        return self.planner_phases.get(phase_label.split("-")[0], self.planner)

    def initial_configuration(self) -> Configuration:
        return make_configuration(self.orbit, self.specs)


# --------------------------------------------------------------------------
# loading


def _where(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScriptError(f"cannot read scenario: {e.strerror}", str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScriptError(f"JSON parse error: {e.msg}", f"{path}:{e.lineno}:{e.colno}") from None


def variant_names(doc: dict) -> list[str]:
    return list(doc.get("variants", {}))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_variant(doc: dict, variant: str | None) -> dict:
    """Document with one variant's overrides merged in (and no variants table)."""
    doc = copy.deepcopy(doc)
    variants = doc.pop("variants", {})
    if variant is None:
        return doc
    if variant not in variants:
        raise ScriptError(f"unknown variant {variant!r}; have {sorted(variants)}", "variants")
    out = _merge(doc, variants[variant])
    out["name"] = f"{doc['name']}:{variant}"
    return out


def check_schema(doc: dict) -> None:
    v = jsonschema.Draft7Validator(SCHEMA)
    errs = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        raise ScriptError(e.message, _where(e.absolute_path))


def _initial_angles(c: dict) -> list[float]:
    n = c["n"]
    if "initial_angles_deg" in c:
        ang = c["initial_angles_deg"]
        if len(ang) != n:
            raise ScriptError(f"expected {n} initial angles, got {len(ang)}",
                              "constellation.initial_angles_deg")
        return [math.radians(a) for a in ang]
    if "layout" in c:
        groups = c["layout"]["groups"]
        sp = c["layout"]["spacing_deg"]
        if n % groups:
            raise ScriptError(f"n={n} is not a multiple of groups={groups}", "constellation.layout")
        per = n // groups
        out = []
        for g in range(groups):
            for m in range(per):
                out.append(math.radians(360.0 * g / groups + sp * (m - 0.5 * (per - 1))))
        return out
    return [TWO_PI * j / n for j in range(n)]


def _listify(val, n, where):
    if isinstance(val, list):
        if len(val) != n:
            raise ScriptError(f"expected {n} values (one per target), got {len(val)}", where)
        return [float(x) for x in val]
    return [float(val)] * n


def build_script(doc: dict) -> ScenarioScript:
    """Schema-checked document to a ScenarioScript; raises ScriptError with a field path."""
    check_schema(doc)
    c = doc["constellation"]
    try:
        orbit = OrbitParams.from_altitude(c["altitude_du"], c["p_max_du"],
                                          **({"R_e": c["earth_radius_du"]} if "earth_radius_du" in c else {}),
                                          **({"mu_grav": c["mu_grav"]} if "mu_grav" in c else {}))
    except ParameterError as e:
        raise ScriptError(str(e), "constellation") from None
    try:
        alpha = coverage_half_angle(math.radians(c["fov_deg"]), orbit.r_s, orbit.R_e)
    except ParameterError as e:
        raise ScriptError(str(e), "constellation.fov_deg") from None
    n = c["n"]
    ids = c.get("ids", list(range(1, n + 1)))
    if len(ids) != n or len(set(ids)) != n:
        raise ScriptError("ids must list n distinct integers", "constellation.ids")
    angles = _initial_angles(c)
    anchored = set(c.get("anchored", []))
    for k, a in enumerate(sorted(anchored)):
        if a not in ids:
            raise ScriptError(f"anchored satellite {a} does not exist", "constellation.anchored")
    specs = [SatelliteSpec(i, alpha, float(c["psi_max"]), angles[j], anchored=i in anchored)
             for j, i in enumerate(ids)]

    d = doc["demand"]
    total = sum(s.alpha * s.psi_max for s in specs)
    if "components" in d:
        comps = [(math.radians(x["mean_deg"]), math.radians(x["std_deg"]), x["weight"])
                 for x in d["components"]]
        if sum(x[2] for x in comps) <= 0:
            raise ScriptError("demand weights must not all be zero", "demand.components")
        demand = DemandProfile(comps, scale=total)
    elif "random_components" in d:
        rng = np.random.default_rng(d.get("seed", 0))
        demand = DemandProfile.random(rng, d["random_components"], total)
    else:
        raise ScriptError("demand needs components or random_components", "demand")

    p = doc.get("planner", {})
    quad = QuadSettings(p.get("n_tau", 64), p.get("gl_order", 8))
    keys = ("s0", "eps", "max_cnt", "max_k")
    planner = PlannerParams(**{k: p[k] for k in keys if k in p}, quad=quad)
    planner_phases = {kind: replace(planner, **{k: over[k] for k in keys if k in over})
                      for kind, over in p.get("phases", {}).items()}

    k = doc.get("controller", {})
    kw = {kk: k[kk] for kk in ("dt", "N", "arrive_eps", "max_steps_per_waypoint") if kk in k}
    if "u_max" in k:
        kw["u_max"] = k["u_max"]
    if "waypoints" in k:
        kw["W"] = k["waypoints"]
    if "q_diag" in k:
        kw["Q_aug"] = np.diag(k["q_diag"])
    if "r_diag" in k:
        kw["R"] = np.diag(k["r_diag"])
    control = ControlParams(**kw)

    events = []
    for j, e in enumerate(doc["events"]):
        where = f"events[{j}]"
        params = {}
        nt = len(e["targets"])
        if e["kind"] in ("cyber", "recover", "replenish"):
            for key in ("fov_deg", "psi_max"):
                if key not in e:
                    raise ScriptError(f"{e['kind']} event needs {key}", where)
            params["fov"] = [math.radians(x) for x in _listify(e["fov_deg"], nt, f"{where}.fov_deg")]
            params["psi_max"] = _listify(e["psi_max"], nt, f"{where}.psi_max")
        if e["kind"] == "replenish":
            if nt != 1:
                raise ScriptError("replenish inserts exactly one satellite", f"{where}.targets")
            if "neighbors" not in e:
                raise ScriptError("replenish event needs neighbors", where)
            params["neighbors"] = tuple(e["neighbors"])
            if "initial_angle_deg" in e:
                params["initial_angle"] = math.radians(e["initial_angle_deg"])
        events.append(Event(float(e["time_tu"]), e["kind"], tuple(e["targets"]), params))
    for j in range(1, len(events)):
        if events[j].time < events[j - 1].time:
            raise ScriptError(f"event times decrease: {events[j - 1].time:g} TU then "
                              f"{events[j].time:g} TU", f"events[{j}].time_tu")
    script = ScenarioScript(doc["name"], orbit, specs, demand, planner, control,
                            doc.get("baseline", "dpgd_mwmpc"), events, doc, planner_phases)
    check_consistency(script)
    return script


def load_script(path, variant: str | None = None) -> ScenarioScript:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise ScriptError("scenario must be a JSON object", str(path))
    return build_script(resolve_variant(doc, variant))


def check_consistency(script: ScenarioScript) -> Configuration:
    """Replay the events on the initial configuration; returns the final ring."""
    config = script.initial_configuration()
    for j, ev in enumerate(script.events):
        try:
            config = apply_event(config, ev)
        except ScriptError as e:
            raise ScriptError(e.message, f"events[{j}]" + (f".{e.where}" if e.where else "")) from None
    return config


# --------------------------------------------------------------------------
# events


def _alive(config: Configuration, i: int, where: str):
    if i not in config.specs:
        raise ScriptError(f"unknown satellite id {i}", where)
    if i not in config.order:
        raise ScriptError(f"satellite {i} is dead", where)


def apply_event(config: Configuration, event: Event) -> Configuration:
    """Configuration after one scripted event; surviving positions are untouched."""
    c = config.copy()
    orbit = c.params
    if event.kind in ("cyber", "recover"):
        for j, i in enumerate(event.targets):
            _alive(c, i, f"targets[{j}]")
            try:
                a = coverage_half_angle(event.params["fov"][j], orbit.r_s, orbit.R_e)
            except ParameterError as e:
                raise ScriptError(str(e), "fov_deg") from None
            c.specs[i] = replace(c.specs[i], alpha=a, psi_max=float(event.params["psi_max"][j]))
    elif event.kind == "loss":
        for j, i in enumerate(event.targets):
            _alive(c, i, f"targets[{j}]")
            c.specs[i] = replace(c.specs[i], alive=False)
            c.order.remove(i)
            c.p.pop(i, None)
    elif event.kind == "replenish":
        i = event.targets[0]
        if i in c.specs:
            raise ScriptError(f"replenish id {i} already exists", "targets[0]")
        a, b = event.params["neighbors"]
        for k, nb in enumerate((a, b)):
            _alive(c, nb, f"neighbors[{k}]")
        if c.n >= 2:
            ka, kb = c.index(a), c.index(b)
            if (ka + 1) % c.n == kb:
                prev, nxt = a, b
            elif (kb + 1) % c.n == ka:
                prev, nxt = b, a
            else:
                raise ScriptError(f"neighbors {a} and {b} are not adjacent in the ring", "neighbors")
        else:
            prev = nxt = a
        if "initial_angle" in event.params:
            phi0 = event.params["initial_angle"]
        else:
            lo = c.center(prev)
            gap = float(np.mod(c.center(nxt) - lo, TWO_PI)) if prev != nxt else TWO_PI
            phi0 = lo + 0.5 * gap
        try:
            alpha = coverage_half_angle(event.params["fov"][0], orbit.r_s, orbit.R_e)
            spec = SatelliteSpec(i, alpha, float(event.params["psi_max"][0]), float(phi0))
        except ParameterError as e:
            raise ScriptError(str(e), "fov_deg") from None
        c.specs[i] = spec
        c.order.insert(c.index(prev) + 1, i)
        c.p[i] = np.zeros(2)
    elif event.kind in ("anchor", "unanchor"):
        for j, i in enumerate(event.targets):
            _alive(c, i, f"targets[{j}]")
            c.specs[i] = replace(c.specs[i], anchored=event.kind == "anchor")
    else:
        raise ScriptError(f"unknown event kind {event.kind!r}", "kind")
    return c


def ring_is_valid(config: Configuration) -> bool:
    """Alive satellites form one cycle with two distinct neighbors each (n >= 3)."""
    if len(set(config.order)) != len(config.order):
        return False
    if any(not config.specs[i].alive for i in config.order):
        return False
    if any(s.alive and s.id not in config.order for s in config.specs.values()):
        return False
    if config.n >= 3:
        seen = set()
        for i in config.order:
            prev, nxt = config.neighbors(i)
            if prev == nxt or prev == i:
                return False
            seen.add(nxt)
        return seen == set(config.order)
    return True


# --------------------------------------------------------------------------
# equal-spacing baseline


def unwrapped_angles(config: Configuration) -> np.ndarray:
    """Configuration angles in ring order, made increasing by adding multiples of 2*pi."""
    out = np.empty(config.n)
    for k, i in enumerate(config.order):
        c = config.center(i)
        out[k] = c if k == 0 else out[k - 1] + float(np.mod(c - out[k - 1], TWO_PI))
    return out


def equal_spacing_angles(config: Configuration) -> np.ndarray:
    """Unclamped equal-spacing targets that keep the mean unwrapped angle."""
    th = unwrapped_angles(config)
    n = config.n
    c0 = float(th.mean()) - math.pi * (n - 1) / n
    return c0 + TWO_PI * np.arange(n) / n


def equal_spacing_targets(config: Configuration, params: OrbitParams | None = None) -> Configuration:
    """Ring-averaging limit, converted to on-circle positions and clamped to the feasible arc.

    Anchored satellites keep their positions.
    """
    params = params or config.params
    out = config.copy()
    if config.n < 2:
        return out
    tgt = equal_spacing_angles(config)
    dmax = params.max_deviation_angle
    for k, i in enumerate(config.order):
        if config.specs[i].anchored:
            continue
        d = float(wrap_pi(tgt[k] - config.specs[i].phi0))
        d = min(max(d, -dmax), dmax)
        out.p[i] = on_circle_position(d, params.r_s)
    return out


def clamped_satellites(config: Configuration, params: OrbitParams | None = None) -> list[int]:
    """Satellites whose equal-spacing target had to be clamped."""
    params = params or config.params
    if config.n < 2:
        return []
    tgt = equal_spacing_angles(config)
    dmax = params.max_deviation_angle
    return [i for k, i in enumerate(config.order)
            if abs(float(wrap_pi(tgt[k] - config.specs[i].phi0))) > dmax]
