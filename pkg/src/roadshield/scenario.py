"""Driving scenario: schema, validation, geometry predicates.

A scenario file is YAML with the top-level keys ``road``, ``static_obstacles``,
``moving_obstacles``, ``goal``, ``vehicle``, ``thresholds {TD, THD}``,
``timing {MAXT, P, C1, C2}``, ``scale {base, exponent}`` and
``actions {jerk: [D, U], turn: [D, U]}``.  Geometry is metres / radians /
seconds.  Optional sections ``integration`` and ``reward`` carry documented
engine defaults.  See README for the full schema reference.

Conventions fixed here (conservative readings, see module docs in README):
offroad means ANY part of the vehicle rectangle outside the road union;
goal means the vehicle rectangle FULLY contained in the goal rectangle;
collide means rectangle distance to some obstacle strictly below TD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import yaml

from . import _kernels as K
from .errors import ScenarioError
from .fixedpoint import ScaleConfig, quantize

__all__ = [
    "OrientedRect", "Waypoint", "ObstacleTrajectory", "VehicleConfig",
    "Thresholds", "Timing", "ActionSpace", "IntegrationConfig", "RewardParams",
    "Scenario", "parse_scenario", "load_scenario", "serialize_scenario",
    "rect_distance", "collide", "offroad", "goal", "compile_scenario",
]


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class OrientedRect:
    x: float
    y: float
    length: float
    width: float
    heading: float = 0.0

    def corners(self) -> np.ndarray:
        out = np.empty((4, 2))
        K.rect_corners(self.x, self.y, self.length, self.width, self.heading, out)
        return out


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float
    velocity: float
    heading: float


@dataclass(frozen=True)
class ObstacleTrajectory:
    waypoints: tuple[Waypoint, ...]
    length: float
    width: float


@dataclass(frozen=True)
class VehicleConfig:
    x: float
    y: float
    heading: float
    velocity: float
    length: float
    width: float


@dataclass(frozen=True)
class Thresholds:
    td: float
    thd: float


@dataclass(frozen=True)
class Timing:
    maxt: int
    p: int
    c1: int
    c2: int


@dataclass(frozen=True)
class ActionSpace:
    """Significand grid for the two action axes (jerk, turn)."""

    jerk_low: int
    jerk_high: int
    turn_low: int
    turn_high: int
    jerk_stride: int = 1
    turn_stride: int = 1

    @property
    def jerk_values(self) -> tuple[int, ...]:
        return tuple(range(self.jerk_low, self.jerk_high + 1, self.jerk_stride))

    @property
    def turn_values(self) -> tuple[int, ...]:
        return tuple(range(self.turn_low, self.turn_high + 1, self.turn_stride))

    @property
    def count(self) -> int:
        return len(self.jerk_values) * len(self.turn_values)


@dataclass(frozen=True)
class IntegrationConfig:
    granularity: float = 0.01       # G; 1/G must be a whole number of steps
    plant_substeps: int = 200       # reference Euler sub-steps per sensing period
    monitor_samples: int = 10       # ground-truth checks per sensing period

    @property
    def sense_steps(self) -> int:
        return int(round(1.0 / self.granularity))


@dataclass(frozen=True)
class RewardParams:
    """Parameters of the guard flags: safe/comfort thresholds."""

    s: int = 3            # safe iff min obstacle distance > s * TD
    p1: float = 0.8       # comfort bound fraction of max acceleration
    p2: float = 0.8       # comfort bound fraction of max turn rate
    ma: int = 0           # max |acc| significand (0 = derive from actions)
    mt: int = 0           # max |turn| significand (0 = derive from actions)


@dataclass(frozen=True)
class Scenario:
    name: str
    road: tuple[tuple[tuple[float, float], ...], ...]
    vehicle: VehicleConfig
    goal_region: OrientedRect
    static_obstacles: tuple[OrientedRect, ...]
    moving_obstacles: tuple[ObstacleTrajectory, ...]
    thresholds: Thresholds
    timing: Timing
    scale: ScaleConfig
    actions: ActionSpace
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    reward: RewardParams = field(default_factory=RewardParams)

    @property
    def td(self) -> float:
        return self.thresholds.td

    @property
    def n_decisions(self) -> int:
        return self.timing.maxt // self.timing.c2

    @property
    def n_sense(self) -> int:
        return self.timing.maxt // self.timing.c1

    @property
    def mact(self) -> int:
        return self.actions.count

    def reward_ma(self) -> int:
        if self.reward.ma > 0:
            return self.reward.ma
        top = max(abs(self.actions.jerk_low), abs(self.actions.jerk_high))
        return max(1, top * self.timing.c2)

    def reward_mt(self) -> int:
        if self.reward.mt > 0:
            return self.reward.mt
        return max(1, abs(self.actions.turn_low), abs(self.actions.turn_high))


# ---------------------------------------------------------------------------
# YAML parsing with line tracking

_LINE = "__line__"


class _LineLoader(yaml.SafeLoader):
    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping[_LINE] = node.start_mark.line + 1
        return mapping


def _line(m) -> int | None:
    return m.get(_LINE) if isinstance(m, dict) else None


def _require(m: dict, key: str, path: str):
    if key not in m:
        raise ScenarioError("required key missing", field=f"{path}.{key}" if path else key,
                            line=_line(m))
    return m[key]


def _num(v, path, line) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"expected a number, got {v!r}", field=path, line=line)
    return float(v)


def _int(v, path, line) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"expected an integer, got {v!r}", field=path, line=line)
    return v


def _mapping(v, path, line) -> dict:
    if not isinstance(v, dict):
        raise ScenarioError(f"expected a mapping, got {type(v).__name__}", field=path, line=line)
    return v


def _seq(v, path, line) -> list:
    if not isinstance(v, list):
        raise ScenarioError(f"expected a list, got {type(v).__name__}", field=path, line=line)
    return v


def _check_known(m: dict, allowed: set[str], path: str):
    for k in m:
        if k != _LINE and k not in allowed:
            raise ScenarioError(f"unknown key '{k}'", field=path or k, line=_line(m))


def _parse_rect(m, path) -> OrientedRect:
    line = _line(m)
    m = _mapping(m, path, line)
    _check_known(m, {"x", "y", "length", "width", "heading"}, path)
    r = OrientedRect(
        x=_num(_require(m, "x", path), f"{path}.x", line),
        y=_num(_require(m, "y", path), f"{path}.y", line),
        length=_num(_require(m, "length", path), f"{path}.length", line),
        width=_num(_require(m, "width", path), f"{path}.width", line),
        heading=_num(m.get("heading", 0.0), f"{path}.heading", line),
    )
    if r.length <= 0 or r.width <= 0:
        raise ScenarioError("length and width must be > 0", field=path, line=line)
    return r


def _parse_polygon(v, path) -> tuple[tuple[float, float], ...]:
    pts = _seq(v, path, None)
    if len(pts) < 3:
        raise ScenarioError("polygon needs at least 3 points", field=path, line=None)
    out = []
    for i, p in enumerate(pts):
        p = _seq(p, f"{path}[{i}]", None)
        if len(p) != 2:
            raise ScenarioError("point must be [x, y]", field=f"{path}[{i}]", line=None)
        out.append((_num(p[0], f"{path}[{i}].x", None), _num(p[1], f"{path}[{i}].y", None)))
    # convexity (collinear runs allowed): all turns must share a sign
    pos = neg = False
    n = len(out)
    for i in range(n):
        ax, ay = out[i]
        bx, by = out[(i + 1) % n]
        cx, cy = out[(i + 2) % n]
        cr = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if cr > 0:
            pos = True
        elif cr < 0:
            neg = True
    if pos and neg:
        raise ScenarioError("lane polygon must be convex", field=path, line=None)
    return tuple(out)


def _parse_waypoint(m, path) -> Waypoint:
    line = _line(m)
    m = _mapping(m, path, line)
    _check_known(m, {"t", "x", "y", "velocity", "heading"}, path)
    w = Waypoint(
        t=_num(_require(m, "t", path), f"{path}.t", line),
        x=_num(_require(m, "x", path), f"{path}.x", line),
        y=_num(_require(m, "y", path), f"{path}.y", line),
        velocity=_num(_require(m, "velocity", path), f"{path}.velocity", line),
        heading=_num(_require(m, "heading", path), f"{path}.heading", line),
    )
    if w.velocity < 0:
        raise ScenarioError("waypoint velocity must be >= 0", field=f"{path}.velocity", line=line)
    return w


_WAYPOINT_TOL = 1e-6


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"not valid YAML: {e}", line=(mark.line + 1) if mark else None)
    if not isinstance(raw, dict):
        raise ScenarioError("scenario document must be a mapping")
    _check_known(raw, {"name", "road", "vehicle", "goal", "static_obstacles",
                       "moving_obstacles", "thresholds", "timing", "scale",
                       "actions", "integration", "reward"}, "")

    name = raw.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("name must be a string", field="name", line=_line(raw))

    lanes = _seq(_require(raw, "road", ""), "road", _line(raw))
    road = tuple(_parse_polygon(lane, f"road[{i}]") for i, lane in enumerate(lanes))
    if not road:
        raise ScenarioError("road needs at least one lane polygon", field="road")

    vm = _mapping(_require(raw, "vehicle", ""), "vehicle", _line(raw))
    _check_known(vm, {"x", "y", "heading", "velocity", "length", "width"}, "vehicle")
    vline = _line(vm)
    vehicle = VehicleConfig(
        x=_num(_require(vm, "x", "vehicle"), "vehicle.x", vline),
        y=_num(_require(vm, "y", "vehicle"), "vehicle.y", vline),
        heading=_num(_require(vm, "heading", "vehicle"), "vehicle.heading", vline),
        velocity=_num(_require(vm, "velocity", "vehicle"), "vehicle.velocity", vline),
        length=_num(_require(vm, "length", "vehicle"), "vehicle.length", vline),
        width=_num(_require(vm, "width", "vehicle"), "vehicle.width", vline),
    )
    if vehicle.length <= 0 or vehicle.width <= 0:
        raise ScenarioError("vehicle length/width must be > 0", field="vehicle", line=vline)
    if vehicle.velocity < 0:
        raise ScenarioError("vehicle velocity must be >= 0", field="vehicle.velocity", line=vline)

    goal_region = _parse_rect(_require(raw, "goal", ""), "goal")

    statics = []
    for i, s in enumerate(_seq(raw.get("static_obstacles", []), "static_obstacles", _line(raw))):
        statics.append(_parse_rect(s, f"static_obstacles[{i}]"))

    movings = []
    for i, mo in enumerate(_seq(raw.get("moving_obstacles", []), "moving_obstacles", _line(raw))):
        path = f"moving_obstacles[{i}]"
        mo = _mapping(mo, path, None)
        _check_known(mo, {"shape", "waypoints"}, path)
        shape = _mapping(_require(mo, "shape", path), f"{path}.shape", _line(mo))
        _check_known(shape, {"length", "width"}, f"{path}.shape")
        length = _num(_require(shape, "length", f"{path}.shape"), f"{path}.shape.length", _line(shape))
        width = _num(_require(shape, "width", f"{path}.shape"), f"{path}.shape.width", _line(shape))
        if length <= 0 or width <= 0:
            raise ScenarioError("shape must have positive dimensions", field=f"{path}.shape",
                                line=_line(shape))
        wps = [_parse_waypoint(w, f"{path}.waypoints[{j}]")
               for j, w in enumerate(_seq(_require(mo, "waypoints", path), f"{path}.waypoints", _line(mo)))]
        if not wps:
            raise ScenarioError("trajectory needs at least one waypoint", field=f"{path}.waypoints")
        if wps[0].t != 0:
            raise ScenarioError("first waypoint must be at t = 0", field=f"{path}.waypoints[0].t")
        for j in range(1, len(wps)):
            a, b = wps[j - 1], wps[j]
            if b.t <= a.t:
                raise ScenarioError("waypoint times must be strictly increasing",
                                    field=f"{path}.waypoints[{j}].t")
            dt = b.t - a.t
            ex = a.x + a.velocity * math.cos(a.heading) * dt
            ey = a.y + a.velocity * math.sin(a.heading) * dt
            if math.hypot(ex - b.x, ey - b.y) > _WAYPOINT_TOL:
                raise ScenarioError(
                    "waypoint is not reachable at constant velocity/heading from the "
                    f"previous one (expected ({ex:.6f}, {ey:.6f}))",
                    field=f"{path}.waypoints[{j}]")
        movings.append(ObstacleTrajectory(waypoints=tuple(wps), length=length, width=width))

    tm = _mapping(_require(raw, "thresholds", ""), "thresholds", _line(raw))
    _check_known(tm, {"TD", "THD"}, "thresholds")
    thresholds = Thresholds(
        td=_num(_require(tm, "TD", "thresholds"), "thresholds.TD", _line(tm)),
        thd=_num(_require(tm, "THD", "thresholds"), "thresholds.THD", _line(tm)),
    )
    if thresholds.td <= 0:
        raise ScenarioError("TD must be > 0", field="thresholds.TD", line=_line(tm))
    if thresholds.thd <= 0:
        raise ScenarioError("THD must be > 0", field="thresholds.THD", line=_line(tm))

    gm = _mapping(_require(raw, "timing", ""), "timing", _line(raw))
    _check_known(gm, {"MAXT", "P", "C1", "C2"}, "timing")
    timing = Timing(
        maxt=_int(_require(gm, "MAXT", "timing"), "timing.MAXT", _line(gm)),
        p=_int(_require(gm, "P", "timing"), "timing.P", _line(gm)),
        c1=_int(_require(gm, "C1", "timing"), "timing.C1", _line(gm)),
        c2=_int(_require(gm, "C2", "timing"), "timing.C2", _line(gm)),
    )
    if timing.maxt <= 0:
        raise ScenarioError("MAXT must be > 0", field="timing.MAXT", line=_line(gm))
    if timing.p <= 0 or timing.c1 <= 0 or timing.c2 <= 0:
        raise ScenarioError("periods must be > 0", field="timing", line=_line(gm))
    if timing.c1 % timing.p != 0:
        raise ScenarioError("C1 must be a multiple of the timer period P",
                            field="timing.C1", line=_line(gm))
    if timing.c2 % timing.c1 != 0:
        raise ScenarioError("C2 must be a whole number of sensing periods C1",
                            field="timing.C2", line=_line(gm))
    if timing.maxt % timing.c2 != 0:
        raise ScenarioError("MAXT must be a whole number of decision periods C2",
                            field="timing.MAXT", line=_line(gm))

    sm = _mapping(_require(raw, "scale", ""), "scale", _line(raw))
    _check_known(sm, {"base", "exponent", "significand_bits"}, "scale")
    scale = ScaleConfig(
        base=_int(_require(sm, "base", "scale"), "scale.base", _line(sm)),
        exponent=_int(_require(sm, "exponent", "scale"), "scale.exponent", _line(sm)),
        significand_bits=_int(sm.get("significand_bits", 32), "scale.significand_bits", _line(sm)),
    )

    am = _mapping(_require(raw, "actions", ""), "actions", _line(raw))
    _check_known(am, {"jerk", "turn", "jerk_stride", "turn_stride"}, "actions")
    aline = _line(am)

    def _axis(key):
        bounds = _seq(_require(am, key, "actions"), f"actions.{key}", aline)
        if len(bounds) != 2:
            raise ScenarioError("bounds must be [D, U]", field=f"actions.{key}", line=aline)
        lo = _int(bounds[0], f"actions.{key}[0]", aline)
        hi = _int(bounds[1], f"actions.{key}[1]", aline)
        if lo > hi:
            raise ScenarioError("D must be <= U", field=f"actions.{key}", line=aline)
        return lo, hi

    jl, jh = _axis("jerk")
    tl, th = _axis("turn")
    js = _int(am.get("jerk_stride", 1), "actions.jerk_stride", aline)
    ts = _int(am.get("turn_stride", 1), "actions.turn_stride", aline)
    for nm, (lo, hi, st) in {"jerk": (jl, jh, js), "turn": (tl, th, ts)}.items():
        if st < 1:
            raise ScenarioError("stride must be >= 1", field=f"actions.{nm}_stride", line=aline)
        if (hi - lo) % st != 0:
            raise ScenarioError("U - D must be a multiple of the stride",
                                field=f"actions.{nm}", line=aline)
    actions = ActionSpace(jerk_low=jl, jerk_high=jh, turn_low=tl, turn_high=th,
                          jerk_stride=js, turn_stride=ts)
    top = max(abs(jl), abs(jh), abs(tl), abs(th))
    if top > scale.max_significand:
        raise ScenarioError("action bounds exceed the significand width", field="actions",
                            line=aline)

    im = raw.get("integration", {})
    im = _mapping(im, "integration", _line(raw)) if im else {}
    _check_known(im, {"granularity", "plant_substeps", "monitor_samples"}, "integration")
    integration = IntegrationConfig(
        granularity=_num(im.get("granularity", 0.01), "integration.granularity", _line(im) if im else None),
        plant_substeps=_int(im.get("plant_substeps", 200), "integration.plant_substeps", _line(im) if im else None),
        monitor_samples=_int(im.get("monitor_samples", 10), "integration.monitor_samples", _line(im) if im else None),
    )
    _validate_integration(integration)

    rm = raw.get("reward", {})
    rm = _mapping(rm, "reward", _line(raw)) if rm else {}
    _check_known(rm, {"S", "p1", "p2", "MA", "MT"}, "reward")
    rline = _line(rm) if rm else None
    reward = RewardParams(
        s=_int(rm.get("S", 3), "reward.S", rline),
        p1=_num(rm.get("p1", 0.8), "reward.p1", rline),
        p2=_num(rm.get("p2", 0.8), "reward.p2", rline),
        ma=_int(rm.get("MA", 0), "reward.MA", rline),
        mt=_int(rm.get("MT", 0), "reward.MT", rline),
    )
    if reward.s < 1:
        raise ScenarioError("S must be >= 1", field="reward.S", line=rline)
    if not (0 < reward.p1 <= 1 and 0 < reward.p2 <= 1):
        raise ScenarioError("p1, p2 must be in (0, 1]", field="reward", line=rline)

    sc = Scenario(name=name, road=road, vehicle=vehicle, goal_region=goal_region,
                  static_obstacles=tuple(statics), moving_obstacles=tuple(movings),
                  thresholds=thresholds, timing=timing, scale=scale, actions=actions,
                  integration=integration, reward=reward)
    # semantic checks that need the assembled scenario (road union, ranges)
    compile_scenario(sc)
    return sc


def _validate_integration(ig: IntegrationConfig):
    g = ig.granularity
    if not (0 < g <= 1):
        raise ScenarioError("granularity must be in (0, 1]", field="integration.granularity")
    steps = round(1.0 / g)
    if steps < 1 or abs(steps - 1.0 / g) > 1e-9:
        raise ScenarioError("1/granularity must be a whole number of steps",
                            field="integration.granularity")
    if ig.plant_substeps < ig.monitor_samples or ig.monitor_samples < 1:
        raise ScenarioError("plant_substeps must be >= monitor_samples >= 1",
                            field="integration.plant_substeps")
    if ig.plant_substeps % ig.monitor_samples != 0:
        raise ScenarioError("plant_substeps must be a multiple of monitor_samples",
                            field="integration.plant_substeps")


def with_granularity(sc: Scenario, granularity: float) -> Scenario:
    """Scenario with the integration granularity replaced (CLI override)."""
    ig = replace(sc.integration, granularity=float(granularity))
    _validate_integration(ig)
    return replace(sc, integration=ig)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def serialize_scenario(sc: Scenario) -> str:
    """Canonical YAML for a scenario; parse(serialize(sc)) == sc."""
    doc = {
        "name": sc.name,
        "road": [[list(p) for p in lane] for lane in sc.road],
        "vehicle": {"x": sc.vehicle.x, "y": sc.vehicle.y, "heading": sc.vehicle.heading,
                    "velocity": sc.vehicle.velocity, "length": sc.vehicle.length,
                    "width": sc.vehicle.width},
        "goal": {"x": sc.goal_region.x, "y": sc.goal_region.y,
                 "length": sc.goal_region.length, "width": sc.goal_region.width,
                 "heading": sc.goal_region.heading},
        "static_obstacles": [
            {"x": r.x, "y": r.y, "length": r.length, "width": r.width, "heading": r.heading}
            for r in sc.static_obstacles],
        "moving_obstacles": [
            {"shape": {"length": mo.length, "width": mo.width},
             "waypoints": [{"t": w.t, "x": w.x, "y": w.y, "velocity": w.velocity,
                            "heading": w.heading} for w in mo.waypoints]}
            for mo in sc.moving_obstacles],
        "thresholds": {"TD": sc.thresholds.td, "THD": sc.thresholds.thd},
        "timing": {"MAXT": sc.timing.maxt, "P": sc.timing.p, "C1": sc.timing.c1,
                   "C2": sc.timing.c2},
        "scale": {"base": sc.scale.base, "exponent": sc.scale.exponent,
                  "significand_bits": sc.scale.significand_bits},
        "actions": {"jerk": [sc.actions.jerk_low, sc.actions.jerk_high],
                    "turn": [sc.actions.turn_low, sc.actions.turn_high],
                    "jerk_stride": sc.actions.jerk_stride,
                    "turn_stride": sc.actions.turn_stride},
        "integration": {"granularity": sc.integration.granularity,
                        "plant_substeps": sc.integration.plant_substeps,
                        "monitor_samples": sc.integration.monitor_samples},
        "reward": {"S": sc.reward.s, "p1": sc.reward.p1, "p2": sc.reward.p2,
                   "MA": sc.reward.ma, "MT": sc.reward.mt},
    }
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# obstacle trajectory interpolation (shared with roadshield.dynamics)


def _obstacle_state(tr: ObstacleTrajectory, t: float) -> tuple[float, float, float, float]:
    """(x, y, velocity, heading) at time t; motion extrapolates past the end."""
    wps = tr.waypoints
    i = len(wps) - 1
    while i > 0 and wps[i].t > t:
        i -= 1
    w = wps[i]
    dt = t - w.t
    return (w.x + w.velocity * math.cos(w.heading) * dt,
            w.y + w.velocity * math.sin(w.heading) * dt,
            w.velocity, w.heading)


# ---------------------------------------------------------------------------
# compiled form: everything the kernels need, as plain arrays


@dataclass(frozen=True, eq=False)
class CompiledScenario:
    sc: Scenario
    ring: np.ndarray                 # (R, 2) road union outer ring
    static_true: np.ndarray          # (S, 4, 2) true static corners
    static_q: np.ndarray             # (S, 4, 2) quantized static corners
    mov_q: np.ndarray                # (n_sense+1, M, 4, 2) quantized moving corners
    mov_fine: np.ndarray             # (n_sense*ms+1, M, 4, 2) true moving corners
    goal_corners: np.ndarray         # (4, 2)
    actions: np.ndarray              # (A, 2) int64 significands, row-major grid
    init_perceived: np.ndarray       # (5,) int64
    gx: float
    gy: float
    gux: float
    guy: float
    ghl: float
    ghw: float

    @property
    def scale_args(self):
        """(rmul, rdiv, fmul, fdiv, max_sig) for the kernels."""
        s = self.sc.scale
        rmul, rdiv = s.to_real_mul_div
        fmul, fdiv = s.to_fixed_mul_div
        return rmul, rdiv, fmul, fdiv, s.max_significand


def _quantized_corners(x, y, length, width, heading, scale: ScaleConfig) -> np.ndarray:
    rmul, rdiv = scale.to_real_mul_div
    out = np.empty((4, 2))
    K.rect_corners(K.i2d(quantize(x, scale), rmul, rdiv),
                   K.i2d(quantize(y, scale), rmul, rdiv),
                   length, width,
                   K.i2d(quantize(heading, scale), rmul, rdiv), out)
    return out


def _road_ring(sc: Scenario) -> np.ndarray:
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    union = unary_union([Polygon(lane) for lane in sc.road])
    if union.geom_type != "Polygon":
        raise ScenarioError("road lanes must form one connected region", field="road")
    if union.interiors:
        raise ScenarioError("road union must not contain holes", field="road")
    ring = np.asarray(union.exterior.coords, dtype=np.float64)[:-1]  # drop closing point
    if ring.shape[0] < 3:
        raise ScenarioError("degenerate road union", field="road")
    return ring


@lru_cache(maxsize=32)
def compile_scenario(sc: Scenario) -> CompiledScenario:
    ring = _road_ring(sc)

    from shapely.geometry import Polygon
    goal_poly = Polygon(sc.goal_region.corners())
    road_poly = Polygon(ring)
    if not goal_poly.intersects(road_poly):
        raise ScenarioError("goal region does not intersect the road", field="goal")

    scale = sc.scale
    try:
        static_true = np.empty((len(sc.static_obstacles), 4, 2))
        static_q = np.empty_like(static_true)
        for i, r in enumerate(sc.static_obstacles):
            static_true[i] = r.corners()
            static_q[i] = _quantized_corners(r.x, r.y, r.length, r.width, r.heading, scale)

        m = len(sc.moving_obstacles)
        n_sense = sc.n_sense
        ms = sc.integration.monitor_samples
        c1 = float(sc.timing.c1)
        mov_q = np.empty((n_sense + 1, m, 4, 2))
        for k in range(n_sense + 1):
            for j, tr in enumerate(sc.moving_obstacles):
                x, y, _, h = _obstacle_state(tr, k * c1)
                mov_q[k, j] = _quantized_corners(x, y, tr.length, tr.width, h, scale)
        mov_fine = np.empty((n_sense * ms + 1, m, 4, 2))
        for k in range(n_sense * ms + 1):
            t = k * (c1 / ms)
            for j, tr in enumerate(sc.moving_obstacles):
                x, y, _, h = _obstacle_state(tr, t)
                out = np.empty((4, 2))
                K.rect_corners(x, y, tr.length, tr.width, h, out)
                mov_fine[k, j] = out

        init_perceived = np.array(
            [quantize(sc.vehicle.x, scale), quantize(sc.vehicle.y, scale),
             quantize(sc.vehicle.velocity, scale), 0,
             quantize(sc.vehicle.heading, scale)], dtype=np.int64)
    except OverflowError as e:
        raise ScenarioError(f"geometry does not fit the significand width: {e}",
                            field="scale.significand_bits")

    acts = np.array([(j, t) for j in sc.actions.jerk_values for t in sc.actions.turn_values],
                    dtype=np.int64)

    g = sc.goal_region
    return CompiledScenario(
        sc=sc, ring=ring, static_true=static_true, static_q=static_q,
        mov_q=mov_q, mov_fine=mov_fine, goal_corners=np.asarray(g.corners()),
        actions=acts, init_perceived=init_perceived,
        gx=g.x, gy=g.y, gux=math.cos(g.heading), guy=math.sin(g.heading),
        ghl=g.length / 2.0, ghw=g.width / 2.0,
    )


# ---------------------------------------------------------------------------
# geometric predicates (ground truth frame)


def rect_distance(a: OrientedRect, b: OrientedRect) -> float:
    """Euclidean distance between the two rectangles; 0 when they overlap."""
    return float(K.rect_rect_distance(a.corners(), b.corners()))


def _obstacle_rects(sc: Scenario, t: float) -> list[OrientedRect]:
    rects = list(sc.static_obstacles)
    for tr in sc.moving_obstacles:
        x, y, _, h = _obstacle_state(tr, t)
        rects.append(OrientedRect(x=x, y=y, length=tr.length, width=tr.width, heading=h))
    return rects


def collide(vehicle: OrientedRect, sc: Scenario, t: float = 0.0) -> bool:
    """True iff some obstacle footprint at time t is closer than TD."""
    vc = vehicle.corners()
    for r in _obstacle_rects(sc, t):
        if K.rect_rect_distance(vc, r.corners()) < sc.td:
            return True
    return False


def min_obstacle_distance(vehicle: OrientedRect, sc: Scenario, t: float = 0.0) -> float:
    vc = vehicle.corners()
    dists = [K.rect_rect_distance(vc, r.corners()) for r in _obstacle_rects(sc, t)]
    return float(min(dists)) if dists else math.inf


def offroad(vehicle: OrientedRect, sc: Scenario) -> bool:
    """True iff any part of the vehicle rectangle leaves the road union."""
    comp = compile_scenario(sc)
    return not K.rect_inside_ring(vehicle.corners(), comp.ring)


def goal(vehicle: OrientedRect, sc: Scenario) -> bool:
    """True iff the vehicle rectangle lies entirely inside the goal region."""
    comp = compile_scenario(sc)
    return bool(K.rect_inside_rect(vehicle.corners(), comp.gx, comp.gy,
                                   comp.gux, comp.guy, comp.ghl, comp.ghw))
