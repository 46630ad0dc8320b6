"""Synthetic building walks with sensor and ground-truth generation.

A scenario bundles an environment (corridors, landmark graph, access
points, stair connectors), a walk script over the graph, and a noise
model. Planning happens on an integer tick grid (one inertial sample per
tick) so phase boundaries, step completions, and sensor samples coincide
exactly; the accelerometer waveform is a chain of raised-cosine bumps
whose peaks land precisely on step completion ticks, which makes the
detected step train line up with the true one when noise is off.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .landmarks import Edge, LandmarkGraph, graph_from_dict, graph_to_dict
from .sensors import ScalarChannel, SensorTrace, TruthChannel, VectorChannel, WifiScan

TICK = 0.02                 # s per tick: 50 Hz inertial sampling
MAG_EVERY = 5               # ticks between magnetometer samples (10 Hz)
BARO_EVERY = 5              # ticks between pressure samples (10 Hz)
TRUTH_EVERY = 50            # ticks between periodic ground-truth records
GRAVITY = 9.81              # m/s^2 accelerometer baseline magnitude
BUMP_AMPLITUDE = 4.0        # m/s^2 peak-over-baseline of a step bump
BASE_PRESSURE = 1013.25     # hPa at floor zero
PRESSURE_PER_FLOOR = 0.45   # hPa lost per floor climbed
TURN_TICKS = 50             # turn-in-place phase length
TURN_ROT_TICKS = 20         # central interval of a turn that rotates
STAIR_STEP_TICKS = 75       # slow stair cadence (1.5 s per step)
RSS_CUTOFF_DBM = -100       # weaker APs are absent from a scan
FLOOR_ATTENUATION_DB = 12.0  # extra path loss per concrete slab crossed
FALSE_WALK_PERIOD_TICKS = (18, 29, 52, 23)  # arm-shake bump cadence


class ScenarioError(ValueError):
    """Scenario file or walk script violates its contract."""


@dataclass(frozen=True)
class Ap:
    mac: str
    x: float
    y: float
    floor: int
    tx_power_dbm: float
    path_loss_exponent: float


@dataclass(frozen=True)
class CompassZone:
    """Axis-aligned region whose local field skews the compass."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    floor: int
    bias_deg: float

    def contains(self, x: float, y: float, floor: float) -> bool:
        return (self.x_min <= x <= self.x_max
                and self.y_min <= y <= self.y_max
                and abs(floor - self.floor) <= 0.5)


@dataclass(frozen=True)
class Environment:
    floor_height_m: float
    corridors: dict[int, list[list[tuple[float, float]]]]
    graph: LandmarkGraph
    aps: tuple[Ap, ...]
    stairs: tuple[tuple[str, str], ...]  # (lower/upper landmark id pairs)


@dataclass(frozen=True)
class WalkScript:
    """Waypoint walk over the landmark graph.

    stops pause the walker on arrival at a waypoint (every visit).
    irregular_legs walk with the erratic cadence/stride cycles instead of
    the nominal ones; false_walking injects step-like arm motion into
    still intervals without moving the walker.
    """

    waypoints: tuple[str, ...]
    speed_mps: float = 1.26
    step_length_m: float = 0.63
    stops: tuple[tuple[str, float], ...] = ()
    false_walking: tuple[tuple[float, float], ...] = ()
    irregular_legs: frozenset[int] = frozenset()
    irregular_periods: tuple[float, ...] = (0.42, 0.58, 0.74, 0.9)
    irregular_lengths: tuple[float, ...] = (0.33, 0.33, 0.93, 0.93)
    scan_interval_s: float = 2.0
    warmup_s: float = 2.0
    cooldown_s: float = 2.0


@dataclass(frozen=True)
class NoiseModel:
    seed: int = 0
    accel_std: float = 0.0        # m/s^2
    gyro_bias: float = 0.0        # rad/s, constant drift
    gyro_std: float = 0.0         # rad/s
    baro_std: float = 0.0         # hPa
    shadowing_std: float = 0.0    # dB
    compass_zones: tuple[CompassZone, ...] = ()


@dataclass(frozen=True)
class Scenario:
    environment: Environment
    walk: WalkScript
    noise: NoiseModel


# ---------------------------------------------------------------------------
# scenario (de)serialization


def _seg_point_dist(px, py, ax, ay, bx, by) -> float:
    vx, vy = bx - ax, by - ay
    L2 = vx * vx + vy * vy
    if L2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / L2))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _on_corridor(x: float, y: float, polylines: list[list[tuple[float, float]]]) -> bool:
    for line in polylines:
        for (ax, ay), (bx, by) in zip(line, line[1:]):
            if _seg_point_dist(x, y, ax, ay, bx, by) <= 1e-6:
                return True
    return False


def _require_keys(obj: dict, allowed: set[str], required: set[str], what: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{what} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"{what} has unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ScenarioError(f"{what} is missing fields {sorted(missing)}")


_ENV_KEYS = {"floor_height_m", "corridors", "graph", "aps", "stairs"}
_WALK_KEYS = {"waypoints", "speed_mps", "step_length_m", "stops", "false_walking",
              "irregular_legs", "irregular_periods", "irregular_lengths",
              "scan_interval_s", "warmup_s", "cooldown_s"}
_NOISE_KEYS = {"seed", "accel_std_mps2", "gyro_bias_rad_s", "gyro_std_rad_s",
               "baro_std_hpa", "shadowing_std_db", "compass_zones"}
_ZONE_KEYS = {"x_min", "x_max", "y_min", "y_max", "floor", "bias_deg"}


def scenario_from_dict(data: dict) -> Scenario:
    _require_keys(data, {"environment", "walk", "noise"},
                  {"environment", "walk", "noise"}, "scenario")
    env_d, walk_d, noise_d = data["environment"], data["walk"], data["noise"]

    _require_keys(env_d, _ENV_KEYS, {"floor_height_m", "corridors", "graph", "aps"},
                  "environment")
    floor_height = float(env_d["floor_height_m"])
    if not floor_height > 0:
        raise ScenarioError("floor_height_m must be positive")
    corridors: dict[int, list[list[tuple[float, float]]]] = {}
    for key, lines in env_d["corridors"].items():
        corridors[int(key)] = [[(float(p[0]), float(p[1])) for p in line]
                               for line in lines]
    graph = graph_from_dict(env_d["graph"])
    aps = []
    seen_macs = set()
    for ap_d in env_d["aps"]:
        _require_keys(ap_d, {"mac", "x", "y", "floor", "tx_power_dbm",
                             "path_loss_exponent"},
                      {"mac", "x", "y", "floor", "tx_power_dbm",
                       "path_loss_exponent"}, "ap")
        ap = Ap(mac=str(ap_d["mac"]), x=float(ap_d["x"]), y=float(ap_d["y"]),
                floor=int(ap_d["floor"]), tx_power_dbm=float(ap_d["tx_power_dbm"]),
                path_loss_exponent=float(ap_d["path_loss_exponent"]))
        if not (math.isfinite(ap.x) and math.isfinite(ap.y)):
            raise ScenarioError(f"ap {ap.mac!r} has non-finite coordinates")
        if ap.mac in seen_macs:
            raise ScenarioError(f"duplicate ap mac {ap.mac!r}")
        seen_macs.add(ap.mac)
        aps.append(ap)
    stairs = []
    for st in env_d.get("stairs", []):
        _require_keys(st, {"from", "to"}, {"from", "to"}, "stair")
        frm, to = str(st["from"]), str(st["to"])
        for lid in (frm, to):
            if lid not in graph.nodes:
                raise ScenarioError(f"stair references unknown landmark {lid!r}")
        if graph.nodes[frm].floor == graph.nodes[to].floor:
            raise ScenarioError(f"stair {frm!r}->{to!r} does not change floor")
        stairs.append((frm, to))
    for lm in graph.nodes.values():
        lines = corridors.get(lm.floor)
        if not lines or not _on_corridor(lm.x, lm.y, lines):
            raise ScenarioError(
                f"landmark {lm.id!r} is not on a floor-{lm.floor} corridor")
    env = Environment(floor_height_m=floor_height, corridors=corridors,
                      graph=graph, aps=tuple(aps), stairs=tuple(stairs))

    _require_keys(walk_d, _WALK_KEYS, {"waypoints"}, "walk")
    waypoints = tuple(str(w) for w in walk_d["waypoints"])
    if len(waypoints) < 2:
        raise ScenarioError("walk needs at least two waypoints")
    for wp in waypoints:
        if wp not in graph.nodes:
            raise ScenarioError(f"waypoint {wp!r} is not a landmark")
    stops = []
    for st in walk_d.get("stops", []):
        _require_keys(st, {"at", "duration_s"}, {"at", "duration_s"}, "stop")
        if st["at"] not in graph.nodes:
            raise ScenarioError(f"stop at unknown landmark {st['at']!r}")
        dur = float(st["duration_s"])
        if not dur > 0:
            raise ScenarioError("stop duration must be positive")
        stops.append((str(st["at"]), dur))
    false_walking = []
    for fw in walk_d.get("false_walking", []):
        _require_keys(fw, {"t", "duration_s"}, {"t", "duration_s"}, "false_walking")
        false_walking.append((float(fw["t"]), float(fw["duration_s"])))
    walk = WalkScript(
        waypoints=waypoints,
        speed_mps=float(walk_d.get("speed_mps", 1.26)),
        step_length_m=float(walk_d.get("step_length_m", 0.63)),
        stops=tuple(stops),
        false_walking=tuple(false_walking),
        irregular_legs=frozenset(int(i) for i in walk_d.get("irregular_legs", [])),
        irregular_periods=tuple(float(p) for p in walk_d.get(
            "irregular_periods", WalkScript.irregular_periods)),
        irregular_lengths=tuple(float(v) for v in walk_d.get(
            "irregular_lengths", WalkScript.irregular_lengths)),
        scan_interval_s=float(walk_d.get("scan_interval_s", 2.0)),
        warmup_s=float(walk_d.get("warmup_s", 2.0)),
        cooldown_s=float(walk_d.get("cooldown_s", 2.0)),
    )
    if not walk.speed_mps > 0 or not walk.step_length_m > 0:
        raise ScenarioError("speed and step length must be positive")
    if not walk.scan_interval_s > 0:
        raise ScenarioError("scan interval must be positive")
    for leg in walk.irregular_legs:
        if not 0 <= leg < len(waypoints) - 1:
            raise ScenarioError(f"irregular leg index {leg} out of range")
    if any(p <= 0 for p in walk.irregular_periods) or not walk.irregular_periods:
        raise ScenarioError("irregular periods must be positive")
    if any(v <= 0 for v in walk.irregular_lengths) or not walk.irregular_lengths:
        raise ScenarioError("irregular lengths must be positive")

    _require_keys(noise_d, _NOISE_KEYS, set(), "noise")
    zones = []
    for z in noise_d.get("compass_zones", []):
        _require_keys(z, _ZONE_KEYS, _ZONE_KEYS, "compass zone")
        zone = CompassZone(x_min=float(z["x_min"]), x_max=float(z["x_max"]),
                           y_min=float(z["y_min"]), y_max=float(z["y_max"]),
                           floor=int(z["floor"]), bias_deg=float(z["bias_deg"]))
        if zone.x_min > zone.x_max or zone.y_min > zone.y_max:
            raise ScenarioError("compass zone bounds are inverted")
        zones.append(zone)
    noise = NoiseModel(
        seed=int(noise_d.get("seed", 0)),
        accel_std=float(noise_d.get("accel_std_mps2", 0.0)),
        gyro_bias=float(noise_d.get("gyro_bias_rad_s", 0.0)),
        gyro_std=float(noise_d.get("gyro_std_rad_s", 0.0)),
        baro_std=float(noise_d.get("baro_std_hpa", 0.0)),
        shadowing_std=float(noise_d.get("shadowing_std_db", 0.0)),
        compass_zones=tuple(zones),
    )
    for name in ("accel_std", "gyro_std", "baro_std", "shadowing_std"):
        if getattr(noise, name) < 0:
            raise ScenarioError(f"{name} must be non-negative")
    return Scenario(environment=env, walk=walk, noise=noise)


def scenario_to_dict(sc: Scenario) -> dict:
    env, walk, noise = sc.environment, sc.walk, sc.noise
    return {
        "environment": {
            "floor_height_m": env.floor_height_m,
            "corridors": {str(f): [[list(p) for p in line] for line in lines]
                          for f, lines in env.corridors.items()},
            "graph": graph_to_dict(env.graph),
            "aps": [{"mac": a.mac, "x": a.x, "y": a.y, "floor": a.floor,
                     "tx_power_dbm": a.tx_power_dbm,
                     "path_loss_exponent": a.path_loss_exponent}
                    for a in env.aps],
            "stairs": [{"from": f, "to": t} for f, t in env.stairs],
        },
        "walk": {
            "waypoints": list(walk.waypoints),
            "speed_mps": walk.speed_mps,
            "step_length_m": walk.step_length_m,
            "stops": [{"at": a, "duration_s": d} for a, d in walk.stops],
            "false_walking": [{"t": t, "duration_s": d}
                              for t, d in walk.false_walking],
            "irregular_legs": sorted(walk.irregular_legs),
            "irregular_periods": list(walk.irregular_periods),
            "irregular_lengths": list(walk.irregular_lengths),
            "scan_interval_s": walk.scan_interval_s,
            "warmup_s": walk.warmup_s,
            "cooldown_s": walk.cooldown_s,
        },
        "noise": {
            "seed": noise.seed,
            "accel_std_mps2": noise.accel_std,
            "gyro_bias_rad_s": noise.gyro_bias,
            "gyro_std_rad_s": noise.gyro_std,
            "baro_std_hpa": noise.baro_std,
            "shadowing_std_db": noise.shadowing_std,
            "compass_zones": [{"x_min": z.x_min, "x_max": z.x_max,
                               "y_min": z.y_min, "y_max": z.y_max,
                               "floor": z.floor, "bias_deg": z.bias_deg}
                              for z in noise.compass_zones],
        },
    }


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


# ---------------------------------------------------------------------------
# walk planning


@dataclass(frozen=True)
class StepSpec:
    """One true step: completion tick, cadence, stride, resulting pose."""

    tick: int
    period_ticks: int
    length: float
    heading: float
    x: float
    y: float
    floor: float


@dataclass(frozen=True)
class Phase:
    kind: str  # "still" | "turn" | "walk" | "climb"
    t0: int
    t1: int
    x0: float
    y0: float
    floor0: float
    x1: float
    y1: float
    floor1: float
    heading0: float
    heading1: float
    steps: tuple[StepSpec, ...] = ()
    rot0: int = 0
    rot1: int = 0
    omega: float = 0.0


@dataclass
class WalkPlan:
    phases: list[Phase]
    steps: list[StepSpec]
    false_bumps: list[tuple[int, int]]  # (completion tick, period ticks)
    total_ticks: int

    @property
    def scripted_step_count(self) -> int:
        """Peaks a step detector should find: true steps plus arm shakes."""
        return len(self.steps) + len(self.false_bumps)

    @property
    def duration_s(self) -> float:
        return self.total_ticks * TICK


def _ticks(seconds: float, what: str) -> int:
    t = seconds / TICK
    n = round(t)
    if abs(t - n) > 1e-9:
        raise ScenarioError(f"{what} ({seconds} s) is not a sample-grid multiple")
    return int(n)


def _find_edge(graph: LandmarkGraph, a: str, b: str) -> Edge:
    for e in graph.out_edges(a):
        if e.to_id == b:
            return e
    raise ScenarioError(f"waypoints {a!r} -> {b!r} are not connected")


def plan_walk(env: Environment, script: WalkScript) -> WalkPlan:
    """Lay the scripted walk out on the tick grid.

    Walk legs step at the nominal cadence (or the irregular cycles), turns
    in place take one second with the rotation confined to the middle, and
    stair legs are padded so a climb always starts on a whole second,
    keeping the pressure ramp aligned with typical analysis windows.
    """
    g = env.graph
    ids = script.waypoints
    pt_nominal = _ticks(script.step_length_m / script.speed_mps, "step period")
    if pt_nominal < 16:
        raise ScenarioError("step period too short to separate step peaks")
    irr_pt = tuple(_ticks(p, "irregular period") for p in script.irregular_periods)
    if min(irr_pt) < 16:
        raise ScenarioError("irregular period too short to separate step peaks")

    stop_for = dict(script.stops)
    phases: list[Phase] = []
    steps_all: list[StepSpec] = []

    first = _find_edge(g, ids[0], ids[1])
    start = g.nodes[ids[0]]
    state = {"tick": 0, "x": start.x, "y": start.y,
             "floor": float(start.floor), "heading": first.heading}

    def emit_still(dur_ticks: int) -> None:
        if dur_ticks <= 0:
            return
        t0 = state["tick"]
        phases.append(Phase("still", t0, t0 + dur_ticks,
                            state["x"], state["y"], state["floor"],
                            state["x"], state["y"], state["floor"],
                            state["heading"], state["heading"]))
        state["tick"] = t0 + dur_ticks

    def emit_turn(target: float) -> None:
        delta = ((target - state["heading"] + math.pi) % (2 * math.pi)) - math.pi
        if abs(delta) < 1e-12:
            state["heading"] = target
            return
        t0 = state["tick"]
        margin = (TURN_TICKS - TURN_ROT_TICKS) // 2
        rot0 = t0 + margin
        rot1 = rot0 + TURN_ROT_TICKS
        phases.append(Phase("turn", t0, t0 + TURN_TICKS,
                            state["x"], state["y"], state["floor"],
                            state["x"], state["y"], state["floor"],
                            state["heading"], target,
                            rot0=rot0, rot1=rot1,
                            omega=delta / (TURN_ROT_TICKS * TICK)))
        state["tick"] = t0 + TURN_TICKS
        state["heading"] = target

    def emit_leg(edge: Edge, kind: str, periods: list[int],
                 lengths: list[float], floor_to: float) -> None:
        t0 = state["tick"]
        x0, y0, f0 = state["x"], state["y"], state["floor"]
        target = (g.nodes[edge.to_id].x, g.nodes[edge.to_id].y)
        hd = edge.heading
        cx, cy = x0, y0
        tick = t0
        total = t0 + sum(periods)
        specs = []
        for k, (pt, ln) in enumerate(zip(periods, lengths)):
            tick += pt
            if k == len(periods) - 1:
                cx, cy = target  # land exactly on the waypoint
            else:
                cx = cx + ln * math.cos(hd)
                cy = cy + ln * math.sin(hd)
            fl = f0 + (tick - t0) / (total - t0) * (floor_to - f0) \
                if floor_to != f0 else f0
            specs.append(StepSpec(tick=tick, period_ticks=pt, length=ln,
                                  heading=hd, x=cx, y=cy, floor=fl))
        phases.append(Phase(kind, t0, total, x0, y0, f0,
                            target[0], target[1], floor_to, hd, hd,
                            steps=tuple(specs)))
        steps_all.extend(specs)
        state["tick"] = total
        state["x"], state["y"] = target
        state["floor"] = floor_to
        state["heading"] = hd

    emit_still(_ticks(script.warmup_s, "warmup"))

    for leg_idx, (a, b) in enumerate(zip(ids, ids[1:])):
        edge = _find_edge(g, a, b)
        na, nb = g.nodes[a], g.nodes[b]
        if na.floor != nb.floor:
            if abs(na.floor - nb.floor) != 1:
                raise ScenarioError(
                    f"stair leg {a!r}->{b!r} must span exactly one floor")
            emit_turn(edge.heading)
            pad = (-state["tick"]) % 50  # climbs start on whole seconds
            emit_still(pad)
            n = max(1, round(edge.distance / script.step_length_m))
            emit_leg(edge, "climb", [STAIR_STEP_TICKS] * n,
                     [edge.distance / n] * n, float(nb.floor))
        else:
            emit_turn(edge.heading)
            n = max(1, round(edge.distance / script.step_length_m))
            if leg_idx in script.irregular_legs:
                # erratic strides from the cycle, closed by one long stride
                # onto the waypoint; strides stay below 2.0 so the remainder
                # always lands in [0.15, 2.0]
                if max(script.irregular_lengths) > 1.85:
                    raise ScenarioError("irregular strides must stay below 1.85")
                cyc = script.irregular_lengths
                lengths = []
                remaining = edge.distance
                while remaining > 2.0:
                    s = cyc[len(lengths) % len(cyc)]
                    lengths.append(s)
                    remaining -= s
                lengths.append(remaining)
                periods = [irr_pt[k % len(irr_pt)] for k in range(len(lengths))]
            else:
                periods = [pt_nominal] * n
                lengths = [edge.distance / n] * n
            emit_leg(edge, "walk", periods, lengths, float(nb.floor))
        if b in stop_for:
            emit_still(_ticks(stop_for[b], f"stop at {b!r}"))

    emit_still(_ticks(script.cooldown_s, "cooldown"))
    total = state["tick"]

    false_bumps: list[tuple[int, int]] = []
    for t_start, dur in script.false_walking:
        lo = max(0, round(t_start / TICK))
        hi = min(total, round((t_start + dur) / TICK))
        for ph in phases:
            if ph.kind != "still":
                continue
            w0, w1 = max(lo, ph.t0), min(hi, ph.t1)
            if w1 <= w0:
                continue
            tick = w0
            k = 0
            while True:
                pt = FALSE_WALK_PERIOD_TICKS[k % len(FALSE_WALK_PERIOD_TICKS)]
                if tick + pt > w1:
                    break
                tick += pt
                false_bumps.append((tick, pt))
                k += 1
    false_bumps.sort()

    return WalkPlan(phases=phases, steps=steps_all, false_bumps=false_bumps,
                    total_ticks=total)


# ---------------------------------------------------------------------------
# channel synthesis


def _plan_state(plan: WalkPlan, ticks: np.ndarray) -> tuple[np.ndarray, ...]:
    """Ground-truth (x, y, floor, facing) at each requested tick."""
    x = np.empty(len(ticks))
    y = np.empty(len(ticks))
    fl = np.empty(len(ticks))
    hd = np.empty(len(ticks))
    for i, ph in enumerate(plan.phases):
        last = i == len(plan.phases) - 1
        mask = (ticks >= ph.t0) & ((ticks <= ph.t1) if last else (ticks < ph.t1))
        if not mask.any():
            continue
        tt = ticks[mask]
        if ph.kind in ("still", "turn"):
            x[mask] = ph.x0
            y[mask] = ph.y0
            fl[mask] = ph.floor0
        else:
            xp = np.array([ph.t0] + [s.tick for s in ph.steps], dtype=float)
            x[mask] = np.interp(tt, xp, [ph.x0] + [s.x for s in ph.steps])
            y[mask] = np.interp(tt, xp, [ph.y0] + [s.y for s in ph.steps])
            if ph.floor1 != ph.floor0:
                fl[mask] = ph.floor0 + (tt - ph.t0) / (ph.t1 - ph.t0) \
                    * (ph.floor1 - ph.floor0)
            else:
                fl[mask] = ph.floor0
        if ph.kind == "turn":
            prog = np.clip(tt, ph.rot0, ph.rot1) - ph.rot0
            hd[mask] = ph.heading0 + ph.omega * prog * TICK
        else:
            hd[mask] = ph.heading0
    return x, y, fl, hd


def _bump_train(plan: WalkPlan, n: int) -> np.ndarray:
    """Accelerometer magnitude: gravity plus one raised-cosine bump per
    step, peaking exactly at the completion tick. A bump is clipped to
    half the gap to its neighbors so dissimilar cadences never overlap."""
    az = np.full(n, GRAVITY)
    bumps = sorted([(s.tick, s.period_ticks) for s in plan.steps]
                   + plan.false_bumps)
    for i, (tick, pt) in enumerate(bumps):
        gap_prev = tick - bumps[i - 1][0] if i > 0 else pt
        gap_next = bumps[i + 1][0] - tick if i + 1 < len(bumps) else pt
        w_lo = min(pt, gap_prev) / 2
        w_hi = min(pt, gap_next) / 2
        offs = np.arange(math.floor(-w_lo), math.ceil(w_hi) + 1)
        offs = offs[(offs >= -w_lo) & (offs < w_hi)]
        idx = tick + offs
        keep = (idx >= 0) & (idx < n)
        az[idx[keep]] += (BUMP_AMPLITUDE / 2) \
            * (1 + np.cos(2 * np.pi * offs[keep] / pt))
    return az


def _ap_rss(ap: Ap, x: float, y: float, floor: float, floor_height: float) -> float:
    """Log-distance path loss with a per-slab penalty; distance floored at 1 m.

    Without the slab term, positions stacked on adjacent floors differ by
    only the vertical leg of the 3D distance, which integer rounding can
    erase entirely. Slabs attenuate far more than free space, and that
    extra loss is what makes floors separable from fingerprints at all.
    """
    df = floor - ap.floor
    dz = df * floor_height
    d = math.sqrt((x - ap.x) ** 2 + (y - ap.y) ** 2 + dz * dz)
    return (ap.tx_power_dbm
            - 10.0 * ap.path_loss_exponent * math.log10(max(d, 1.0))
            - FLOOR_ATTENUATION_DB * abs(df))


def _zone_bias(zones: tuple[CompassZone, ...], x, y, floor) -> np.ndarray:
    bias = np.zeros(len(x))
    open_mask = np.ones(len(x), dtype=bool)
    for z in zones:
        inside = open_mask & (x >= z.x_min) & (x <= z.x_max) \
            & (y >= z.y_min) & (y <= z.y_max) & (np.abs(floor - z.floor) <= 0.5)
        bias[inside] = math.radians(z.bias_deg)
        open_mask &= ~inside
    return bias


def generate_trace(env: Environment, script: WalkScript,
                   noise: NoiseModel) -> SensorTrace:
    """Simulate the scripted walk into a sensor trace with embedded truth.

    Each channel draws from its own child stream of the master seed, so
    enabling noise on one channel never perturbs another. Identical inputs
    produce identical traces.
    """
    plan = plan_walk(env, script)
    n = plan.total_ticks + 1
    t_all = np.arange(n) * TICK
    ss = np.random.SeedSequence(noise.seed)
    rng_accel, rng_gyro, _rng_mag, rng_baro, rng_wifi, _rng_q = \
        [np.random.default_rng(s) for s in ss.spawn(6)]

    az = _bump_train(plan, n)
    if noise.accel_std > 0:
        az = az + rng_accel.normal(0.0, noise.accel_std, n)
    accel = VectorChannel(t=t_all, v=np.column_stack(
        [np.zeros(n), np.zeros(n), az]))

    wz = np.zeros(n)
    for ph in plan.phases:
        if ph.kind == "turn":
            wz[ph.rot0:ph.rot1] = ph.omega
    if noise.gyro_bias:
        wz = wz + noise.gyro_bias
    if noise.gyro_std > 0:
        wz = wz + rng_gyro.normal(0.0, noise.gyro_std, n)
    gyro = VectorChannel(t=t_all, v=np.column_stack(
        [np.zeros(n), np.zeros(n), wz]))

    mag_ticks = np.arange(0, plan.total_ticks + 1, MAG_EVERY)
    mx_x, mx_y, mx_f, mx_h = _plan_state(plan, mag_ticks)
    psi = mx_h + _zone_bias(noise.compass_zones, mx_x, mx_y, mx_f)
    mag = VectorChannel(t=mag_ticks * TICK, v=np.column_stack(
        [np.cos(psi), np.sin(psi), np.zeros(len(psi))]))

    baro_ticks = np.arange(0, plan.total_ticks + 1, BARO_EVERY)
    _, _, b_floor, _ = _plan_state(plan, baro_ticks)
    pressure = BASE_PRESSURE - PRESSURE_PER_FLOOR * b_floor
    if noise.baro_std > 0:
        pressure = pressure + rng_baro.normal(0.0, noise.baro_std, len(pressure))
    baro = ScalarChannel(t=baro_ticks * TICK, v=pressure)

    scan_step = _ticks(script.scan_interval_s, "scan interval")
    scan_ticks = np.arange(scan_step, plan.total_ticks + 1, scan_step)
    scans: list[WifiScan] = []
    if len(scan_ticks):
        sx, sy, sf, _ = _plan_state(plan, scan_ticks)
        for i, tk in enumerate(scan_ticks):
            readings: dict[str, int] = {}
            for ap in env.aps:
                base = _ap_rss(ap, float(sx[i]), float(sy[i]), float(sf[i]),
                               env.floor_height_m)
                if noise.shadowing_std > 0:
                    base -= rng_wifi.normal(0.0, noise.shadowing_std)
                rss = int(round(base))
                if rss >= RSS_CUTOFF_DBM:
                    readings[ap.mac] = rss
            scans.append(WifiScan(t=float(tk * TICK), readings=readings))

    marks = {0, plan.total_ticks}
    for ph in plan.phases:
        marks.add(ph.t0)
        marks.add(ph.t1)
    for s in plan.steps:
        marks.add(s.tick)
    marks.update(range(0, plan.total_ticks + 1, TRUTH_EVERY))
    truth_ticks = np.array(sorted(marks))
    tx, ty, tf, _ = _plan_state(plan, truth_ticks)
    truth = TruthChannel(t=truth_ticks * TICK,
                         xy=np.column_stack([tx, ty]), floor=tf)

    return SensorTrace(accel=accel, gyro=gyro, mag=mag, baro=baro,
                       wifi=scans, truth=truth)


def generate_test_queries(
    env: Environment,
    positions: list[tuple[float, float, int]],
    noise: NoiseModel,
) -> list[tuple[tuple[float, float, int], dict[str, int]]]:
    """Fingerprints at known poses from the same propagation model.

    Shadowing draws come from a stream independent of every trace channel,
    so queries vary with the seed without disturbing trace generation.
    """
    rng = np.random.default_rng(np.random.SeedSequence(noise.seed).spawn(6)[5])
    out = []
    for (x, y, floor) in positions:
        readings: dict[str, int] = {}
        for ap in env.aps:
            base = _ap_rss(ap, float(x), float(y), float(floor),
                           env.floor_height_m)
            if noise.shadowing_std > 0:
                base -= rng.normal(0.0, noise.shadowing_std)
            rss = int(round(base))
            if rss >= RSS_CUTOFF_DBM:
                readings[ap.mac] = rss
        out.append(((float(x), float(y), int(floor)), readings))
    return out


# ---------------------------------------------------------------------------
# canned scenarios


def _rect_corridors() -> list[list[tuple[float, float]]]:
    return [[(0.0, 0.0), (25.2, 0.0)],
            [(25.2, 0.0), (25.2, 12.6)],
            [(25.2, 12.6), (0.0, 12.6)],
            [(0.0, 12.6), (0.0, 0.0)]]


# Every stop node needs a nearby AP displaced along the walking direction:
# integer-rounded RSS must separate a dwell scan from the closest walking
# scan (~0.5 m away), which takes a >1 dB gradient somewhere in the vector.
_APS = [
    ("ap-01", 2.0, 1.5, 1, -38.0, 2.8),
    ("ap-02", 22.0, 2.5, 1, -41.0, 2.7),
    ("ap-03", 24.0, 11.0, 1, -39.0, 2.9),
    ("ap-04", 9.0, 11.5, 1, -42.0, 3.0),
    ("ap-05", 4.5, 3.0, 2, -40.0, 2.75),
    ("ap-06", 20.5, 1.0, 2, -37.0, 2.85),
    ("ap-07", 23.5, 10.5, 2, -43.0, 2.65),
    ("ap-08", 7.5, 12.0, 2, -39.0, 2.95),
    ("ap-09", 14.6, 0.5, 1, -39.5, 2.7),
    ("ap-10", 24.7, 8.3, 1, -38.5, 2.85),
    ("ap-11", 15.5, 12.1, 1, -40.5, 2.75),
    ("ap-12", 13.0, 12.1, 2, -38.0, 2.9),
    ("ap-13", 18.1, 12.1, 2, -41.5, 2.7),
    ("ap-14", 2.0, 12.1, 1, -40.0, 2.8),
]


def _two_floor_graph() -> dict:
    nodes = [
        ("C1", 0.0, 0.0, 1, ["gyro"]),
        ("D1", 12.6, 0.0, 1, ["acc"]),
        ("C2", 25.2, 0.0, 1, ["gyro"]),
        ("D2", 25.2, 6.3, 1, ["acc"]),
        ("C3", 25.2, 12.6, 1, ["gyro"]),
        ("SE1", 17.64, 12.6, 1, ["baro_in"]),
        ("SX2", 17.64, 12.6, 1, ["baro_out"]),
        ("C4", 0.0, 12.6, 1, ["gyro"]),
        ("SX1", 15.12, 12.6, 2, ["baro_out"]),
        ("SE2", 20.16, 12.6, 2, ["baro_in"]),
        ("C1.2", 0.0, 0.0, 2, ["gyro"]),
        ("C2.2", 25.2, 0.0, 2, ["gyro"]),
        ("C3.2", 25.2, 12.6, 2, ["gyro"]),
        ("C4.2", 0.0, 12.6, 2, ["gyro"]),
    ]
    edges = [
        ("C1", "D1", 0.0, 12.6),
        ("D1", "C2", 0.0, 12.6),
        ("C2", "D2", 90.0, 6.3),
        ("D2", "C3", 90.0, 6.3),
        ("C3", "SE1", 180.0, 7.56),
        ("SE1", "SX1", 180.0, 2.52),
        ("SX1", "C4.2", 180.0, 15.12),
        ("C4.2", "C1.2", 270.0, 12.6),
        ("C1.2", "C2.2", 0.0, 25.2),
        ("C2.2", "C3.2", 90.0, 12.6),
        ("C3.2", "SE2", 180.0, 5.04),
        ("SE2", "SX2", 180.0, 2.52),
        ("SX2", "C4", 180.0, 17.64),
        ("C4", "C1", 270.0, 12.6),
        ("C3", "C4", 180.0, 25.2),
    ]
    return {
        "auto_reverse": True,
        "nodes": [{"id": i, "x": x, "y": y, "floor": f, "rules": r}
                  for i, x, y, f, r in nodes],
        "edges": [{"from": a, "to": b, "heading_deg": h, "distance_m": d}
                  for a, b, h, d in edges],
    }


def _base_environment() -> dict:
    return {
        "floor_height_m": 3.5,
        "corridors": {"1": [[list(p) for p in line] for line in _rect_corridors()],
                      "2": [[list(p) for p in line] for line in _rect_corridors()]},
        "graph": _two_floor_graph(),
        "aps": [{"mac": m, "x": x, "y": y, "floor": f, "tx_power_dbm": tx,
                 "path_loss_exponent": ple}
                for m, x, y, f, tx, ple in _APS],
        "stairs": [{"from": "SE1", "to": "SX1"}, {"from": "SE2", "to": "SX2"}],
    }


def two_floor_scenario(
    extra_loops: int = 0,
    seed: int = 0,
    accel_std: float = 0.0,
    gyro_bias: float = 0.0,
    gyro_std: float = 0.0,
    baro_std: float = 0.0,
    shadowing_std: float = 0.0,
    compass_bias_deg: float = 0.0,
) -> Scenario:
    """Two floors connected by stairs, walked in a single pass.

    The route crosses both doors, climbs to the upper floor, circles it,
    and descends back; extra_loops appends ground-floor laps to stretch
    the walk. A non-zero compass_bias_deg skews the compass over the lower
    south half and the entire upper floor.
    """
    waypoints = ["C1", "D1", "C2", "D2", "C3", "SE1", "SX1", "C4.2", "C1.2",
                 "C2.2", "C3.2", "SE2", "SX2", "C4", "C1"]
    waypoints += ["D1", "C2", "D2", "C3", "C4", "C1"] * extra_loops
    zones = []
    if compass_bias_deg:
        zones = [
            {"x_min": 0.0, "x_max": 25.2, "y_min": 0.0, "y_max": 6.3,
             "floor": 1, "bias_deg": compass_bias_deg},
            {"x_min": 0.0, "x_max": 25.2, "y_min": 0.0, "y_max": 12.6,
             "floor": 2, "bias_deg": compass_bias_deg},
        ]
    return scenario_from_dict({
        "environment": _base_environment(),
        "walk": {
            "waypoints": waypoints,
            "speed_mps": 1.26,
            "step_length_m": 0.63,
            "stops": [{"at": "D1", "duration_s": 3.0},
                      {"at": "D2", "duration_s": 3.0},
                      {"at": "SE1", "duration_s": 2.0},
                      {"at": "SX1", "duration_s": 2.0},
                      {"at": "SE2", "duration_s": 2.0},
                      {"at": "SX2", "duration_s": 2.0}],
            "scan_interval_s": 2.0,
        },
        "noise": {
            "seed": seed,
            "accel_std_mps2": accel_std,
            "gyro_bias_rad_s": gyro_bias,
            "gyro_std_rad_s": gyro_std,
            "baro_std_hpa": baro_std,
            "shadowing_std_db": shadowing_std,
            "compass_zones": zones,
        },
    })


def mixed_quality_scenario(seed: int = 0, shadowing_std: float = 1.0) -> Scenario:
    """Four ground-floor laps: two steady, two with erratic cadence and
    stride, giving one walk whose segments split cleanly into high and low
    belief."""
    lap = ["D1", "C2", "D2", "C3", "C4", "C1"]
    waypoints = ["C1"] + lap * 4
    legs_per_lap = len(lap)
    # erratic laps keep the long south leg steady: short strides drift about
    # 0.15 m per nominal step, and 25.2 m of that would push the landmark
    # matcher past its confidence gate, losing every later calibration
    long_leg = 4
    irregular = sorted(
        leg for leg in
        set(range(legs_per_lap, 2 * legs_per_lap))
        | set(range(3 * legs_per_lap, 4 * legs_per_lap))
        if leg % legs_per_lap != long_leg)
    return scenario_from_dict({
        "environment": _base_environment(),
        "walk": {
            "waypoints": waypoints,
            "speed_mps": 1.26,
            "step_length_m": 0.63,
            "stops": [{"at": "D1", "duration_s": 3.0},
                      {"at": "D2", "duration_s": 3.0}],
            "irregular_legs": irregular,
            # shuffling gait: strides average short of the calibrated step
            # length, so uncorrected positions drift between landmarks
            "irregular_lengths": [0.33, 0.33, 0.63, 0.63],
            "scan_interval_s": 2.0,
        },
        "noise": {"seed": seed, "shadowing_std_db": shadowing_std},
    })
