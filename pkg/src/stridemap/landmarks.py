"""Landmark detection rules and the landmark graph.

Landmarks are positions with a known sensor signature: a brief stop (doors),
a sharp turn (corners), or the start/end of a pressure ramp (stairs and
elevators). The graph connects them with directed edges carrying the true
heading and distance of the connecting path.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sensors import MotionState, SensorConfig, SensorTrace

# Gyro events inside a confirmed stop are phone fidgeting, not corners.
# A stop is confirmed once this many consecutive windows classify Still;
# shorter stepping gaps (turning at a corner) must not mask real turns.
STILL_SUPPRESS_LABELS = 2


class GraphError(ValueError):
    """Raised when a landmark graph file is malformed or inconsistent."""


class RuleKind(enum.Enum):
    ACC = "acc"
    GYRO = "gyro"
    BARO_IN = "baro_in"
    BARO_OUT = "baro_out"


@dataclass(frozen=True)
class Rule:
    """A landmark's expected signature; turn_sign restricts gyro matches
    to left (+1) or right (-1) turns when set."""

    kind: RuleKind
    turn_sign: int | None = None


@dataclass(frozen=True)
class LandmarkConfig:
    """Thresholds for the three landmark detection rules."""

    walking_min_s: float = 2.0     # walking required on both sides of a stop
    still_min_s: float = 1.0       # stop duration window, lower bound
    still_max_s: float = 8.0       # stop duration window, upper bound
    gyro_rate_threshold: float = 1.1   # rad/s, windowed |mean wz|
    baro_window_s: float = 1.0     # tumbling pressure window
    baro_flat_threshold: float = 0.05  # hPa, adjacent window means equal
    baro_change_threshold: float = 0.3  # hPa, total ramp change


@dataclass(frozen=True)
class LandmarkEvent:
    """A detected landmark signature.

    auxiliary carries the integrated signed turn angle (gyro) or the signed
    pressure change (baro); t_end closes the interval the signature spanned.
    """

    t: float
    kind: RuleKind
    auxiliary: float = 0.0
    t_end: float = 0.0


@dataclass(frozen=True)
class Landmark:
    id: str
    x: float
    y: float
    floor: int
    rules: tuple[Rule, ...]


@dataclass(frozen=True)
class Edge:
    """Directed edge; heading is radians CCW from +x in [0, 2*pi)."""

    from_id: str
    to_id: str
    heading: float
    distance: float


@dataclass
class LandmarkGraph:
    nodes: dict[str, Landmark]
    edges: list[Edge]
    _out: dict[str, list[Edge]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._out = {}
        for e in self.edges:
            self._out.setdefault(e.from_id, []).append(e)

    def out_edges(self, landmark_id: str) -> list[Edge]:
        return self._out.get(landmark_id, [])

    def on_floor(self, floor: int) -> list[Landmark]:
        return [lm for lm in self.nodes.values() if lm.floor == floor]


def sgn(x: float) -> int:
    """Sign: 1 for positive, -1 for negative, 0 for zero."""
    if x > 0:
        return 1
    if x < 0:
        return -1
    return 0


def detect_acc_landmarks(
    motion: list[tuple[float, MotionState]],
    cfg: LandmarkConfig = LandmarkConfig(),
) -> list[LandmarkEvent]:
    """Stops bracketed by walking: Walking >= walking_min, Still within
    [still_min, still_max], Walking >= walking_min. Event time is the start
    of the Still run."""
    if len(motion) < 2:
        return []
    hop = motion[1][0] - motion[0][0]
    # collapse labels into (state, start_t, duration) runs
    runs: list[tuple[MotionState, float, float]] = []
    for t, state in motion:
        if runs and runs[-1][0] is state:
            prev = runs[-1]
            runs[-1] = (prev[0], prev[1], prev[2] + hop)
        else:
            runs.append((state, t, hop))
    events = []
    for i in range(1, len(runs) - 1):
        state, start, dur = runs[i]
        if state is not MotionState.STILL:
            continue
        w_before = runs[i - 1]
        w_after = runs[i + 1]
        if (w_before[2] >= cfg.walking_min_s
                and w_after[2] >= cfg.walking_min_s
                and cfg.still_min_s <= dur <= cfg.still_max_s):
            events.append(LandmarkEvent(t=start, kind=RuleKind.ACC,
                                        auxiliary=dur, t_end=start + dur))
    return events


def detect_gyro_landmarks(
    trace: SensorTrace,
    cfg: LandmarkConfig = LandmarkConfig(),
    sensor_cfg: SensorConfig = SensorConfig(),
    motion: list[tuple[float, MotionState]] | None = None,
) -> list[LandmarkEvent]:
    """Turns: tumbling windows of the vertical angular rate whose absolute
    mean exceeds the rate threshold. Consecutive above-threshold windows
    merge into one event at the first crossing; auxiliary is the integrated
    signed angle over the merged interval.

    When motion labels are supplied, events inside a confirmed stop
    (STILL_SUPPRESS_LABELS consecutive Still windows) are suppressed.
    """
    w = sensor_cfg.gyro_window
    t = trace.gyro.t
    if len(t) < w:
        return []
    wz = trace.gyro.v[:, 2]
    n_win = len(t) // w
    means = wz[: n_win * w].reshape(n_win, w).mean(axis=1)
    above = np.abs(means) > cfg.gyro_rate_threshold

    dt = np.empty_like(t)
    dt[:-1] = np.diff(t)
    dt[-1] = dt[-2] if len(t) > 1 else 0.0

    events = []
    i = 0
    while i < n_win:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_win and above[j + 1]:
            j += 1
        lo = i * w
        hi = (j + 1) * w  # exclusive
        angle = float(np.sum(wz[lo:hi] * dt[lo:hi]))
        t_start = float(t[lo])
        t_end = float(t[hi - 1] + dt[hi - 1])
        events.append(LandmarkEvent(t=t_start, kind=RuleKind.GYRO,
                                    auxiliary=angle, t_end=t_end))
        i = j + 1

    if motion:
        events = [ev for ev in events
                  if not _inside_confirmed_stop(ev, motion)]
    return events


def _inside_confirmed_stop(
    ev: LandmarkEvent, motion: list[tuple[float, MotionState]]
) -> bool:
    if len(motion) < 2:
        return False
    hop = motion[1][0] - motion[0][0]
    run_start = None
    run_len = 0
    for t, state in motion:
        if state is MotionState.STILL:
            if run_start is None:
                run_start = t
                run_len = 0
            run_len += 1
        else:
            if run_start is not None and run_len >= STILL_SUPPRESS_LABELS:
                if ev.t >= run_start and ev.t_end <= run_start + run_len * hop:
                    return True
            run_start = None
    if run_start is not None and run_len >= STILL_SUPPRESS_LABELS:
        if ev.t >= run_start and ev.t_end <= run_start + run_len * hop:
            return True
    return False


def _baro_window_means(trace: SensorTrace, window_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Means of tumbling pressure windows and each window's end time."""
    t = trace.baro.t
    if len(t) == 0:
        return np.empty(0), np.empty(0)
    t0 = t[0]
    idx = np.floor((t - t0) / window_s).astype(int)
    n_win = idx[-1] + 1
    sums = np.bincount(idx, weights=trace.baro.v, minlength=n_win)
    counts = np.bincount(idx, minlength=n_win)
    full = counts > 0
    means = np.full(n_win, np.nan)
    means[full] = sums[full] / counts[full]
    ends = t0 + (np.arange(n_win) + 1) * window_s
    return means, ends


def detect_baro_landmarks(
    trace: SensorTrace, cfg: LandmarkConfig = LandmarkConfig()
) -> list[LandmarkEvent]:
    """Pressure ramp entrances and exits from tumbling window means.

    An entrance is a flat window pair followed by a maximal run of
    constant-sign window deltas whose total change exceeds the change
    threshold; an exit is the mirror image. Events alternate: after an
    entrance only an exit can fire, and vice versa. Event time is the
    boundary between the flat region and the ramp; auxiliary is the signed
    pressure change over the ramp.
    """
    p, ends = _baro_window_means(trace, cfg.baro_window_s)
    n = len(p)
    if n < 3 or np.any(np.isnan(p)):
        return [] if n < 3 else _detect_baro(p[~np.isnan(p)], ends, cfg)
    return _detect_baro(p, ends, cfg)


def _detect_baro(p: np.ndarray, ends: np.ndarray, cfg: LandmarkConfig) -> list[LandmarkEvent]:
    n = len(p)
    d = np.diff(p)  # d[i] = p[i+1] - p[i]
    events: list[LandmarkEvent] = []
    vertical: bool | None = None  # None until first event
    i = 1
    while i < n:
        fired = False
        # entrance: flat into window i, monotone run after it
        if vertical is not True and abs(p[i] - p[i - 1]) < cfg.baro_flat_threshold:
            k = 0
            s0 = sgn(d[i]) if i < n - 1 else 0
            if s0 != 0:
                j = i
                while j < n - 1 and sgn(d[j]) == s0:
                    k += 1
                    j += 1
                if k >= 1 and abs(p[i + k] - p[i]) > cfg.baro_change_threshold:
                    events.append(LandmarkEvent(
                        t=float(ends[i]), kind=RuleKind.BARO_IN,
                        auxiliary=float(p[i + k] - p[i]), t_end=float(ends[i])))
                    vertical = True
                    fired = True
        # exit: flat after window i, monotone run ending at it
        if (not fired and vertical is not False and i < n - 1
                and abs(p[i] - p[i + 1]) < cfg.baro_flat_threshold):
            s0 = sgn(d[i - 1])
            if s0 != 0:
                k = 0
                j = i - 1
                while j >= 0 and sgn(d[j]) == s0:
                    k += 1
                    j -= 1
                if k >= 1 and abs(p[i - k] - p[i]) > cfg.baro_change_threshold:
                    events.append(LandmarkEvent(
                        t=float(ends[i]), kind=RuleKind.BARO_OUT,
                        auxiliary=float(p[i] - p[i - k]), t_end=float(ends[i])))
                    vertical = False
        i += 1
    return events


_RULE_NAMES = {
    "acc": (RuleKind.ACC, None),
    "gyro": (RuleKind.GYRO, None),
    "gyro+": (RuleKind.GYRO, 1),
    "gyro-": (RuleKind.GYRO, -1),
    "baro_in": (RuleKind.BARO_IN, None),
    "baro_out": (RuleKind.BARO_OUT, None),
}

# Geometry consistency tolerances for declared edge heading/distance.
HEADING_TOL_RAD = math.radians(1.0)
DISTANCE_TOL_M = 0.05


def _parse_rule(name: str) -> Rule:
    try:
        kind, sign = _RULE_NAMES[name]
    except KeyError:
        raise GraphError(f"unknown rule {name!r}") from None
    return Rule(kind=kind, turn_sign=sign)


def bearing(x1: float, y1: float, x2: float, y2: float) -> float:
    """Planar heading from point 1 to point 2, radians CCW from +x in [0, 2*pi)."""
    return math.atan2(y2 - y1, x2 - x1) % (2 * math.pi)


def circular_diff(a: float, b: float) -> float:
    """Absolute angular difference folded into [0, pi]."""
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def graph_from_dict(data: dict) -> LandmarkGraph:
    """Build and validate a landmark graph from its JSON object form."""
    try:
        node_list = data["nodes"]
        edge_list = data["edges"]
    except (KeyError, TypeError):
        raise GraphError("graph object requires 'nodes' and 'edges'") from None
    auto_reverse = bool(data.get("auto_reverse", False))

    nodes: dict[str, Landmark] = {}
    for nd in node_list:
        lid = nd["id"]
        if lid in nodes:
            raise GraphError(f"duplicate landmark id {lid!r}")
        rules = tuple(_parse_rule(r) for r in nd.get("rules", []))
        nodes[lid] = Landmark(id=lid, x=float(nd["x"]), y=float(nd["y"]),
                              floor=int(nd["floor"]), rules=rules)

    edges: list[Edge] = []
    for ed in edge_list:
        frm, to = ed["from"], ed["to"]
        for endpoint in (frm, to):
            if endpoint not in nodes:
                raise GraphError(f"edge references unknown landmark {endpoint!r}")
        heading = math.radians(float(ed["heading_deg"])) % (2 * math.pi)
        distance = float(ed["distance_m"])
        if distance <= 0:
            raise GraphError(f"edge {frm!r}->{to!r} has non-positive distance")
        a, b = nodes[frm], nodes[to]
        if not ed.get("override", False):
            geom_d = math.hypot(b.x - a.x, b.y - a.y)
            if abs(geom_d - distance) > DISTANCE_TOL_M:
                raise GraphError(
                    f"edge {frm!r}->{to!r}: declared distance {distance} "
                    f"disagrees with coordinates ({geom_d:.3f})")
            geom_h = bearing(a.x, a.y, b.x, b.y)
            if circular_diff(geom_h, heading) > HEADING_TOL_RAD:
                raise GraphError(
                    f"edge {frm!r}->{to!r}: declared heading disagrees "
                    f"with coordinates")
        edges.append(Edge(from_id=frm, to_id=to, heading=heading, distance=distance))

    if auto_reverse:
        seen = {(e.from_id, e.to_id) for e in edges}
        for e in list(edges):
            if (e.to_id, e.from_id) not in seen:
                edges.append(Edge(from_id=e.to_id, to_id=e.from_id,
                                  heading=(e.heading + math.pi) % (2 * math.pi),
                                  distance=e.distance))
                seen.add((e.to_id, e.from_id))

    return LandmarkGraph(nodes=nodes, edges=edges)


def load_landmark_graph(path: str | Path) -> LandmarkGraph:
    """Load a landmark graph JSON file."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"invalid JSON: {exc}") from exc
    return graph_from_dict(data)


def graph_to_dict(graph: LandmarkGraph) -> dict:
    """Serialize a graph back to its JSON object form (reverse edges kept)."""
    def rule_name(r: Rule) -> str:
        if r.kind is RuleKind.GYRO and r.turn_sign is not None:
            return "gyro+" if r.turn_sign > 0 else "gyro-"
        return r.kind.value

    return {
        "nodes": [
            {"id": lm.id, "x": lm.x, "y": lm.y, "floor": lm.floor,
             "rules": [rule_name(r) for r in lm.rules]}
            for lm in graph.nodes.values()
        ],
        "edges": [
            {"from": e.from_id, "to": e.to_id,
             "heading_deg": math.degrees(e.heading), "distance_m": e.distance}
            for e in graph.edges
        ],
        "auto_reverse": False,
    }


def replicate_floor(
    graph: LandmarkGraph, new_floor: int, suffix: str
) -> LandmarkGraph:
    """Copy of a graph with every landmark moved to new_floor and ids
    suffixed; used to stamp one surveyed floor onto identical floors."""
    nodes = {}
    for lm in graph.nodes.values():
        nid = lm.id + suffix
        nodes[nid] = Landmark(id=nid, x=lm.x, y=lm.y, floor=new_floor, rules=lm.rules)
    edges = [Edge(from_id=e.from_id + suffix, to_id=e.to_id + suffix,
                  heading=e.heading, distance=e.distance)
             for e in graph.edges]
    return LandmarkGraph(nodes=nodes, edges=edges)
