"""Pedestrian dead reckoning with landmark-graph calibration.

Each detected step advances the pose by the current step length along a
selected heading; the barometer drives a continuous floor estimate. When a
landmark signature fires and matches a graph node with enough confidence,
the pose snaps to that node and the walk is cut into a new path segment.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from .landmarks import (
    Landmark,
    LandmarkConfig,
    LandmarkEvent,
    LandmarkGraph,
    RuleKind,
    bearing,
    circular_diff,
    detect_acc_landmarks,
    detect_baro_landmarks,
    detect_gyro_landmarks,
    sgn,
)
from .radiomap import QualityConfig, segment_belief
from .sensors import (
    MotionState,
    SensorConfig,
    SensorTrace,
    TraceError,
    classify_motion,
    detect_steps,
)


class HeadingSource(enum.Enum):
    COMPASS = "pdr-compass"
    GYRO = "pdr-gyro"
    LANDMARK = "landmark"


@dataclass(frozen=True)
class PdrConfig:
    """Dead reckoning and landmark matching parameters."""

    initial_step_length: float = 0.63     # meters
    pressure_per_floor: float = 0.45      # hPa between adjacent floors
    baro_smooth_s: float = 2.0            # moving-average span for floor tracking
    heading_threshold: float = math.radians(30.0)  # heading agreement gate
    confidence_threshold: float = 0.25    # minimum landmark match score
    distance_floor: float = 0.1           # meters, caps the distance term
    min_steps_for_update: int = 3         # step-length calibration gate
    heading_source: HeadingSource = HeadingSource.LANDMARK


@dataclass(frozen=True)
class Pose:
    t: float
    x: float
    y: float
    floor: float  # continuous; round for discrete floor decisions


@dataclass
class PathSegment:
    """Poses between two consecutive landmark snaps.

    points[0] is the opening anchor (initial pose or snap); the closing
    snap opens the next segment. periodicities holds the step periods of
    the steps inside the segment.
    """

    points: list[Pose]
    periodicities: list[float]
    start_landmark: str | None = None
    end_landmark: str | None = None


@dataclass
class Trajectory:
    poses: list[Pose]
    segments: list[PathSegment]
    visits: list[tuple[float, str]] = field(default_factory=list)
    anomalies: list[str] = field(default_factory=list)


@dataclass
class MatchState:
    """Where the walk is anchored and what happened since."""

    anchor_x: float
    anchor_y: float
    floor: int
    last_landmark: str | None = None
    traveled: float = 0.0       # sum of applied step lengths since anchor
    heading_x: float = 0.0      # accumulated unit step-heading vector
    heading_y: float = 0.0
    fallback_heading: float = 0.0

    def mean_heading(self) -> float:
        if self.heading_x == 0.0 and self.heading_y == 0.0:
            return self.fallback_heading
        return math.atan2(self.heading_y, self.heading_x) % (2 * math.pi)


def pdr_step(prev: Pose, step_length: float, heading: float, t: float | None = None) -> Pose:
    """Advance one step along heading (radians CCW from +x)."""
    return Pose(
        t=prev.t if t is None else t,
        x=prev.x + step_length * math.cos(heading),
        y=prev.y + step_length * math.sin(heading),
        floor=prev.floor,
    )


def floor_update(prev_floor: float, p_t: float, p_prev: float, pressure_per_floor: float) -> float:
    """Continuous floor from the pressure change since the last update."""
    return prev_floor - (p_t - p_prev) / pressure_per_floor


def update_step_length(
    v1: Landmark, v2: Landmark, n_steps: int, previous: float
) -> tuple[float, bool]:
    """Step length from a completed landmark-to-landmark segment.

    Returns (length, anomaly). Zero steps between two matched landmarks
    means the step counter missed; the previous length is kept and the
    anomaly flagged.
    """
    if n_steps < 1:
        return previous, True
    return math.dist((v1.x, v1.y), (v2.x, v2.y)) / n_steps, False


def compass_heading(mx: float, my: float) -> float:
    """Map-frame azimuth from the calibrated magnetometer vector."""
    return math.atan2(my, mx) % (2 * math.pi)


def landmark_confidence(
    candidate: Landmark,
    detected_kind: RuleKind,
    est_heading: float,
    ref_heading: float,
    traveled: float,
    ref_distance: float,
    cfg: PdrConfig = PdrConfig(),
    detected_sign: int = 0,
) -> float:
    """Match confidence: rule indicator * heading gate * inverse distance gap.

    The distance gap is floored at cfg.distance_floor so a perfect distance
    agreement yields a large finite score instead of a division blow-up.
    """
    delta = 0
    for rule in candidate.rules:
        if rule.kind is not detected_kind:
            continue
        if rule.turn_sign is not None and rule.turn_sign != detected_sign:
            continue
        delta = 1
        break
    if not delta:
        return 0.0
    if circular_diff(est_heading, ref_heading) >= cfg.heading_threshold:
        return 0.0
    return 1.0 / max(abs(ref_distance - traveled), cfg.distance_floor)


def _reachable(graph: LandmarkGraph, src: str) -> dict[str, tuple[float, float]]:
    """Shortest directed path distance to every landmark reachable from src,
    with the heading of the path's final (arriving) edge."""
    dist: dict[str, tuple[float, float]] = {src: (0.0, 0.0)}
    pq = [(0.0, src)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist.get(u, (math.inf,))[0]:
            continue
        for e in graph.out_edges(u):
            nd = d + e.distance
            if nd < dist.get(e.to_id, (math.inf,))[0] - 1e-12:
                dist[e.to_id] = (nd, e.heading)
                heapq.heappush(pq, (nd, e.to_id))
    dist.pop(src, None)
    return dist


def match_landmark(
    event: LandmarkEvent,
    graph: LandmarkGraph,
    state: MatchState,
    cfg: PdrConfig = PdrConfig(),
) -> tuple[Landmark, float] | None:
    """Best-scoring graph landmark for a detected event, or None.

    Candidates are the landmarks reachable from the last matched landmark:
    path distance as the reference distance, the path's arriving edge as
    the reference heading, compared against the latest walked heading. With
    no prior match, every landmark on the current floor is scored against
    the initial anchor by straight-line bearing. Ties break toward the
    smaller distance gap, then the lexicographically smaller id.
    """
    sign = sgn(event.auxiliary) if event.kind is RuleKind.GYRO else 0

    if state.last_landmark is not None:
        est_heading = state.fallback_heading
        cand = [(graph.nodes[lid], d, h)
                for lid, (d, h) in _reachable(graph, state.last_landmark).items()]
    else:
        est_heading = state.mean_heading()
        cand = [(lm, math.dist((state.anchor_x, state.anchor_y), (lm.x, lm.y)),
                 bearing(state.anchor_x, state.anchor_y, lm.x, lm.y))
                for lm in graph.on_floor(state.floor)]

    best: tuple[float, float, str, Landmark] | None = None
    for lm, d_k, theta_k in cand:
        if lm.x == state.anchor_x and lm.y == state.anchor_y and d_k == 0.0:
            continue
        conf = landmark_confidence(lm, event.kind, est_heading, theta_k,
                                   state.traveled, d_k, cfg, sign)
        if conf <= cfg.confidence_threshold:
            continue
        key = (-conf, abs(d_k - state.traveled), lm.id)
        if best is None or key < (-best[0], best[1], best[2]):
            best = (conf, abs(d_k - state.traveled), lm.id, lm)
    if best is None:
        return None
    return best[3], best[0]


def round_floor(f: float, prev: int) -> int:
    """Round a continuous floor, breaking exact halves toward prev."""
    lo = math.floor(f)
    if f - lo == 0.5:
        hi = lo + 1
        return lo if abs(lo - prev) <= abs(hi - prev) else hi
    return math.floor(f + 0.5)


class _Compass:
    """Azimuth lookup by linear interpolation of the mag vector."""

    def __init__(self, trace: SensorTrace):
        if len(trace.mag) == 0:
            raise TraceError("trace has no magnetometer channel")
        self.t = trace.mag.t
        self.mx = trace.mag.v[:, 0]
        self.my = trace.mag.v[:, 1]

    def at(self, t: float) -> float:
        mx = float(np.interp(t, self.t, self.mx))
        my = float(np.interp(t, self.t, self.my))
        return compass_heading(mx, my)


class _TurnIntegral:
    """Cumulative signed vertical rotation from the gyroscope."""

    def __init__(self, trace: SensorTrace):
        t = trace.gyro.t
        if len(t) < 2:
            self.t = np.array([0.0, 1.0])
            self.g = np.zeros(2)
            return
        wz = trace.gyro.v[:, 2]
        g = np.empty(len(t))
        g[0] = 0.0
        np.cumsum(wz[:-1] * np.diff(t), out=g[1:])
        self.t = t
        self.g = g

    def between(self, t0: float, t1: float) -> float:
        return float(np.interp(t1, self.t, self.g) - np.interp(t0, self.t, self.g))


def _select_heading(
    mode: HeadingSource,
    ts: float,
    compass: _Compass,
    turns: _TurnIntegral,
    theta0: float,
    t_start: float,
    state: MatchState,
    t_ref: float,
    graph: LandmarkGraph | None,
    cfg: PdrConfig,
) -> float:
    if mode is HeadingSource.COMPASS:
        return compass.at(ts)
    if mode is HeadingSource.GYRO:
        return (theta0 + turns.between(t_start, ts)) % (2 * math.pi)
    comp = compass.at(ts)
    if graph is not None and state.last_landmark is not None:
        if abs(turns.between(t_ref, ts)) < cfg.heading_threshold:
            best: tuple[float, float] | None = None
            for e in graph.out_edges(state.last_landmark):
                dh = circular_diff(e.heading, comp)
                if best is None or dh < best[0]:
                    best = (dh, e.heading)
            if best is not None and best[0] < cfg.heading_threshold:
                return best[1]
    return comp


def _still_run_bounds(
    motion: list[tuple[float, MotionState]], cfg: SensorConfig
) -> list[float]:
    """Start and end times of every maximal run of Still windows.

    A trailing run has no following Walking window; it ends one window
    length past its last label.
    """
    bounds: list[float] = []
    run_start: float | None = None
    window_s = 0.0
    for i, (wt, label) in enumerate(motion):
        if i:
            window_s = wt - motion[i - 1][0]
        if label is MotionState.STILL:
            if run_start is None:
                run_start = wt
        elif run_start is not None:
            bounds += [run_start, wt]
            run_start = None
    if run_start is not None:
        bounds += [run_start, motion[-1][0] + window_s]
    return bounds


def run_pdr(
    trace: SensorTrace,
    graph: LandmarkGraph | None,
    initial: tuple[float, float, float],
    cfg: PdrConfig = PdrConfig(),
    sensor_cfg: SensorConfig = SensorConfig(),
    landmark_cfg: LandmarkConfig = LandmarkConfig(),
    quality_cfg: QualityConfig = QualityConfig(),
) -> Trajectory:
    """Fold a sensor trace into a calibrated trajectory.

    initial is the starting (x, y, floor). In landmark mode a graph is
    required; compass and gyro modes ignore it and never calibrate.
    """
    if len(trace.accel) == 0:
        raise TraceError("trace has no accelerometer channel")
    mode = cfg.heading_source
    if mode is HeadingSource.LANDMARK and graph is None:
        raise ValueError("landmark heading mode requires a landmark graph")

    steps = detect_steps(trace, sensor_cfg)
    motion = classify_motion(trace, sensor_cfg)
    compass = _Compass(trace)
    turns = _TurnIntegral(trace)
    t_start = float(trace.accel.t[0])
    theta0 = compass.at(t_start)

    events: list[LandmarkEvent] = []
    if mode is HeadingSource.LANDMARK:
        acc_evs = detect_acc_landmarks(motion, landmark_cfg)
        gyro_evs = detect_gyro_landmarks(trace, landmark_cfg, sensor_cfg, motion)
        # a lull with a rotation inside it is a corner being rounded slowly,
        # not a door pause; without this the turn can masquerade as a stop
        # and match a pause landmark elsewhere on the graph
        acc_evs = [a for a in acc_evs
                   if not any(g.t < a.t_end and g.t_end > a.t for g in gyro_evs)]
        events.extend(acc_evs)
        events.extend(gyro_evs)
        events.extend(detect_baro_landmarks(trace, landmark_cfg))

    # holds before steps before events at equal timestamps: a hold never
    # moves the pose, and the snap must win the pose
    items: list[tuple[float, int, object]] = [(s.t, 0, s) for s in steps]
    items += [(e.t, 1, e) for e in events]
    for wt in _still_run_bounds(motion, sensor_cfg):
        items.append((wt, -1, None))
    items.sort(key=lambda it: (it[0], it[1]))

    has_baro = len(trace.baro) > 1
    if has_baro:
        # raw samples put their full noise into every anchor of the
        # incremental floor estimate; a short moving average keeps the
        # rounded floor from drifting across a half-floor boundary
        bt, bv = trace.baro.t, trace.baro.v
        dt = float(np.median(np.diff(bt)))
        win = max(1, int(round(cfg.baro_smooth_s / dt))) if dt > 0 else 1
        if win > 1:
            bv = uniform_filter1d(bv, size=win, mode="nearest")
        p_of = lambda t: float(np.interp(t, bt, bv))
    else:
        p_of = lambda t: 0.0

    x0, y0, f0 = initial
    pose = Pose(t=t_start, x=float(x0), y=float(y0), floor=float(f0))
    step_length = cfg.initial_step_length
    state = MatchState(anchor_x=pose.x, anchor_y=pose.y,
                       floor=round_floor(pose.floor, int(round(f0))),
                       fallback_heading=theta0)
    p_prev = p_of(t_start)
    t_ref = t_start
    n_steps_since = 0

    poses = [pose]
    segments: list[PathSegment] = []
    visits: list[tuple[float, str]] = []
    anomalies: list[str] = []
    cur_points = [pose]
    cur_periods: list[float] = []
    open_landmark: str | None = None
    pending_hold: Pose | None = None

    for ts, prio, item in items:
        if pending_hold is not None:
            # a step before the stamp means the dwell ended early: drop it
            if ts >= pending_hold.t > pose.t:
                pose = pending_hold
                poses.append(pose)
                cur_points.append(pose)
            pending_hold = None
        if prio == -1:
            # standstill boundary: pin the pose so interpolation across the
            # dwell cannot invent motion that never happened
            if ts > pose.t:
                pose = Pose(t=ts, x=pose.x, y=pose.y, floor=pose.floor)
                poses.append(pose)
                cur_points.append(pose)
            continue
        if prio == 0:
            heading = _select_heading(mode, ts, compass, turns, theta0,
                                      t_start, state, t_ref, graph, cfg)
            new_floor = pose.floor
            if has_baro:
                p_now = p_of(ts)
                new_floor = floor_update(pose.floor, p_now, p_prev,
                                         cfg.pressure_per_floor)
                p_prev = p_now
            stepped = pdr_step(pose, step_length, heading, t=ts)
            pose = Pose(t=ts, x=stepped.x, y=stepped.y, floor=new_floor)
            poses.append(pose)
            cur_points.append(pose)
            if item.periodicity is not None:
                cur_periods.append(item.periodicity)
            state.traveled += step_length
            state.heading_x += math.cos(heading)
            state.heading_y += math.sin(heading)
            state.floor = round_floor(pose.floor, state.floor)
            state.fallback_heading = heading
            n_steps_since += 1
            continue

        ev = item
        res = match_landmark(ev, graph, state, cfg)
        if res is None:
            continue
        lm, _conf = res

        seg = PathSegment(points=cur_points, periodicities=cur_periods,
                          start_landmark=open_landmark, end_landmark=lm.id)
        segments.append(seg)
        visits.append((ev.t, lm.id))

        if open_landmark is not None:
            v1 = graph.nodes[open_landmark]
            if v1.floor == lm.floor:
                new_l, anomaly = update_step_length(v1, lm, n_steps_since, step_length)
                if anomaly:
                    anomalies.append(
                        f"no steps between {v1.id} and {lm.id} at t={ev.t:.2f}")
                elif n_steps_since >= cfg.min_steps_for_update:
                    belief = segment_belief(seg, quality_cfg)
                    # low-quality walking must not corrupt the step length
                    if belief is not None and belief > quality_cfg.belief_threshold:
                        step_length = new_l

        pose = Pose(t=ev.t, x=lm.x, y=lm.y, floor=float(lm.floor))
        poses.append(pose)
        if has_baro:
            p_prev = p_of(ev.t)
        state = MatchState(anchor_x=lm.x, anchor_y=lm.y, floor=lm.floor,
                           last_landmark=lm.id,
                           fallback_heading=state.fallback_heading)
        t_ref = ev.t_end if ev.t_end > ev.t else ev.t
        n_steps_since = 0
        cur_points = [pose]
        cur_periods = []
        open_landmark = lm.id
        if ev.t_end > ev.t:
            # still at the landmark until the event's motion pattern ends
            pending_hold = Pose(t=ev.t_end, x=lm.x, y=lm.y,
                                floor=float(lm.floor))

    if pending_hold is not None and pending_hold.t > pose.t:
        poses.append(pending_hold)
        cur_points.append(pending_hold)
    segments.append(PathSegment(points=cur_points, periodicities=cur_periods,
                                start_landmark=open_landmark, end_landmark=None))
    return Trajectory(poses=poses, segments=segments, visits=visits,
                      anomalies=anomalies)


def dump_trajectory(traj: Trajectory, path) -> None:
    """Write a trajectory as JSON lines (path or open file) with per-pose
    segment indices; a snap pose belongs to the segment it opens, so every
    pose is written exactly once."""
    lines = []
    for k, seg in enumerate(traj.segments):
        for pose in seg.points:
            lines.append(json.dumps({"t": pose.t, "x": pose.x, "y": pose.y,
                                     "floor": pose.floor, "segment": k}))
    text = "".join(line + "\n" for line in lines)
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def load_trajectory(path: str | Path) -> Trajectory:
    """Read a trajectory export; segment periodicities are not part of the
    file format and must be reattached from the trace if needed."""
    segs: dict[int, list[Pose]] = {}
    poses: list[Pose] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pose = Pose(t=float(rec["t"]), x=float(rec["x"]), y=float(rec["y"]),
                        floor=float(rec["floor"]))
            poses.append(pose)
            segs.setdefault(int(rec["segment"]), []).append(pose)
    segments = [PathSegment(points=segs[k], periodicities=[])
                for k in sorted(segs)]
    return Trajectory(poses=poses, segments=segments)


def attach_periodicities(traj: Trajectory, steps) -> None:
    """Fill segment periodicities from detected steps by time span."""
    for seg in traj.segments:
        if not seg.points:
            continue
        t_open = seg.points[0].t
        t_close = seg.points[-1].t
        seg.periodicities = [
            s.periodicity for s in steps
            if t_open < s.t <= t_close and s.periodicity is not None
        ]


def trajectory_errors(traj: Trajectory, trace: SensorTrace) -> np.ndarray:
    """Planar error of each pose against time-interpolated embedded truth."""
    if trace.truth is None or len(trace.truth) == 0:
        raise ValueError("trace carries no ground truth")
    tt = trace.truth.t
    tx = trace.truth.xy[:, 0]
    ty = trace.truth.xy[:, 1]
    pt = np.array([p.t for p in traj.poses])
    px = np.array([p.x for p in traj.poses])
    py = np.array([p.y for p in traj.poses])
    ex = px - np.interp(pt, tt, tx)
    ey = py - np.interp(pt, tt, ty)
    return np.hypot(ex, ey)
