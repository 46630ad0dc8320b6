"""Quality-gated WiFi radio map construction.

Scans are placed by linear interpolation between the trajectory poses that
bracket them inside a single path segment, and kept only when the segment's
walking-quality belief clears a threshold. Belief rewards step periods that
sit inside the plausible human cadence band and walks with steady cadence.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Iterator, Sequence

import numpy as np

from .sensors import WifiScan

if TYPE_CHECKING:  # no runtime dependency on the trajectory module
    from .pdr import PathSegment, Pose, Trajectory


class MapFormatError(ValueError):
    """Radio map file violates the expected schema."""


@dataclass(frozen=True)
class QualityConfig:
    """Segment belief parameters."""

    period_min: float = 0.4        # seconds, plausible step period band
    period_max: float = 1.0
    sigma_floor: float = 0.005     # seconds, caps the steadiness term
    belief_threshold: float = 15.0  # minimum belief for map inclusion


@dataclass(frozen=True)
class RadioMapEntry:
    x: float
    y: float
    floor: int
    belief: float
    fp: dict[str, int]  # MAC -> RSS dBm


@dataclass
class RadioMap:
    entries: list[RadioMapEntry] = field(default_factory=list)
    config: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[RadioMapEntry]:
        return iter(self.entries)


def chi(period: float, cfg: QualityConfig = QualityConfig()) -> float:
    """1 when the step period is humanly plausible, else 0."""
    return 1.0 if cfg.period_min <= period <= cfg.period_max else 0.0


def segment_belief(segment: PathSegment, cfg: QualityConfig = QualityConfig()) -> float | None:
    """Walking-quality belief of a path segment, or None when undefined.

    The duration-weighted share of plausible step periods is divided by the
    population spread of the plausible periods (floored at cfg.sigma_floor
    so perfectly steady cadence stays finite). Fewer than two measured
    periods leave the spread meaningless, so the belief is undefined.
    """
    periods = np.asarray(segment.periodicities, dtype=float)
    if periods.size < 2:
        return None
    valid = periods[(periods >= cfg.period_min) & (periods <= cfg.period_max)]
    if valid.size == 0:
        return 0.0
    share = float(valid.sum() / periods.sum())
    spread = float(valid.std())
    return share / max(spread, cfg.sigma_floor)


def interpolate_rp(p1: Pose, p2: Pose, t: float) -> tuple[float, float, float]:
    """Position and continuous floor at time t between two poses.

    Endpoint times return the endpoint pose exactly; a degenerate pair
    (equal times) returns the first pose.
    """
    if t <= p1.t or p2.t <= p1.t:
        return p1.x, p1.y, p1.floor
    if t >= p2.t:
        return p2.x, p2.y, p2.floor
    frac = (t - p1.t) / (p2.t - p1.t)
    return (p1.x + (p2.x - p1.x) * frac,
            p1.y + (p2.y - p1.y) * frac,
            p1.floor + (p2.floor - p1.floor) * frac)


def _round_half_up(f: float) -> int:
    return int(math.floor(f + 0.5))


def build_radio_map(
    trajectory: Trajectory,
    scans: Sequence[WifiScan],
    cfg: QualityConfig = QualityConfig(),
    belief_filter: Callable[[float | None], bool] | None = None,
) -> RadioMap:
    """Reference points from scans bracketed inside believable segments.

    A scan contributes once per position: the shared snap pose between
    consecutive segments would otherwise duplicate scans landing exactly on
    a segment boundary. Scans outside every kept segment's time span are
    dropped, as are scans whose bracketing poses straddle a snap.
    """
    if belief_filter is None:
        belief_filter = lambda b: b is not None and b > cfg.belief_threshold

    ordered = sorted(scans, key=lambda s: s.t)
    entries: list[RadioMapEntry] = []
    seen: set[tuple[float, float, int, float]] = set()
    for seg in trajectory.segments:
        belief = segment_belief(seg, cfg)
        if not belief_filter(belief):
            continue
        pts = seg.points
        if len(pts) < 2:
            continue
        times = [p.t for p in pts]
        for scan in ordered:
            if scan.t < times[0] or scan.t > times[-1]:
                continue
            j = min(max(bisect_right(times, scan.t) - 1, 0), len(pts) - 2)
            x, y, f = interpolate_rp(pts[j], pts[j + 1], scan.t)
            floor = _round_half_up(f)
            key = (x, y, floor, scan.t)
            if key in seen:
                continue
            seen.add(key)
            entries.append(RadioMapEntry(
                x=x, y=y, floor=floor,
                belief=0.0 if belief is None else float(belief),
                fp=dict(scan.readings)))
    config = {"belief_threshold": cfg.belief_threshold,
              "period_min": cfg.period_min,
              "period_max": cfg.period_max,
              "sigma_floor": cfg.sigma_floor}
    return RadioMap(entries=entries, config=config)


def merge_radio_maps(maps: Iterable[RadioMap]) -> RadioMap:
    """Concatenate maps built with identical configs, dropping exact dupes."""
    maps = list(maps)
    if not maps:
        raise ValueError("nothing to merge")
    config = maps[0].config
    for m in maps[1:]:
        if m.config != config:
            raise ValueError("cannot merge radio maps built with different configs")
    entries: list[RadioMapEntry] = []
    seen: set[tuple] = set()
    for m in maps:
        for e in m.entries:
            key = (e.x, e.y, e.floor, e.belief, tuple(sorted(e.fp.items())))
            if key in seen:
                continue
            seen.add(key)
            entries.append(e)
    return RadioMap(entries=entries, config=dict(config))


_TOP_KEYS = {"version", "config", "entries"}
_ENTRY_KEYS = {"x", "y", "floor", "belief", "fp"}
_CONFIG_KEYS = {"belief_threshold", "period_min", "period_max", "sigma_floor"}


def _real(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MapFormatError(f"{what} must be a number, got {value!r}")
    return float(value)


def save_radio_map(radio_map: RadioMap, path) -> None:
    """Write a map as JSON to a path or open file."""
    obj = {
        "version": 1,
        "config": radio_map.config,
        "entries": [
            {"x": e.x, "y": e.y, "floor": e.floor, "belief": e.belief, "fp": e.fp}
            for e in radio_map.entries
        ],
    }
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        Path(path).write_text(text)


def load_radio_map(path: str | Path) -> RadioMap:
    """Parse and validate a radio map file; unknown fields are errors."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MapFormatError("top level must be an object")
    if set(data) != _TOP_KEYS:
        raise MapFormatError(
            f"top-level fields must be {sorted(_TOP_KEYS)}, got {sorted(data)}")
    if isinstance(data["version"], bool) or data["version"] != 1:
        raise MapFormatError(f"unsupported version {data['version']!r}")

    config = data["config"]
    if not isinstance(config, dict):
        raise MapFormatError("config must be an object")
    unknown = set(config) - _CONFIG_KEYS
    if unknown:
        raise MapFormatError(f"unknown config fields {sorted(unknown)}")
    config = {k: _real(v, f"config.{k}") for k, v in config.items()}

    if not isinstance(data["entries"], list):
        raise MapFormatError("entries must be an array")
    entries: list[RadioMapEntry] = []
    for i, rec in enumerate(data["entries"]):
        if not isinstance(rec, dict):
            raise MapFormatError(f"entry {i} must be an object")
        if set(rec) != _ENTRY_KEYS:
            raise MapFormatError(
                f"entry {i} fields must be {sorted(_ENTRY_KEYS)}, got {sorted(rec)}")
        if isinstance(rec["floor"], bool) or not isinstance(rec["floor"], int):
            raise MapFormatError(f"entry {i} floor must be an integer")
        fp = rec["fp"]
        if not isinstance(fp, dict):
            raise MapFormatError(f"entry {i} fp must be an object")
        readings: dict[str, int] = {}
        for mac, rss in fp.items():
            if not mac:
                raise MapFormatError(f"entry {i} has an empty MAC")
            if isinstance(rss, bool) or not isinstance(rss, int) or rss > 0:
                raise MapFormatError(
                    f"entry {i} RSS for {mac} must be a non-positive integer")
            readings[mac] = rss
        entries.append(RadioMapEntry(
            x=_real(rec["x"], f"entry {i} x"),
            y=_real(rec["y"], f"entry {i} y"),
            floor=rec["floor"],
            belief=_real(rec["belief"], f"entry {i} belief"),
            fp=readings))
    return RadioMap(entries=entries, config=config)
