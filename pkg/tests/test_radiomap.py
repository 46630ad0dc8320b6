import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stridemap.pdr import PathSegment, Pose, Trajectory
from stridemap.radiomap import (MapFormatError, QualityConfig, RadioMap,
                                RadioMapEntry, build_radio_map, chi,
                                interpolate_rp, load_radio_map,
                                merge_radio_maps, save_radio_map,
                                segment_belief)
from stridemap.sensors import WifiScan


def seg(periods, t0=0.0, t1=10.0, x0=0.0, x1=12.6, floor=1.0, floor1=None):
    if floor1 is None:
        floor1 = floor
    pts = [Pose(t0, x0, 0.0, floor), Pose(t1, x1, 0.0, floor1)]
    return PathSegment(points=pts, periodicities=list(periods))


# ---------------------------------------------------------------------------
# period plausibility


def test_chi_inside_band():
    assert chi(0.5) == 1.0


def test_chi_band_edges_inclusive():
    assert chi(0.4) == 1.0
    assert chi(1.0) == 1.0


def test_chi_outside_band():
    assert chi(1.5) == 0.0
    assert chi(0.39) == 0.0


def test_chi_custom_band():
    cfg = QualityConfig(period_min=0.2, period_max=0.3)
    assert chi(0.25, cfg) == 1.0
    assert chi(0.5, cfg) == 0.0


# ---------------------------------------------------------------------------
# segment belief


def test_belief_steady_walk():
    # all plausible, population spread of {.5,.6,.5,.6} is 0.05
    assert segment_belief(seg([0.5, 0.6, 0.5, 0.6])) == pytest.approx(20.0)


def test_belief_outlier_discounts_share():
    # valid share 1.6/3.1, spread of {.5,.6,.5} is 1/sqrt(450)
    b = segment_belief(seg([0.5, 1.5, 0.6, 0.5]))
    assert b == pytest.approx(16 / 31 * math.sqrt(450))
    assert b == pytest.approx(10.948750, abs=1e-6)


def test_belief_perfect_cadence_hits_spread_floor():
    assert segment_belief(seg([0.5, 0.5, 0.5, 0.5])) == pytest.approx(200.0)


def test_belief_undefined_below_two_periods():
    assert segment_belief(seg([0.7])) is None
    assert segment_belief(seg([])) is None


def test_belief_zero_when_nothing_plausible():
    assert segment_belief(seg([1.5, 2.0])) == 0.0


def test_belief_band_edges_count():
    assert segment_belief(seg([0.4, 1.0])) == pytest.approx(1 / 0.3)


@given(st.lists(st.floats(0.05, 3.0), min_size=2, max_size=30))
def test_belief_bounded(periods):
    b = segment_belief(seg(periods))
    assert 0.0 <= b <= 1.0 / QualityConfig().sigma_floor


# ---------------------------------------------------------------------------
# scan placement


def test_interpolate_midpoint():
    p1, p2 = Pose(0, 0, 0, 1), Pose(2, 2, 0, 1)
    assert interpolate_rp(p1, p2, 1.0) == pytest.approx((1.0, 0.0, 1.0))


def test_interpolate_uneven_fraction():
    p1, p2 = Pose(10, 0, 0, 1), Pose(14, 4, 8, 1)
    assert interpolate_rp(p1, p2, 11.0) == pytest.approx((1.0, 2.0, 1.0))


def test_interpolate_endpoints_exact():
    p1, p2 = Pose(0, 0.1, 0.2, 1), Pose(2, 0.3, 0.7, 2)
    assert interpolate_rp(p1, p2, 0.0) == (p1.x, p1.y, p1.floor)
    assert interpolate_rp(p1, p2, 2.0) == (p2.x, p2.y, p2.floor)


def test_interpolate_outside_clamps():
    p1, p2 = Pose(0, 0, 0, 1), Pose(2, 2, 0, 1)
    assert interpolate_rp(p1, p2, -1.0) == (0.0, 0.0, 1.0)
    assert interpolate_rp(p1, p2, 3.0) == (2.0, 0.0, 1.0)


def test_interpolate_degenerate_pair():
    p1, p2 = Pose(5, 1, 2, 1), Pose(5, 9, 9, 2)
    assert interpolate_rp(p1, p2, 5.0) == (1.0, 2.0, 1.0)


def test_interpolate_fractional_floor():
    p1, p2 = Pose(0, 0, 0, 1), Pose(2, 0, 0, 2)
    assert interpolate_rp(p1, p2, 1.0)[2] == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# map construction


GOOD = [0.5, 0.6, 0.5, 0.6]       # belief 20
POOR = [0.5, 1.5, 0.6, 0.5]       # belief ~10.9


def scans_at(*times):
    return [WifiScan(t=t, readings={"aa": -60, "bb": -70}) for t in times]


def test_only_believable_segments_contribute():
    traj = Trajectory(poses=[], segments=[
        seg(GOOD, t0=0, t1=10, x0=0, x1=12.6),
        seg(POOR, t0=10, t1=20, x0=12.6, x1=0),
    ])
    rm = build_radio_map(traj, scans_at(2.0, 5.0, 8.0, 12.0, 15.0, 18.0))
    assert len(rm) == 3
    assert all(e.belief == pytest.approx(20.0) for e in rm)
    assert [e.x for e in rm] == pytest.approx([2.52, 6.3, 10.08])


def test_everything_filtered_gives_empty_map():
    traj = Trajectory(poses=[], segments=[seg(POOR)])
    rm = build_radio_map(traj, scans_at(5.0))
    assert len(rm) == 0
    assert rm.config["belief_threshold"] == pytest.approx(15.0)


def test_custom_filter_overrides_threshold():
    traj = Trajectory(poses=[], segments=[
        seg(POOR, t0=0, t1=10, x0=0, x1=12.6),
        seg([0.7], t0=10, t1=20, x0=12.6, x1=0),
    ])
    rm = build_radio_map(traj, scans_at(5.0, 15.0),
                         belief_filter=lambda b: True)
    assert len(rm) == 2
    assert rm.entries[0].belief == pytest.approx(16 / 31 * math.sqrt(450))
    assert rm.entries[1].belief == 0.0  # undefined belief recorded as zero


def test_scan_on_pose_timestamp_lands_exactly():
    pts = [Pose(0, 0, 0, 1), Pose(7, 4.41, 0, 1), Pose(10, 6.3, 0, 1)]
    traj = Trajectory(poses=pts, segments=[
        PathSegment(points=pts, periodicities=GOOD)])
    rm = build_radio_map(traj, scans_at(7.0))
    assert (rm.entries[0].x, rm.entries[0].y) == (4.41, 0.0)


def test_boundary_scan_enters_once():
    # the snap pose closing one segment opens the next; a scan exactly on
    # the seam brackets into both but must land in the map once
    traj = Trajectory(poses=[], segments=[
        seg(GOOD, t0=0, t1=10, x0=0, x1=12.6),
        seg(GOOD, t0=10, t1=20, x0=12.6, x1=25.2),
    ])
    rm = build_radio_map(traj, scans_at(10.0))
    assert len(rm) == 1
    assert rm.entries[0].x == pytest.approx(12.6)


def test_scan_outside_every_segment_dropped():
    traj = Trajectory(poses=[], segments=[seg(GOOD, t0=0, t1=10)])
    rm = build_radio_map(traj, scans_at(11.0))
    assert len(rm) == 0


def test_fractional_floor_rounds_half_up():
    traj = Trajectory(poses=[], segments=[
        seg(GOOD, t0=0, t1=10, floor=1.0, floor1=2.0)])
    rm = build_radio_map(traj, scans_at(5.0))
    assert rm.entries[0].floor == 2
    assert isinstance(rm.entries[0].floor, int)


def test_fingerprint_copied_from_scan():
    traj = Trajectory(poses=[], segments=[seg(GOOD)])
    scan = WifiScan(t=5.0, readings={"aa": -60})
    rm = build_radio_map(traj, [scan])
    assert rm.entries[0].fp == {"aa": -60}
    assert rm.entries[0].fp is not scan.readings


def test_unsorted_scans_accepted():
    traj = Trajectory(poses=[], segments=[seg(GOOD)])
    rm = build_radio_map(traj, scans_at(8.0, 2.0, 5.0))
    assert [e.x for e in rm] == pytest.approx([2.52, 6.3, 10.08])


# ---------------------------------------------------------------------------
# merging


def entry(x, fp=None):
    return RadioMapEntry(x=x, y=0.0, floor=1, belief=20.0,
                         fp=fp or {"aa": -60})


def test_merge_concatenates():
    cfg = {"belief_threshold": 15.0}
    merged = merge_radio_maps([
        RadioMap(entries=[entry(1.0)], config=cfg),
        RadioMap(entries=[entry(2.0)], config=cfg),
    ])
    assert [e.x for e in merged] == [1.0, 2.0]
    assert merged.config == cfg


def test_merge_drops_exact_duplicates():
    cfg = {"belief_threshold": 15.0}
    merged = merge_radio_maps([
        RadioMap(entries=[entry(1.0)], config=cfg),
        RadioMap(entries=[entry(1.0), entry(1.0, fp={"aa": -61})], config=cfg),
    ])
    assert len(merged) == 2


def test_merge_rejects_config_mismatch():
    with pytest.raises(ValueError, match="config"):
        merge_radio_maps([
            RadioMap(config={"belief_threshold": 15.0}),
            RadioMap(config={"belief_threshold": 18.0}),
        ])


def test_merge_rejects_empty_input():
    with pytest.raises(ValueError):
        merge_radio_maps([])


# ---------------------------------------------------------------------------
# persistence


def build_sample_map():
    traj = Trajectory(poses=[], segments=[seg(GOOD)])
    scans = [WifiScan(t=float(t), readings={"aa": -60 - t, "bb": -70})
             for t in range(1, 10)]
    return build_radio_map(traj, scans)


def test_save_load_round_trip(tmp_path):
    rm = build_sample_map()
    path = tmp_path / "map.json"
    save_radio_map(rm, path)
    back = load_radio_map(path)
    assert back.config == rm.config
    assert back.entries == rm.entries


def test_save_load_empty_map(tmp_path):
    rm = build_radio_map(Trajectory(poses=[], segments=[]), [])
    path = tmp_path / "map.json"
    save_radio_map(rm, path)
    back = load_radio_map(path)
    assert back.entries == []
    assert back.config == rm.config


def test_save_accepts_open_file():
    buf = io.StringIO()
    save_radio_map(build_sample_map(), buf)
    assert buf.getvalue().endswith("\n")


def test_save_is_deterministic(tmp_path):
    rm = build_sample_map()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_radio_map(rm, a)
    save_radio_map(rm, b)
    assert a.read_bytes() == b.read_bytes()


def write_map(tmp_path, mutate):
    import json
    rm = build_sample_map()
    path = tmp_path / "map.json"
    save_radio_map(rm, path)
    data = json.loads(path.read_text())
    mutate(data)
    path.write_text(json.dumps(data))
    return path


def test_load_rejects_unknown_top_field(tmp_path):
    path = write_map(tmp_path, lambda d: d.update(extra=1))
    with pytest.raises(MapFormatError, match="extra"):
        load_radio_map(path)


def test_load_rejects_unknown_entry_field(tmp_path):
    path = write_map(tmp_path, lambda d: d["entries"][0].update(label="rp3"))
    with pytest.raises(MapFormatError, match="entry 0"):
        load_radio_map(path)


def test_load_rejects_unknown_config_field(tmp_path):
    path = write_map(tmp_path, lambda d: d["config"].update(gamma=2.0))
    with pytest.raises(MapFormatError, match="gamma"):
        load_radio_map(path)


def test_load_rejects_float_floor(tmp_path):
    path = write_map(tmp_path,
                     lambda d: d["entries"][0].update(floor=1.0))
    with pytest.raises(MapFormatError, match="floor"):
        load_radio_map(path)


def test_load_rejects_positive_rss(tmp_path):
    path = write_map(tmp_path,
                     lambda d: d["entries"][0]["fp"].update(aa=3))
    with pytest.raises(MapFormatError, match="RSS"):
        load_radio_map(path)


def test_load_rejects_wrong_version(tmp_path):
    path = write_map(tmp_path, lambda d: d.update(version=2))
    with pytest.raises(MapFormatError, match="version"):
        load_radio_map(path)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "map.json"
    path.write_text("not json {")
    with pytest.raises(MapFormatError, match="JSON"):
        load_radio_map(path)
