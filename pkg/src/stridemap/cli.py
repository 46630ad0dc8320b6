"""Command line pipeline around the toolkit.

Subcommands cover the full workflow: simulate a scripted walk, track it
into a trajectory, build a radio map, and localize or evaluate query
fingerprints against that map. Every run echoes its effective
configuration into a manifest so outputs are reproducible; identical
inputs and flags produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .landmarks import GraphError, LandmarkConfig, load_landmark_graph
from .localization import LocalizationConfig, evaluate, knn_localize, vectorize_map
from .pdr import (HeadingSource, PdrConfig, Trajectory, attach_periodicities,
                  dump_trajectory, load_trajectory, run_pdr, trajectory_errors)
from .radiomap import (MapFormatError, QualityConfig, build_radio_map,
                       load_radio_map, save_radio_map, segment_belief)
from .sensors import SensorConfig, TraceError, detect_steps, dump_trace, load_trace
from .sim import ScenarioError, generate_trace, load_scenario

CONFIG_VERSION = 1


def default_config() -> dict:
    """Fresh copy of the full parameter tree; every leaf is addressable
    as a dotted --set key."""
    return {
        "version": CONFIG_VERSION,
        "sensors": {
            "acc_window": 50,
            "variance_threshold": 0.5,
            "walking_threshold_s": 2.0,
            "still_min_s": 1.0,
            "still_max_s": 8.0,
            "gyro_window": 10,
        },
        "landmarks": {
            "walking_min_s": 2.0,
            "still_min_s": 1.0,
            "still_max_s": 8.0,
            "gyro_rate_threshold": 1.1,
            "baro_window_s": 1.0,
            "baro_flat_threshold": 0.05,
            "baro_change_threshold": 0.3,
        },
        "pdr": {
            "initial_step_length": 0.63,
            "pressure_per_floor": 0.45,
            "heading_threshold_deg": 30.0,
            "confidence_threshold": 0.25,
            "distance_floor": 0.1,
            "min_steps_for_update": 3,
            "heading_source": "landmark",
        },
        "quality": {
            "period_min": 0.4,
            "period_max": 1.0,
            "sigma_floor": 0.005,
            "belief_threshold": 15.0,
        },
        "localization": {
            "k": 1,
            "metric": "euclidean",
            "tau": -90.0,
            "tau_scope": "both",
        },
    }


class CliError(Exception):
    """Reported to stderr with a nonzero exit, no traceback."""


def _merge_tree(base: dict, extra: dict, prefix: str = "") -> None:
    for key, val in extra.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise CliError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise CliError(f"config key {dotted!r} must be a section")
            _merge_tree(base[key], val, f"{dotted}.")
        else:
            base[key] = _coerce(dotted, base[key], val)


def _coerce(dotted: str, current, raw):
    want = type(current)
    bad = CliError(f"config key {dotted!r} expects {want.__name__}, got {raw!r}")
    if isinstance(raw, bool):
        raise bad
    try:
        if want is int:
            if isinstance(raw, float) and raw != int(raw):
                raise bad
            return int(raw)
        if want is float:
            return float(raw)
    except (TypeError, ValueError):
        raise bad
    if want is str:
        if not isinstance(raw, str):
            raise bad
        return raw
    raise bad


def _apply_set(tree: dict, assignment: str) -> tuple[str, object]:
    if "=" not in assignment:
        raise CliError(f"--set needs key=value, got {assignment!r}")
    dotted, _, raw = assignment.partition("=")
    node = tree
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise CliError(f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node or isinstance(node[leaf], dict):
        raise CliError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings like euclidean
    node[leaf] = _coerce(dotted, node[leaf], value)
    return dotted, node[leaf]


def effective_config(args) -> tuple[dict, dict]:
    """Defaults, overlaid with --config file, overlaid with --set flags."""
    tree = default_config()
    if args.config:
        path = _require_file(args.config, "config file")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"config file {path}: invalid JSON: {exc}")
        if not isinstance(data, dict):
            raise CliError(f"config file {path}: must be an object")
        _merge_tree(tree, data)
    overrides = {}
    for assignment in args.set or []:
        dotted, value = _apply_set(tree, assignment)
        overrides[dotted] = value
    return tree, overrides


def _configs(tree: dict):
    s = tree["sensors"]
    l = tree["landmarks"]
    p = tree["pdr"]
    q = tree["quality"]
    z = tree["localization"]
    sensor_cfg = SensorConfig(
        acc_window=s["acc_window"], variance_threshold=s["variance_threshold"],
        walking_threshold_s=s["walking_threshold_s"], still_min_s=s["still_min_s"],
        still_max_s=s["still_max_s"], gyro_window=s["gyro_window"])
    landmark_cfg = LandmarkConfig(
        walking_min_s=l["walking_min_s"], still_min_s=l["still_min_s"],
        still_max_s=l["still_max_s"], gyro_rate_threshold=l["gyro_rate_threshold"],
        baro_window_s=l["baro_window_s"],
        baro_flat_threshold=l["baro_flat_threshold"],
        baro_change_threshold=l["baro_change_threshold"])
    try:
        source = HeadingSource(p["heading_source"])
    except ValueError:
        raise CliError(f"unknown heading source {p['heading_source']!r}")
    pdr_cfg = PdrConfig(
        initial_step_length=p["initial_step_length"],
        pressure_per_floor=p["pressure_per_floor"],
        heading_threshold=math.radians(p["heading_threshold_deg"]),
        confidence_threshold=p["confidence_threshold"],
        distance_floor=p["distance_floor"],
        min_steps_for_update=p["min_steps_for_update"],
        heading_source=source)
    quality_cfg = QualityConfig(
        period_min=q["period_min"], period_max=q["period_max"],
        sigma_floor=q["sigma_floor"], belief_threshold=q["belief_threshold"])
    try:
        loc_cfg = LocalizationConfig(k=z["k"], metric=z["metric"],
                                     tau=z["tau"], tau_scope=z["tau_scope"])
    except ValueError as exc:
        raise CliError(str(exc))
    return sensor_cfg, landmark_cfg, pdr_cfg, quality_cfg, loc_cfg


# ---------------------------------------------------------------------------
# deterministic output plumbing


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Outputs:
    """Collects files and writes each atomically; temp files never
    survive a failed run."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.pending: list[tuple[Path, str]] = []

    def add_text(self, name: str, text: str) -> None:
        self.pending.append((self.out_dir / name, text))

    def add_json(self, name: str, obj) -> None:
        self.add_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def add_csv(self, name: str, header: list[str], rows: list[list]) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        self.add_text(name, buf.getvalue())

    def names(self) -> list[str]:
        return [p.name for p, _ in self.pending]

    def commit(self) -> None:
        for path, text in self.pending:
            tmp = path.with_name(path.name + ".tmp")
            try:
                tmp.write_text(text)
                os.replace(tmp, path)
            finally:
                if tmp.exists():
                    tmp.unlink()


def _manifest(command: str, inputs: dict, outputs: list[str], args,
              tree: dict, overrides: dict) -> dict:
    return {
        "command": command,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "seed": args.seed,
        "overrides": overrides,
        "config": tree,
    }


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    tree, overrides = effective_config(args)
    scn_path = _require_file(args.scenario, "scenario file")
    scenario = load_scenario(scn_path)
    noise = scenario.noise
    if args.seed is not None:
        noise = replace(noise, seed=args.seed)
    trace = generate_trace(scenario.environment, scenario.walk, noise)
    out = _out_dir(args)
    outs = _Outputs(out)
    trace_name = "trace.jsonl"
    buf = io.StringIO()
    dump_trace(trace, buf)
    outs.add_text(trace_name, buf.getvalue())
    outs.add_json("manifest.json", _manifest(
        "simulate", {"scenario": args.scenario}, outs.names() + ["manifest.json"],
        args, tree, overrides))
    outs.commit()
    print(f"wrote {out / trace_name} ({len(trace.wifi)} scans, "
          f"{trace.accel.t[-1]:.1f} s)")
    return 0


def cmd_track(args) -> int:
    tree, overrides = effective_config(args)
    if args.mode:
        tree["pdr"]["heading_source"] = args.mode
    sensor_cfg, landmark_cfg, pdr_cfg, quality_cfg, _ = _configs(tree)
    trace = load_trace(_require_file(args.trace, "trace file"))
    graph = None
    if pdr_cfg.heading_source is HeadingSource.LANDMARK:
        if not args.graph:
            raise CliError("landmark mode requires --graph")
        graph = load_landmark_graph(_require_file(args.graph, "graph file"))
    if args.start:
        parts = args.start.split(",")
        if len(parts) != 3:
            raise CliError("--start must be x,y,floor")
        initial = (float(parts[0]), float(parts[1]), float(parts[2]))
    elif trace.truth is not None and len(trace.truth):
        initial = (float(trace.truth.xy[0, 0]), float(trace.truth.xy[0, 1]),
                   float(trace.truth.floor[0]))
    else:
        raise CliError("trace has no ground truth; pass --start x,y,floor")

    traj = run_pdr(trace, graph, initial, pdr_cfg, sensor_cfg,
                   landmark_cfg, quality_cfg)
    out = _out_dir(args)
    outs = _Outputs(out)
    buf = io.StringIO()
    dump_trajectory(traj, buf)
    outs.add_text("trajectory.jsonl", buf.getvalue())

    have_truth = trace.truth is not None and len(trace.truth) > 0
    if have_truth:
        errors = trajectory_errors(traj, trace)
        mean_error = float(errors.mean()) if len(errors) else None
        outs.add_json("summary.json", {"mean_error_m": mean_error})
        ranked = sorted(float(e) for e in errors)
        rows = [[_fmt(e), _fmt((i + 1) / len(ranked))]
                for i, e in enumerate(ranked)]
        outs.add_csv("error_cdf.csv", ["error_m", "cdf"], rows)
    else:
        print("notice: trace has no ground truth; error stats omitted",
              file=sys.stderr)
    outs.add_json("manifest.json", _manifest(
        "track", {"trace": args.trace, "graph": args.graph},
        outs.names() + ["manifest.json"], args, tree, overrides))
    outs.commit()
    if have_truth:
        print(f"wrote {out / 'trajectory.jsonl'} (mean error "
              f"{mean_error:.3f} m, {len(traj.visits)} landmark visits)")
    else:
        print(f"wrote {out / 'trajectory.jsonl'}")
    return 0


def cmd_build_map(args) -> int:
    tree, overrides = effective_config(args)
    sensor_cfg, _, _, quality_cfg, _ = _configs(tree)
    traj = load_trajectory(_require_file(args.trajectory, "trajectory file"))
    trace = load_trace(_require_file(args.trace, "trace file"))
    attach_periodicities(traj, detect_steps(trace, sensor_cfg))

    radio_map = build_radio_map(traj, trace.wifi, quality_cfg)
    if not radio_map.entries:
        print("warning: radio map is empty", file=sys.stderr)
    rows = []
    for idx, seg in enumerate(traj.segments):
        belief = segment_belief(seg, quality_cfg)
        single = Trajectory(poses=[], segments=[seg])
        accepted = len(build_radio_map(single, trace.wifi, quality_cfg).entries)
        rows.append([str(idx), _fmt(belief), str(accepted)])
    out = _out_dir(args)
    outs = _Outputs(out)
    buf = io.StringIO()
    save_radio_map(radio_map, buf)
    outs.add_text("map.json", buf.getvalue())
    outs.add_csv("segments.csv", ["segment_id", "belief", "accepted_scans"], rows)
    outs.add_json("manifest.json", _manifest(
        "build-map", {"trajectory": args.trajectory, "trace": args.trace},
        outs.names() + ["manifest.json"], args, tree, overrides))
    outs.commit()
    print(f"wrote {out / 'map.json'} ({len(radio_map.entries)} entries from "
          f"{len(traj.segments)} segments)")
    return 0


def _parse_rss(pairs: list[str]) -> dict[str, int]:
    fp = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--rss needs mac=rss, got {pair!r}")
        mac, _, raw = pair.partition("=")
        try:
            fp[mac] = int(raw)
        except ValueError:
            raise CliError(f"--rss value for {mac!r} must be an integer")
    return fp


def load_queries(path: str | Path) -> list[tuple[tuple[float, float, int], dict[str, int]]]:
    """Query JSONL: one {"x", "y", "floor", "fp"} object per line."""
    queries = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{ln}: invalid JSON: {exc}")
            if not isinstance(rec, dict) or set(rec) != {"x", "y", "floor", "fp"}:
                raise CliError(f"{path}:{ln}: query needs exactly x, y, floor, fp")
            fp = {str(mac): int(rss) for mac, rss in rec["fp"].items()}
            queries.append(((float(rec["x"]), float(rec["y"]),
                             int(rec["floor"])), fp))
    return queries


def cmd_localize(args) -> int:
    tree, overrides = effective_config(args)
    *_, loc_cfg = _configs(tree)
    radio_map = load_radio_map(_require_file(args.map, "map file"))
    if args.rss:
        fp = _parse_rss(args.rss)
    elif args.fingerprint:
        with open(_require_file(args.fingerprint, "fingerprint file")) as fh:
            raw = json.load(fh)
        fp = {str(m): int(r) for m, r in raw.items()}
    else:
        raise CliError("pass a fingerprint via --rss or --fingerprint")
    result = knn_localize(fp, radio_map, loc_cfg)
    payload = {"x": result.x, "y": result.y, "floor": result.floor}
    print(json.dumps(payload, sort_keys=True))
    if args.out:
        outs = _Outputs(_out_dir(args))
        outs.add_json("location.json", payload)
        outs.add_json("manifest.json", _manifest(
            "localize",
            {"map": args.map, "fingerprint": args.fingerprint,
             "rss": args.rss or []},
            outs.names() + ["manifest.json"], args, tree, overrides))
        outs.commit()
    return 0


def _report_rows(report) -> list[list[str]]:
    rows = []
    for r in report.rows:
        rows.append([str(r.query_id), _fmt(r.truth_x), _fmt(r.truth_y),
                     str(r.truth_floor), _fmt(r.est_x), _fmt(r.est_y),
                     str(r.est_floor), _fmt(r.error_m),
                     str(int(r.floor_correct))])
    return rows


_REPORT_HEADER = ["query_id", "truth_x", "truth_y", "truth_floor",
                  "est_x", "est_y", "est_floor", "error_m", "floor_correct"]


def _summary_dict(report) -> dict:
    return {
        "floor_accuracy": report.floor_accuracy,
        "mean_error_m": report.mean_error_m,
        "p50": report.p50,
        "p75": report.p75,
        "p90": report.p90,
    }


def cmd_evaluate(args) -> int:
    tree, overrides = effective_config(args)
    *_, loc_cfg = _configs(tree)
    radio_map = load_radio_map(_require_file(args.map, "map file"))
    queries = load_queries(_require_file(args.queries, "queries file"))
    report = evaluate(queries, radio_map, loc_cfg)
    out = _out_dir(args)
    outs = _Outputs(out)
    outs.add_csv("report.csv", _REPORT_HEADER, _report_rows(report))
    outs.add_json("summary.json", _summary_dict(report))
    outs.add_json("manifest.json", _manifest(
        "evaluate", {"map": args.map, "queries": args.queries},
        outs.names() + ["manifest.json"], args, tree, overrides))
    outs.commit()
    acc = report.floor_accuracy
    mean = "n/a" if report.mean_error_m is None else f"{report.mean_error_m:.3f} m"
    print(f"wrote {out / 'summary.json'} (floor accuracy {acc:.3f}, "
          f"mean error {mean})")
    return 0


def _sweep_one(task: tuple[str, str, str, float]) -> list[str]:
    map_path, queries_path, tree_json, tau = task
    tree = json.loads(tree_json)
    tree["localization"]["tau"] = tau
    *_, loc_cfg = _configs(tree)
    radio_map = load_radio_map(map_path)
    queries = load_queries(queries_path)
    report = evaluate(queries, vectorize_map(radio_map, loc_cfg), loc_cfg)
    return [_fmt(tau), _fmt(report.floor_accuracy), _fmt(report.mean_error_m),
            _fmt(report.p50), _fmt(report.p75), _fmt(report.p90)]


def cmd_sweep(args) -> int:
    tree, overrides = effective_config(args)
    _require_file(args.map, "map file")
    _require_file(args.queries, "queries file")
    try:
        taus = [float(v) for v in args.taus.split(",") if v.strip()]
    except ValueError:
        raise CliError("--taus must be a comma-separated number list")
    if not taus:
        raise CliError("--taus list is empty")
    tree_json = json.dumps(tree)
    tasks = [(args.map, args.queries, tree_json, tau) for tau in taus]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    out = _out_dir(args)
    outs = _Outputs(out)
    outs.add_csv("sweep.csv", ["tau", "floor_accuracy", "mean_error_m",
                               "p50", "p75", "p90"], rows)
    outs.add_json("manifest.json", _manifest(
        "sweep", {"map": args.map, "queries": args.queries},
        outs.names() + ["manifest.json"], args, tree, overrides))
    outs.commit()
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} tau values)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file overriding config defaults")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one dotted config key (repeatable)")
    sub.add_argument("--seed", type=int, help="override the scenario RNG seed")
    sub.add_argument("--out", help="output directory (default: current)")
    sub.add_argument("--jobs", type=int, default=1,
                     help="parallel workers for batch commands")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stridemap",
        description="Indoor localization pipeline: simulate walks, track "
                    "trajectories, build radio maps, evaluate fingerprints.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="generate a sensor trace")
    p.add_argument("scenario", help="scenario JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("track", help="dead-reckon a trace into a trajectory")
    p.add_argument("trace", help="sensor trace JSONL")
    p.add_argument("--graph", help="landmark graph JSON (landmark mode)")
    p.add_argument("--mode", choices=[m.value for m in HeadingSource],
                   help="heading source (default: config pdr.heading_source)")
    p.add_argument("--start", help="initial pose x,y,floor "
                                   "(default: first truth record)")
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = subs.add_parser("build-map", help="construct a quality-gated radio map")
    p.add_argument("trajectory", help="trajectory JSONL from track")
    p.add_argument("trace", help="sensor trace JSONL with the WiFi scans")
    _add_common(p)
    p.set_defaults(func=cmd_build_map)

    p = subs.add_parser("localize", help="locate a single fingerprint")
    p.add_argument("map", help="radio map JSON")
    p.add_argument("--rss", action="append", metavar="MAC=RSS",
                   help="fingerprint reading (repeatable)")
    p.add_argument("--fingerprint", help="JSON file {mac: rss}")
    _add_common(p)
    p.set_defaults(func=cmd_localize)

    p = subs.add_parser("evaluate", help="score query fingerprints against a map")
    p.add_argument("map", help="radio map JSON")
    p.add_argument("queries", help="query JSONL with embedded truth")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("sweep", help="evaluate across a tau list")
    p.add_argument("map", help="radio map JSON")
    p.add_argument("queries", help="query JSONL with embedded truth")
    p.add_argument("--taus", required=True,
                   help="comma-separated tau values, e.g. -90,-80,-70")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScenarioError, GraphError, TraceError, MapFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
