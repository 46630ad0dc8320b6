import csv
import json

import pytest

from stridemap.cli import default_config, main
from test_sim import corridor_dict


def write_json(path, obj):
    path.write_text(json.dumps(obj) + "\n")


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    """One simulate -> track -> build-map run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("flow")
    d = corridor_dict(walk={"waypoints": ["a", "b", "a"]})
    write_json(root / "scenario.json", d)
    write_json(root / "graph.json", d["environment"]["graph"])

    assert main(["simulate", str(root / "scenario.json"),
                 "--out", str(root)]) == 0
    assert main(["track", str(root / "trace.jsonl"),
                 "--graph", str(root / "graph.json"),
                 "--out", str(root)]) == 0
    assert main(["build-map", str(root / "trajectory.jsonl"),
                 str(root / "trace.jsonl"), "--out", str(root)]) == 0

    entries = json.loads((root / "map.json").read_text())["entries"]
    lines = [json.dumps({"x": e["x"], "y": e["y"], "floor": e["floor"],
                         "fp": e["fp"]}) for e in entries]
    (root / "queries.jsonl").write_text("\n".join(lines) + "\n")
    return root


# ---------------------------------------------------------------------------
# pipeline outputs


def test_simulate_outputs(flow):
    assert (flow / "trace.jsonl").is_file()
    manifest = json.loads((flow / "manifest.json").read_text())
    assert manifest["command"] == "build-map"  # last writer in the fixture
    assert manifest["outputs"] == sorted(manifest["outputs"])
    assert manifest["overrides"] == {}
    assert manifest["config"] == default_config()


def test_track_outputs(flow):
    summary = json.loads((flow / "summary.json").read_text())
    assert summary["mean_error_m"] < 0.5  # noiseless walk, step-quantized
    rows = read_csv(flow / "error_cdf.csv")
    assert rows[0] == ["error_m", "cdf"]
    assert float(rows[-1][1]) == 1.0


def test_build_map_outputs(flow):
    data = json.loads((flow / "map.json").read_text())
    assert data["version"] == 1
    assert len(data["entries"]) > 0
    seg_rows = read_csv(flow / "segments.csv")
    assert seg_rows[0] == ["segment_id", "belief", "accepted_scans"]
    assert len(seg_rows) - 1 >= 2  # the turn at b closes a segment


def test_evaluate_exact_queries(flow, tmp_path):
    assert main(["evaluate", str(flow / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["floor_accuracy"] == 1.0
    # out-and-back walks revisit positions; the revisit differs by one ulp
    # and ties in fingerprint space, so "exact" is exact up to that tie
    assert summary["mean_error_m"] == pytest.approx(0.0, abs=1e-9)
    rows = read_csv(tmp_path / "report.csv")
    n_queries = len((flow / "queries.jsonl").read_text().splitlines())
    assert len(rows) - 1 == n_queries
    assert all(r[-1] == "1" for r in rows[1:])


def test_localize_known_fingerprint(flow, capsys):
    entry = json.loads((flow / "map.json").read_text())["entries"][0]
    rss_args = []
    for mac, rss in entry["fp"].items():
        rss_args += ["--rss", f"{mac}={rss}"]
    assert main(["localize", str(flow / "map.json")] + rss_args) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out == {"x": entry["x"], "y": entry["y"], "floor": entry["floor"]}


def test_localize_fingerprint_file(flow, tmp_path, capsys):
    entry = json.loads((flow / "map.json").read_text())["entries"][0]
    fp_path = tmp_path / "fp.json"
    write_json(fp_path, entry["fp"])
    assert main(["localize", str(flow / "map.json"),
                 "--fingerprint", str(fp_path), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    saved = json.loads((tmp_path / "location.json").read_text())
    assert saved["floor"] == entry["floor"]


def test_sweep_report(flow, tmp_path):
    assert main(["sweep", str(flow / "map.json"), str(flow / "queries.jsonl"),
                 "--taus=-90,-80,-70", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0][0] == "tau"
    assert [r[0] for r in rows[1:]] == ["-90.0", "-80.0", "-70.0"]


def test_sweep_parallel_matches_serial(flow, tmp_path):
    a, b = tmp_path / "serial", tmp_path / "parallel"
    args = ["sweep", str(flow / "map.json"), str(flow / "queries.jsonl"),
            "--taus=-90,-75"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--jobs", "2"]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_reruns_are_byte_identical(flow, tmp_path):
    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert main(["track", str(flow / "trace.jsonl"),
                     "--graph", str(flow / "graph.json"),
                     "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("trajectory.jsonl", "summary.json", "error_cdf.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


# ---------------------------------------------------------------------------
# configuration plumbing


def test_set_override_recorded_in_manifest(flow, tmp_path):
    assert main(["evaluate", str(flow / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path),
                 "--set", "localization.k=3",
                 "--set", "localization.metric=sorensen"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["overrides"] == {"localization.k": 3,
                                     "localization.metric": "sorensen"}
    assert manifest["config"]["localization"]["k"] == 3


def test_metric_override_still_scores_exact_queries(flow, tmp_path):
    assert main(["evaluate", str(flow / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path),
                 "--set", "localization.metric=sorensen"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["floor_accuracy"] == 1.0
    assert summary["mean_error_m"] == pytest.approx(0.0, abs=1e-9)


def test_config_file_overlay(flow, tmp_path):
    cfg = tmp_path / "cfg.json"
    write_json(cfg, {"quality": {"belief_threshold": 1000.0}})
    assert main(["build-map", str(flow / "trajectory.jsonl"),
                 str(flow / "trace.jsonl"), "--out", str(tmp_path),
                 "--config", str(cfg)]) == 0
    data = json.loads((tmp_path / "map.json").read_text())
    assert data["entries"] == []  # nothing clears an impossible threshold
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["quality"]["belief_threshold"] == 1000.0
    assert manifest["overrides"] == {}


def test_impossible_threshold_warns_empty(flow, tmp_path, capsys):
    assert main(["build-map", str(flow / "trajectory.jsonl"),
                 str(flow / "trace.jsonl"), "--out", str(tmp_path),
                 "--set", "quality.belief_threshold=1000.0"]) == 0
    assert "radio map is empty" in capsys.readouterr().err


def test_evaluate_empty_map_fails(flow, tmp_path, capsys):
    assert main(["build-map", str(flow / "trajectory.jsonl"),
                 str(flow / "trace.jsonl"), "--out", str(tmp_path),
                 "--set", "quality.belief_threshold=1000.0"]) == 0
    assert main(["evaluate", str(tmp_path / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


@pytest.mark.parametrize("assignment", [
    "quality.nope=1",            # unknown leaf
    "nope.thing=1",              # unknown section
    "quality=5",                 # section, not a leaf
    "localization.k=3.5",        # non-integral for an int key
    "localization.k=true",       # bools never coerce
    "localization.k",            # missing value
])
def test_bad_set_flags(flow, tmp_path, capsys, assignment):
    code = main(["evaluate", str(flow / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path),
                 "--set", assignment])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_config_file_unknown_key(flow, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    write_json(cfg, {"qualty": {"belief_threshold": 10.0}})
    assert main(["evaluate", str(flow / "map.json"),
                 str(flow / "queries.jsonl"), "--out", str(tmp_path),
                 "--config", str(cfg)]) == 1
    assert "qualty" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# argument errors


def test_missing_input_file(tmp_path, capsys):
    assert main(["track", str(tmp_path / "absent.jsonl"),
                 "--mode", "pdr-gyro"]) == 1
    assert "not found" in capsys.readouterr().err


def test_landmark_mode_requires_graph(flow, tmp_path, capsys):
    assert main(["track", str(flow / "trace.jsonl"),
                 "--out", str(tmp_path)]) == 1
    assert "--graph" in capsys.readouterr().err


def test_gyro_mode_needs_no_graph(flow, tmp_path):
    assert main(["track", str(flow / "trace.jsonl"), "--mode", "pdr-gyro",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trajectory.jsonl").is_file()


def test_malformed_start(flow, tmp_path, capsys):
    assert main(["track", str(flow / "trace.jsonl"), "--mode", "pdr-gyro",
                 "--start", "1,2", "--out", str(tmp_path)]) == 1
    assert "x,y,floor" in capsys.readouterr().err


def test_localize_needs_a_fingerprint(flow, capsys):
    assert main(["localize", str(flow / "map.json")]) == 1
    assert "fingerprint" in capsys.readouterr().err


def test_malformed_rss_pair(flow, capsys):
    assert main(["localize", str(flow / "map.json"), "--rss", "aa"]) == 1
    assert "mac=rss" in capsys.readouterr().err


def test_query_file_validation(flow, tmp_path, capsys):
    bad = tmp_path / "queries.jsonl"
    bad.write_text('{"x": 0, "y": 0, "floor": 1, "fp": {}, "extra": 1}\n')
    assert main(["evaluate", str(flow / "map.json"), str(bad),
                 "--out", str(tmp_path)]) == 1
    assert "exactly x, y, floor, fp" in capsys.readouterr().err


def test_sweep_rejects_bad_tau_list(flow, tmp_path, capsys):
    assert main(["sweep", str(flow / "map.json"), str(flow / "queries.jsonl"),
                 "--taus", "abc", "--out", str(tmp_path)]) == 1
    assert "--taus" in capsys.readouterr().err
