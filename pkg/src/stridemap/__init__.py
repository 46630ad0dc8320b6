"""Offline indoor localization toolkit.

Turns smartphone sensor traces (accelerometer, gyroscope, magnetometer,
barometer, WiFi scans) into calibrated walking trajectories and
quality-gated WiFi radio maps, and evaluates fingerprint localization
against those maps. A step-quality belief decides which walk segments are
trustworthy enough to calibrate stride length and to contribute
fingerprints.
"""

from .landmarks import (
    Edge,
    GraphError,
    Landmark,
    LandmarkConfig,
    LandmarkEvent,
    LandmarkGraph,
    Rule,
    RuleKind,
    detect_acc_landmarks,
    detect_baro_landmarks,
    detect_gyro_landmarks,
    graph_from_dict,
    graph_to_dict,
    load_landmark_graph,
    replicate_floor,
)
from .localization import (
    EvaluationReport,
    FingerprintVector,
    LocalizationConfig,
    LocalizationResult,
    QueryResult,
    VectorizedMap,
    euclidean,
    evaluate,
    knn_localize,
    map_min_rss,
    map_universe,
    sorensen,
    to_positive,
    vectorize_map,
)
from .pdr import (
    HeadingSource,
    MatchState,
    PathSegment,
    PdrConfig,
    Pose,
    Trajectory,
    attach_periodicities,
    dump_trajectory,
    landmark_confidence,
    load_trajectory,
    match_landmark,
    run_pdr,
    trajectory_errors,
    update_step_length,
)
from .radiomap import (
    MapFormatError,
    QualityConfig,
    RadioMap,
    RadioMapEntry,
    build_radio_map,
    interpolate_rp,
    load_radio_map,
    merge_radio_maps,
    save_radio_map,
    segment_belief,
)
from .sensors import (
    MotionState,
    ScalarChannel,
    SensorConfig,
    SensorTrace,
    StepEvent,
    TraceError,
    TruthChannel,
    VectorChannel,
    WifiScan,
    classify_motion,
    detect_steps,
    dump_trace,
    load_trace,
)
from .sim import (
    Ap,
    CompassZone,
    Environment,
    NoiseModel,
    Scenario,
    ScenarioError,
    WalkScript,
    generate_test_queries,
    generate_trace,
    load_scenario,
    mixed_quality_scenario,
    plan_walk,
    scenario_from_dict,
    scenario_to_dict,
    two_floor_scenario,
)

__version__ = "0.1.0"
