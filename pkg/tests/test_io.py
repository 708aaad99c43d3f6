import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reldock.config import ScenarioConfig, with_overrides
from reldock.estimator import Extrinsics, MeasurementNoiseModel, ProcessNoise, WorldParams
from reldock.geometry import exp_map
from reldock.io import (
    LOG_HEADER,
    REPLAY_COLUMNS,
    TRACE_COLUMNS,
    EstimateRecord,
    ExtrinsicsRecord,
    FilterConfigRecord,
    ImuRecord,
    InitRecord,
    LogFormatError,
    MarkerRecord,
    PassiveAttitudeRecord,
    TruthRecord,
    format_record,
    parse_record,
    read_log,
    read_metrics_csv,
    replay,
    write_log,
    write_metrics_csv,
    write_replay_csv,
    write_trace_csv,
)
from reldock.scenario import run_docking

R = exp_map((0.1, -0.2, 0.3))
SAMPLES = [
    ImuRecord(0.002, (0.1, 0.2, 9.8), (0.01, -0.02, 0.03)),
    MarkerRecord(0.0333, (0.01, 0.02, 0.55), R),
    PassiveAttitudeRecord(0.01, R),
    TruthRecord(0.5, (0.0, 0.0, -0.6), (0.0, 0.0, 0.1), R, (2.0,)),
    EstimateRecord(0.5, (0.0, 0.01, -0.6), (0.0, 0.0, 0.1), R, np.arange(9) * 1e-4),
    InitRecord(0.0, (0.5, 0, -0.6), np.zeros(3), np.eye(3), np.eye(9)),
    ExtrinsicsRecord.of(Extrinsics()),
    FilterConfigRecord.of(ProcessNoise(), MeasurementNoiseModel(), None, WorldParams()),
]


@pytest.fixture(scope="module")
def live_run():
    return run_docking(ScenarioConfig(duration=14.0))


@pytest.mark.parametrize("rec", SAMPLES, ids=lambda r: r.TAG)
def test_record_round_trip(rec, tmp_path):
    assert parse_record(format_record(rec)) == rec
    path = tmp_path / "one.log"
    write_log([rec], path)
    assert path.read_text().splitlines()[0] == LOG_HEADER
    assert read_log(path) == [rec]


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.floats(0, 1e6), st.tuples(finite, finite, finite), st.tuples(finite, finite, finite))
def test_round_trip_is_lossless(t, accel, gyro):
    rec = ImuRecord(t, accel, gyro)
    back = parse_record(format_record(rec))
    assert back == rec
    assert all(math.copysign(1, a) == math.copysign(1, b) for a, b in zip(back.accel, rec.accel))


def test_empty_stream(tmp_path):
    path = tmp_path / "empty.log"
    write_log([], path)
    assert path.read_text() == LOG_HEADER + "\n"
    assert read_log(path) == []


def test_full_run_round_trip(live_run, tmp_path):
    path = tmp_path / "run.log"
    write_log(live_run.records, path)
    back = read_log(path)
    assert back == live_run.records
    n_imu = sum(isinstance(r, ImuRecord) for r in back)
    n_marker = sum(isinstance(r, MarkerRecord) for r in back)
    assert n_imu > 4000 and n_marker > 200


def test_write_rejects_unordered(tmp_path):
    with pytest.raises(LogFormatError, match="back in time"):
        write_log([SAMPLES[0], replace(SAMPLES[0], t=0.001)], tmp_path / "x.log")


def test_write_rejects_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        write_log(SAMPLES[:1], blocker / "sub" / "x.log")


@pytest.mark.parametrize(
    "body, message",
    [
        ("BOGUS t=0", "line 2: unknown record type"),
        ("IMU t=0 accel=1,2,3", "line 2: missing fields"),
        ("IMU t=0 accel=1,2 gyro=0,0,0", "line 2: IMU.accel needs 3 values"),
        ("IMU t=0 accel=1,2,x gyro=0,0,0", "line 2: non-numeric"),
        ("IMU t=0 accel=1,2,3 gyro=0,0,0 extra=1", "line 2: bad field"),
        ("IMU t=0 accel=1,2,3 accel=1,2,3 gyro=0,0,0", "line 2: bad field"),
        ("IMU t=1 accel=1,2,3 gyro=0,0,0\nIMU t=0.5 accel=1,2,3 gyro=0,0,0", "line 3: timestamp"),
    ],
)
def test_read_errors_name_the_line(body, message, tmp_path):
    path = tmp_path / "bad.log"
    path.write_text(LOG_HEADER + "\n" + body + "\n")
    with pytest.raises(LogFormatError, match=message):
        read_log(path)


def test_read_requires_header(tmp_path):
    path = tmp_path / "nohdr.log"
    path.write_text(format_record(SAMPLES[0]) + "\n")
    with pytest.raises(LogFormatError, match="line 1"):
        read_log(path)


def test_live_and_replay_estimates_are_identical(live_run, tmp_path):
    path = tmp_path / "run.log"
    write_log(live_run.records, path)
    live = [r for r in live_run.records if isinstance(r, EstimateRecord)]
    result = replay(read_log(path))
    assert len(live) > 1000
    # the live filter stops at the motor stop; replay keeps dead-reckoning after it
    assert result.estimates[: len(live)] == live
    assert all(e.t > live[-1].t for e in result.estimates[len(live) :])


def test_replay_is_deterministic(live_run):
    a = replay(live_run.records)
    b = replay(live_run.records)
    assert a.estimates == b.estimates
    np.testing.assert_array_equal(a.position_errors, b.position_errors)
    assert a.n_updates == b.n_updates > 0


def test_replay_imu_only_dead_reckons():
    records = [r for r in run_docking(ScenarioConfig(duration=3.0)).records if not isinstance(r, MarkerRecord)]
    result = replay(records)
    assert result.n_updates == 0
    assert len(result.estimates) > 100
    assert np.all(np.diff(result.covariance_traces) >= 0)


def test_replay_with_explicit_initial_state():
    records = [r for r in SAMPLES if isinstance(r, (ImuRecord, PassiveAttitudeRecord))]
    records.sort(key=lambda r: r.t)
    result = replay(records, extrinsics=Extrinsics(), initial=(np.zeros(3), np.zeros(3), np.eye(3), np.eye(9) * 1e-4))
    assert len(result.estimates) == 1
    assert result.position_errors.size == 0


def test_replay_errors():
    with pytest.raises(LogFormatError, match="empty"):
        replay([])
    with pytest.raises(LogFormatError, match="no IMU"):
        replay([SAMPLES[1]])
    with pytest.raises(LogFormatError, match="extrinsics"):
        replay([SAMPLES[0]])


def test_metrics_csv_round_trip(tmp_path):
    rows = [{"run": 0, "seed": 3, "success": True, "time_to_dock_s": 7.25, "mean_nees": math.nan}]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    assert path.read_text().startswith("# reldock metrics schema 1\n")
    back = read_metrics_csv(path)
    assert back[0]["seed"] == "3" and back[0]["success"] == "1"
    assert back[0]["time_to_dock_s"] == "7.25" and back[0]["mean_nees"] == ""
    bad = tmp_path / "bad.csv"
    bad.write_text("run,seed\n")
    with pytest.raises(LogFormatError):
        read_metrics_csv(bad)


def test_trace_and_replay_csv(live_run, tmp_path):
    write_trace_csv(live_run.records, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0].startswith("# reldock trace schema")
    assert lines[1].split(",") == TRACE_COLUMNS
    assert len(lines) - 2 == sum(isinstance(r, TruthRecord) for r in live_run.records)

    result = replay(live_run.records)
    write_replay_csv(live_run.records, result, tmp_path / "replay.csv")
    lines = (tmp_path / "replay.csv").read_text().splitlines()
    assert lines[1].split(",") == REPLAY_COLUMNS
    assert len(lines) - 2 == len(result.estimates)
    assert all(len(line.split(",")) == len(REPLAY_COLUMNS) for line in lines[2:])
