"""Line-oriented sensor/estimate logs, deterministic replay, metrics CSV export.

Log format (version 1)::

    #reldock-log 1
    IMU t=0.002 accel=0.01,-0.02,9.81 gyro=0,0,0.001
    MARKER t=0.034 position=... rotation=r00,r01,...,r22

One record per line: a type tag followed by ``name=v1,v2,...`` fields. Numbers
are written with 17 significant digits so doubles round-trip exactly. Matrices
are row-major. Timestamps (seconds since run start) never decrease.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Iterable

import numpy as np

from .estimator import (
    Extrinsics,
    ImuSample,
    MeasurementNoiseModel,
    ProcessNoise,
    RelativeEstimator,
    RelativePoseMeasurement,
    WorldParams,
)
from .geometry import euler_zyx, log_map, wrap_angle

LOG_HEADER = "#reldock-log 1"


class LogFormatError(ValueError):
    pass


def _flat(x) -> tuple:
    return tuple(float(v) for v in np.asarray(x, dtype=float).reshape(-1))


@dataclass(frozen=True)
class _Record:
    TAG: ClassVar[str] = ""
    SIZES: ClassVar[dict] = {}
    t: float

    def __post_init__(self):
        for name, size in self.SIZES.items():
            value = _flat(getattr(self, name))
            if len(value) != size:
                raise LogFormatError(f"{self.TAG}.{name} needs {size} values, got {len(value)}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "t", float(self.t))

    def array(self, name: str) -> np.ndarray:
        a = np.array(getattr(self, name))
        return a.reshape(3, 3) if self.SIZES[name] == 9 else a


@dataclass(frozen=True)
class ImuRecord(_Record):
    TAG: ClassVar[str] = "IMU"
    SIZES: ClassVar[dict] = {"accel": 3, "gyro": 3}
    accel: tuple = ()
    gyro: tuple = ()

    def sample(self) -> ImuSample:
        return ImuSample(self.t, self.array("accel"), self.array("gyro"))


@dataclass(frozen=True)
class MarkerRecord(_Record):
    TAG: ClassVar[str] = "MARKER"
    SIZES: ClassVar[dict] = {"position": 3, "rotation": 9}
    position: tuple = ()
    rotation: tuple = ()

    def measurement(self) -> RelativePoseMeasurement:
        return RelativePoseMeasurement(self.t, self.array("position"), self.array("rotation"))


@dataclass(frozen=True)
class PassiveAttitudeRecord(_Record):
    TAG: ClassVar[str] = "PASSIVE_ATT"
    SIZES: ClassVar[dict] = {"rotation": 9}
    rotation: tuple = ()


@dataclass(frozen=True)
class TruthRecord(_Record):
    """Relative position/velocity (active minus passive, inertial frame) and
    the active attitude; ``phase`` is the scenario phase code."""

    TAG: ClassVar[str] = "TRUTH"
    SIZES: ClassVar[dict] = {"p": 3, "v": 3, "R": 9, "phase": 1}
    p: tuple = ()
    v: tuple = ()
    R: tuple = ()
    phase: tuple = (0.0,)


@dataclass(frozen=True)
class EstimateRecord(_Record):
    TAG: ClassVar[str] = "ESTIMATE"
    SIZES: ClassVar[dict] = {"p": 3, "v": 3, "R": 9, "cov_diag": 9}
    p: tuple = ()
    v: tuple = ()
    R: tuple = ()
    cov_diag: tuple = ()


@dataclass(frozen=True)
class InitRecord(_Record):
    """Filter initialization (switch to onboard estimation)."""

    TAG: ClassVar[str] = "INIT"
    SIZES: ClassVar[dict] = {"p": 3, "v": 3, "R": 9, "P": 81}
    p: tuple = ()
    v: tuple = ()
    R: tuple = ()
    P: tuple = ()


@dataclass(frozen=True)
class ExtrinsicsRecord(_Record):
    TAG: ClassVar[str] = "EXTRINSICS"
    SIZES: ClassVar[dict] = {"R_CQ": 9, "R_MF": 9, "t_QC": 3, "t_FM": 3}
    R_CQ: tuple = ()
    R_MF: tuple = ()
    t_QC: tuple = ()
    t_FM: tuple = ()

    @classmethod
    def of(cls, e: Extrinsics, t: float = 0.0) -> "ExtrinsicsRecord":
        return cls(t, e.R_CQ, e.R_MF, e.t_QC, e.t_FM)

    def extrinsics(self) -> Extrinsics:
        return Extrinsics(self.array("R_CQ"), self.array("R_MF"), self.array("t_QC"), self.array("t_FM"))


@dataclass(frozen=True)
class FilterConfigRecord(_Record):
    """Filter noise parameters; ``gate`` is the gating probability, 0 when off."""

    TAG: ClassVar[str] = "FILTER"
    SIZES: ClassVar[dict] = {
        "sigma_accel": 1,
        "sigma_gyro": 1,
        "position_var": 3,
        "attitude_var": 3,
        "reference_distance": 1,
        "min_distance": 1,
        "gate": 1,
        "gravity": 3,
    }
    sigma_accel: tuple = ()
    sigma_gyro: tuple = ()
    position_var: tuple = ()
    attitude_var: tuple = ()
    reference_distance: tuple = ()
    min_distance: tuple = ()
    gate: tuple = (0.0,)
    gravity: tuple = ()

    @classmethod
    def of(cls, pn: ProcessNoise, mn: MeasurementNoiseModel, gate, world: WorldParams, t: float = 0.0):
        return cls(
            t,
            pn.sigma_accel,
            pn.sigma_gyro,
            mn.position_var,
            mn.attitude_var,
            mn.reference_distance,
            mn.min_distance,
            0.0 if gate is None else gate,
            world.gravity,
        )

    def process_noise(self) -> ProcessNoise:
        return ProcessNoise(self.sigma_accel[0], self.sigma_gyro[0])

    def measurement_noise(self) -> MeasurementNoiseModel:
        return MeasurementNoiseModel(
            self.position_var, self.attitude_var, self.reference_distance[0], self.min_distance[0]
        )

    def gate_probability(self):
        return self.gate[0] or None

    def world(self) -> WorldParams:
        return WorldParams(np.array(self.gravity))


RECORD_TYPES = {
    cls.TAG: cls
    for cls in (
        ImuRecord,
        MarkerRecord,
        PassiveAttitudeRecord,
        TruthRecord,
        EstimateRecord,
        InitRecord,
        ExtrinsicsRecord,
        FilterConfigRecord,
    )
}


def format_record(rec: _Record) -> str:
    parts = [rec.TAG, f"t={rec.t:.17g}"]
    for name in rec.SIZES:
        parts.append(name + "=" + ",".join(f"{x:.17g}" for x in getattr(rec, name)))
    return " ".join(parts)


def parse_record(line: str, lineno: int = 0) -> _Record:
    tokens = line.split()
    if not tokens:
        raise LogFormatError(f"line {lineno}: empty record")
    cls = RECORD_TYPES.get(tokens[0])
    if cls is None:
        raise LogFormatError(f"line {lineno}: unknown record type {tokens[0]!r}")
    values = {}
    for tok in tokens[1:]:
        name, sep, raw = tok.partition("=")
        if not sep or (name != "t" and name not in cls.SIZES) or name in values:
            raise LogFormatError(f"line {lineno}: bad field {tok!r}")
        try:
            values[name] = [float(x) for x in raw.split(",")]
        except ValueError:
            raise LogFormatError(f"line {lineno}: non-numeric value in {tok!r}") from None
    missing = {"t", *cls.SIZES} - values.keys()
    if missing:
        raise LogFormatError(f"line {lineno}: missing fields {sorted(missing)}")
    if len(values["t"]) != 1:
        raise LogFormatError(f"line {lineno}: t must be a scalar")
    try:
        return cls(t=values.pop("t")[0], **values)
    except LogFormatError as exc:
        raise LogFormatError(f"line {lineno}: {exc}") from None


def _check_order(records: Iterable[_Record]):
    last = -np.inf
    for i, rec in enumerate(records):
        if rec.t < last:
            raise LogFormatError(f"record {i} ({rec.TAG}) goes back in time: {rec.t} < {last}")
        last = rec.t


def _atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_log(records: Iterable[_Record], path) -> None:
    records = list(records)
    _check_order(records)
    lines = [LOG_HEADER] + [format_record(r) for r in records]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_log(path) -> list[_Record]:
    records = []
    last = -np.inf
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != LOG_HEADER:
            raise LogFormatError(f"line 1: expected header {LOG_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            rec = parse_record(line, lineno)
            if rec.t < last:
                raise LogFormatError(f"line {lineno}: timestamp {rec.t} precedes {last}")
            last = rec.t
            records.append(rec)
    return records


def estimate_record(est: RelativeEstimator) -> EstimateRecord:
    p, v, R = est.estimate()
    return EstimateRecord(est.t, p, v, R, np.diag(est.cov))


@dataclass
class ReplayResult:
    estimates: list
    position_errors: np.ndarray  # norm, per estimate with matching truth
    attitude_errors: np.ndarray  # (n, 3) roll/pitch/yaw, rad
    covariance_traces: np.ndarray
    n_updates: int
    n_rejected: int


def replay(
    records: list,
    extrinsics: Extrinsics | None = None,
    process_noise: ProcessNoise | None = None,
    measurement_noise: MeasurementNoiseModel | None = None,
    initial: tuple | None = None,
    gate_probability=None,
) -> ReplayResult:
    """Run a fresh estimator over logged sensor records.

    Filter settings default to the log's ``EXTRINSICS``/``FILTER`` records.
    ``initial = (p0, v0, R0, P0)`` starts the filter at the first IMU record;
    otherwise the log's ``INIT`` record does, and sensor records before it are
    skipped. An estimate is emitted after the last record of each timestamp.
    """
    if not records:
        raise LogFormatError("empty log")
    if not any(isinstance(r, ImuRecord) for r in records):
        raise LogFormatError("log has no IMU records")
    filt = next((r for r in records if isinstance(r, FilterConfigRecord)), None)
    if extrinsics is None:
        ext = next((r for r in records if isinstance(r, ExtrinsicsRecord)), None)
        if ext is None:
            raise LogFormatError("no extrinsics given and none in the log")
        extrinsics = ext.extrinsics()
    world = WorldParams()
    if filt is not None:
        process_noise = process_noise or filt.process_noise()
        measurement_noise = measurement_noise or filt.measurement_noise()
        gate_probability = gate_probability if gate_probability is not None else filt.gate_probability()
        world = filt.world()

    def make(p0, v0, R0, P0, t):
        return RelativeEstimator.start(
            p0,
            v0,
            R0,
            P0,
            t,
            extrinsics=extrinsics,
            process_noise=process_noise,
            measurement_noise=measurement_noise,
            world=world,
            gate_probability=gate_probability,
            R_EF=R_EF,
        )

    R_EF = np.eye(3)
    est = None
    truth = {}
    estimates = []
    n = len(records)
    for i, rec in enumerate(records):
        if isinstance(rec, PassiveAttitudeRecord):
            R_EF = rec.array("rotation")
            if est is not None:
                est.set_passive_attitude(R_EF)
        elif isinstance(rec, InitRecord) and initial is None and est is None:
            est = make(rec.array("p"), rec.array("v"), rec.array("R"), rec.array("P").reshape(9, 9), rec.t)
        elif isinstance(rec, ImuRecord):
            if est is None and initial is not None:
                p0, v0, R0, P0 = initial
                est = make(p0, v0, R0, P0, rec.t)
            if est is not None:
                est.process_imu(rec.sample())
        elif isinstance(rec, MarkerRecord) and est is not None:
            est.process_marker(rec.measurement())
        elif isinstance(rec, TruthRecord):
            truth[rec.t] = rec
        last_of_tick = i + 1 == n or records[i + 1].t != rec.t
        if last_of_tick and est is not None and est.t == rec.t:
            estimates.append(estimate_record(est))

    pos_err, att_err = [], []
    for e in estimates:
        tr = truth.get(e.t)
        if tr is None:
            continue
        pos_err.append(np.linalg.norm(e.array("p") - tr.array("p")))
        att_err.append(attitude_errors(e.array("R"), tr.array("R")))
    return ReplayResult(
        estimates=estimates,
        position_errors=np.array(pos_err),
        attitude_errors=np.array(att_err).reshape(-1, 3),
        covariance_traces=np.array([sum(e.cov_diag) for e in estimates]),
        n_updates=est.n_updates if est else 0,
        n_rejected=est.n_rejected if est else 0,
    )


def attitude_errors(R_est: np.ndarray, R_true: np.ndarray) -> np.ndarray:
    """Roll/pitch/yaw differences (rad), wrapped to ``[-pi, pi)``."""
    return wrap_angle(euler_zyx(R_est) - euler_zyx(R_true))


def attitude_error_vector(R_est: np.ndarray, R_true: np.ndarray) -> np.ndarray:
    """Right-multiplied attitude error ``log(R_est^T R_true)``."""
    return log_map(R_est.T @ R_true)


METRICS_COLUMNS = [
    "run",
    "seed",
    "success",
    "time_to_dock_s",
    "switchover_time_s",
    "trigger_time_s",
    "onboard_steps",
    "pos_err_p50_m",
    "pos_err_p99_m",
    "pos_err_max_m",
    "in_range_steps",
    "in_range_pos_err_p50_m",
    "in_range_pos_err_max_m",
    "yaw_err_p95_deg",
    "rollpitch_err_p50_deg",
    "yaw_err_p50_deg",
    "mean_nees",
    "n_updates",
]
METRICS_SCHEMA_VERSION = 1


def write_metrics_csv(rows: list[dict], path) -> None:
    """CSV with a ``# schema`` comment line, the column header and one row per
    entry; missing values are written empty."""
    buf = io.StringIO()
    buf.write(f"# reldock metrics schema {METRICS_SCHEMA_VERSION}\n")
    w = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _csv_value(row.get(k)) for k in METRICS_COLUMNS})
    _atomic_write_text(Path(path), buf.getvalue())


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6g}"
    return v


def read_metrics_csv(path) -> list[dict]:
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# reldock metrics schema"):
            raise LogFormatError("missing metrics schema line")
        return list(csv.DictReader(f))


TRACE_COLUMNS = [
    "t", "phase",
    "p_x", "p_y", "p_z", "p_hat_x", "p_hat_y", "p_hat_z",
    "roll", "pitch", "yaw", "roll_hat", "pitch_hat", "yaw_hat",
]  # fmt: skip


def write_trace_csv(records: list, path) -> None:
    """Estimate-vs-truth trace (one row per timestamp with truth), angles in deg."""
    truth = {r.t: r for r in records if isinstance(r, TruthRecord)}
    est = {r.t: r for r in records if isinstance(r, EstimateRecord)}
    buf = [f"# reldock trace schema {METRICS_SCHEMA_VERSION}", ",".join(TRACE_COLUMNS)]
    for t, tr in truth.items():
        e = est.get(t)
        eul = np.degrees(euler_zyx(tr.array("R")))
        if e is not None:
            p_hat = e.array("p")
            eul_hat = np.degrees(euler_zyx(e.array("R")))
        else:
            p_hat = eul_hat = np.full(3, np.nan)
        vals = [t, tr.phase[0], *tr.p, *p_hat, *eul, *eul_hat]
        buf.append(",".join("" if np.isnan(x) else f"{x:.9g}" for x in vals))
    _atomic_write_text(Path(path), "\n".join(buf) + "\n")


REPLAY_COLUMNS = [
    "t",
    "p_hat_x", "p_hat_y", "p_hat_z",
    "pos_err_m", "roll_err_deg", "pitch_err_deg", "yaw_err_deg",
    "cov_trace",
]  # fmt: skip


def write_replay_csv(records: list, result: ReplayResult, path) -> None:
    """One row per replayed estimate; error columns are empty where the log
    has no truth at that timestamp."""
    truth = {r.t: r for r in records if isinstance(r, TruthRecord)}
    buf = io.StringIO()
    buf.write(f"# reldock replay schema {METRICS_SCHEMA_VERSION}\n")
    buf.write(",".join(REPLAY_COLUMNS) + "\n")
    for e in result.estimates:
        tr = truth.get(e.t)
        if tr is not None:
            err = [float(np.linalg.norm(e.array("p") - tr.array("p")))]
            err += list(np.degrees(attitude_errors(e.array("R"), tr.array("R"))))
        else:
            err = [np.nan] * 4
        vals = [e.t, *e.p, *err, sum(e.cov_diag)]
        buf.write(",".join("" if np.isnan(x) else f"{x:.9g}" for x in vals) + "\n")
    _atomic_write_text(Path(path), buf.getvalue())
