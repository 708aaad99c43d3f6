"""Closed-loop docking experiment and Monte-Carlo driver.

Phases run strictly forward::

    OFFBOARD -> ONBOARD -> ASCENT -> DROP -> DOCKED [-> UNDOCKED]
                                   \\-> FAILED (from any phase)

* OFFBOARD: the active vehicle flies on ground truth ("motion capture") to a
  point below the passive one.
* ONBOARD: starts at the first marker detection. The estimator is initialized
  from the offboard state and the active vehicle is controlled from its
  output only.
* ASCENT: after ``docking.settle_time`` the relative setpoint ramps upward.
* DROP: the docking criterion, evaluated on the estimate, held for
  ``thresholds.trigger_dwell``; the passive vehicle cuts its motors and the
  active one returns to offboard control.
* DOCKED: the falling legs reached the platform within the capture tolerance.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import chi2

from .config import ScenarioConfig
from .dynamics import (
    Setpoint,
    VehicleTruth,
    WrenchInput,
    compute_control,
    inject_disturbance,
    step_dynamics,
)
from .estimator import EstimatorState, RelativeEstimator, WorldParams
from .geometry import euler_zyx, log_map, wrap_angle
from .io import (
    EstimateRecord,
    ExtrinsicsRecord,
    FilterConfigRecord,
    ImuRecord,
    InitRecord,
    MarkerRecord,
    PassiveAttitudeRecord,
    TruthRecord,
)
from .sensors import NotVisible, rng_stream, synthesize_imu, synthesize_marker_measurement


class Phase(enum.IntEnum):
    OFFBOARD = 0
    ONBOARD = 1
    ASCENT = 2
    DROP = 3
    DOCKED = 4
    UNDOCKED = 5
    FAILED = 6


ONBOARD_PHASES = (Phase.ONBOARD, Phase.ASCENT)


@dataclass(frozen=True)
class DockingThresholds:
    vertical_gap_max: float = 0.15
    horizontal_offset_max: float = 0.025

    def __post_init__(self):
        if not (self.vertical_gap_max > 0 and self.horizontal_offset_max > 0):
            raise ValueError("docking thresholds must be positive")


def vertical_gap(p, platform_height: float, leg_length: float) -> float:
    """Gap between the legs of the upper vehicle and the platform of the lower
    one, for relative position ``p`` (lower minus upper)."""
    return -p[2] - platform_height - leg_length


def docking_criterion(gap: float, p, thresholds: DockingThresholds) -> bool:
    """True iff the vertical gap and the horizontal offset are both in range."""
    return abs(gap) <= thresholds.vertical_gap_max and math.hypot(p[0], p[1]) <= thresholds.horizontal_offset_max


@dataclass
class RunMetrics:
    seed: int
    success: bool = False
    failure_reason: str = ""
    time_to_dock: float = math.nan
    switchover_time: float = math.nan
    trigger_time: float = math.nan
    n_updates: int = 0
    # per onboard timestep
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    position_errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    attitude_errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))  # roll, pitch, yaw (rad)
    in_range: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    nees: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def position_error_norms(self) -> np.ndarray:
        return np.linalg.norm(self.position_errors, axis=1)

    @property
    def max_in_range_error(self) -> float:
        e = self.position_error_norms[self.in_range]
        return float(e.max()) if e.size else math.nan

    def summary(self) -> dict:
        e = self.position_error_norms
        ir = e[self.in_range]
        att = np.degrees(np.abs(self.attitude_errors))

        def q(a, pct):
            return float(np.percentile(a, pct)) if a.size else math.nan

        return {
            "seed": self.seed,
            "success": self.success,
            "time_to_dock_s": self.time_to_dock,
            "switchover_time_s": self.switchover_time,
            "trigger_time_s": self.trigger_time,
            "onboard_steps": int(e.size),
            "pos_err_p50_m": q(e, 50),
            "pos_err_p99_m": q(e, 99),
            "pos_err_max_m": float(e.max()) if e.size else math.nan,
            "in_range_steps": int(ir.size),
            "in_range_pos_err_p50_m": q(ir, 50),
            "in_range_pos_err_max_m": float(ir.max()) if ir.size else math.nan,
            "yaw_err_p95_deg": q(att[:, 2], 95),
            "rollpitch_err_p50_deg": q(att[:, :2].reshape(-1), 50),
            "yaw_err_p50_deg": q(att[:, 2], 50),
            "mean_nees": float(self.nees.mean()) if self.nees.size else math.nan,
            "n_updates": self.n_updates,
        }


@dataclass
class RunResult:
    metrics: RunMetrics
    records: list
    phases: list  # (time, Phase) at every transition


def _error_state(est_state: EstimatorState, p_true, v_true, R_true) -> np.ndarray:
    return np.concatenate([p_true - est_state.p, v_true - est_state.v, log_map(est_state.R_ref.T @ R_true)])


def run_docking(
    cfg: ScenarioConfig,
    *,
    record_log: bool = True,
    estimate_transform: Callable | None = None,
) -> RunResult:
    """Simulate one docking attempt.

    ``estimate_transform(p, v, R) -> (p, v, R)`` is applied to the estimator
    output before it reaches the controller and the docking trigger (for
    fault-injection tests); metrics always use the raw estimate.
    """
    imu_rate = cfg.rates.imu
    substeps = int(round(cfg.rates.physics / imu_rate))
    dt_phys = 1.0 / cfg.rates.physics
    n_ticks = int(math.floor(cfg.duration * imu_rate + 1e-9))

    extrinsics = cfg.rig()
    camera = cfg.camera_model()
    proc_noise = cfg.process_noise()
    meas_noise = cfg.measurement_noise()
    world = WorldParams()
    gravity = world.gravity
    truth_imu_noise = proc_noise if cfg.sensor_noise else None
    truth_meas_noise = meas_noise if cfg.sensor_noise else None
    disturbance = cfg.disturbance_model()
    if not cfg.sensor_noise:
        disturbance = replace(disturbance, noise_std=0.0)
    gains = cfg.gains()
    active_params = cfg.vehicle_params("active")
    passive_params = cfg.vehicle_params("passive")
    thresholds = DockingThresholds(cfg.thresholds.vertical_gap_max, cfg.thresholds.horizontal_offset_max)
    geo = cfg.geometry
    platform, legs = geo.platform_height, geo.leg_length
    stack_offset = platform + legs

    rng_imu = rng_stream(cfg.seed, 0)
    rng_cam = rng_stream(cfg.seed, 1)
    rng_dist = rng_stream(cfg.seed, 2)

    home = np.array(geo.passive_position, dtype=float)
    passive = VehicleTruth.at_rest(home)
    active = VehicleTruth.at_rest(home + np.array([geo.initial_horizontal_offset, 0.0, -geo.initial_separation]))
    hover_rel = np.array([0.0, 0.0, -geo.initial_separation])
    final_rel_z = -(cfg.docking.final_gap + stack_offset)

    phase = Phase.OFFBOARD
    phases = [(0.0, phase)]
    metrics = RunMetrics(seed=cfg.seed)
    records: list = []
    if record_log:
        records.append(ExtrinsicsRecord.of(extrinsics))
        records.append(FilterConfigRecord.of(proc_noise, meas_noise, cfg.estimator.gate_probability, world))

    est: RelativeEstimator | None = None
    R_EF_msg = passive.R.copy()
    active_wrench = WrenchInput()
    passive_wrench = WrenchInput()
    t_switch = t_cmd = t_dwell = t_phase = None
    hold_point = None
    gyro = np.zeros(3)

    m_times, m_pos, m_att, m_range, m_nees = [], [], [], [], []

    def enter(new_phase, t):
        nonlocal phase, t_phase
        assert new_phase > phase, (phase, new_phase)
        phase = new_phase
        t_phase = t
        phases.append((t, new_phase))

    cam_frame = -1
    att_msg = -1
    for k in range(0, n_ticks + 1):
        t = k / imu_rate
        if k > 0:
            for _ in range(substeps):
                f_d, tau_d = inject_disturbance(active.position - passive.position, disturbance, rng_dist)
                w = replace(active_wrench, f_d=f_d, tau_d=tau_d)
                active = step_dynamics(active, active_params, w, dt_phys, gravity)
                if phase == Phase.DOCKED:
                    passive = _attached(active, stack_offset)
                else:
                    passive = step_dynamics(passive, passive_params, passive_wrench, dt_phys, gravity)
            # pin the clock to the tick instead of the accumulated sum
            active = replace(active, t=t)
            passive = replace(passive, t=t)

        tick: list = []

        frame = int(math.floor(k * cfg.rates.passive_attitude / imu_rate + 1e-9))
        if frame != att_msg:
            att_msg = frame
            R_EF_msg = passive.R.copy()
            if est is not None:
                est.set_passive_attitude(R_EF_msg)
            if record_log:
                tick.append(PassiveAttitudeRecord(t, R_EF_msg))

        imu = synthesize_imu(active, truth_imu_noise, rng_imu, gravity)
        gyro = imu.gyro

        meas = None
        frame = int(math.floor(k * camera.frame_rate / imu_rate + 1e-9))
        if frame != cam_frame and phase < Phase.DROP:
            cam_frame = frame
            out = synthesize_marker_measurement(active, passive, extrinsics, camera, truth_meas_noise, rng_cam)
            if not isinstance(out, NotVisible):
                meas = out

        if phase == Phase.OFFBOARD and meas is not None:
            # switch to onboard estimation, starting from the offboard state
            p0 = active.position - passive.position
            v0 = active.velocity - passive.velocity
            P0 = cfg.initial_covariance()
            est = RelativeEstimator.start(
                p0,
                v0,
                active.R,
                P0,
                t,
                extrinsics=extrinsics,
                process_noise=proc_noise,
                measurement_noise=meas_noise,
                world=world,
                gate_probability=cfg.estimator.gate_probability,
                R_EF=R_EF_msg,
            )
            if record_log:
                tick.append(InitRecord(t, p0, v0, active.R, P0))
            t_switch = t
            metrics.switchover_time = t
            enter(Phase.ONBOARD, t)

        if record_log:
            tick.append(ImuRecord(t, imu.accel, imu.gyro))
            if meas is not None:
                tick.append(MarkerRecord(t, meas.position, meas.rotation))

        onboard = phase in ONBOARD_PHASES
        if onboard:
            est.process_imu(imu)
            if meas is not None:
                est.process_marker(meas)

        p_rel = active.position - passive.position
        v_rel = active.velocity - passive.velocity
        if record_log:
            tick.append(TruthRecord(t, p_rel, v_rel, active.R, float(phase)))
            if onboard:
                p_hat, v_hat, R_hat = est.estimate()
                tick.append(EstimateRecord(t, p_hat, v_hat, R_hat, np.diag(est.cov)))
            records.extend(tick)

        # estimator metrics and docking trigger
        if onboard:
            p_hat, v_hat, R_hat = est.estimate()
            e = _error_state(est.state, p_rel, v_rel, active.R)
            m_times.append(t)
            m_pos.append(p_hat - p_rel)
            m_att.append(wrap_angle(euler_zyx(R_hat) - euler_zyx(active.R)))
            m_nees.append(float(e @ np.linalg.solve(est.cov, e)))
            ctrl_est = (p_hat, v_hat, R_hat)
            if estimate_transform is not None:
                ctrl_est = estimate_transform(*ctrl_est)
            gap_hat = vertical_gap(ctrl_est[0], platform, legs)
            m_range.append(docking_criterion(vertical_gap(p_hat, platform, legs), p_hat, thresholds))

            if phase == Phase.ONBOARD and t - t_switch >= cfg.docking.settle_time - 1e-12:
                t_cmd = t
                enter(Phase.ASCENT, t)
            if phase == Phase.ASCENT:
                if docking_criterion(gap_hat, ctrl_est[0], thresholds):
                    t_dwell = t if t_dwell is None else t_dwell
                    if t - t_dwell >= cfg.thresholds.trigger_dwell - 1e-12:
                        metrics.trigger_time = t
                        hold_point = active.position.copy()
                        passive_wrench = WrenchInput()
                        enter(Phase.DROP, t)
                else:
                    t_dwell = None

        # contact / capture
        if phase == Phase.DROP:
            legs_z = passive.position[2] - legs
            platform_z = active.position[2] + platform
            if legs_z <= platform_z:
                offset = math.hypot(*(passive.position[:2] - active.position[:2]))
                if offset <= cfg.thresholds.capture_tolerance:
                    metrics.success = True
                    metrics.time_to_dock = t
                    active_params = active_params.with_payload(passive_params)
                    passive = _attached(active, stack_offset)
                    enter(Phase.DOCKED, t)
                else:
                    metrics.failure_reason = f"capture missed by {offset:.3f} m"
                    enter(Phase.FAILED, t)
                    break
            elif t - t_phase > 1.0:
                metrics.failure_reason = "no contact after motor stop"
                enter(Phase.FAILED, t)
                break
        elif phase == Phase.DOCKED:
            if not cfg.docking.undock and t - t_phase >= cfg.docking.post_dock_time:
                break
            if cfg.docking.undock and t - t_phase >= cfg.docking.undock_hold:
                active_params = cfg.vehicle_params("active")
                hold_point = hold_point - np.array([0.0, 0.0, geo.initial_separation])
                enter(Phase.UNDOCKED, t)
        elif phase == Phase.UNDOCKED and t - t_phase >= cfg.docking.undock_time:
            break

        # control
        if phase == Phase.OFFBOARD:
            active_wrench = compute_control(
                (p_rel, v_rel, active.R), Setpoint(hover_rel), active_params, gains, active.omega
            )
        elif onboard and phase in ONBOARD_PHASES:
            sp = hover_rel
            v_sp = None
            if phase == Phase.ASCENT:
                z = min(hover_rel[2] + cfg.docking.ascent_speed * (t - t_cmd), final_rel_z)
                sp = np.array([0.0, 0.0, z])
                if z < final_rel_z:
                    v_sp = np.array([0.0, 0.0, cfg.docking.ascent_speed])
            active_wrench = compute_control(ctrl_est, Setpoint(sp), active_params, gains, gyro, v_sp)
        else:
            active_wrench = compute_control(
                (active.position, active.velocity, active.R), Setpoint(hold_point), active_params, gains, active.omega
            )

        if phase in (Phase.OFFBOARD, Phase.ONBOARD, Phase.ASCENT, Phase.UNDOCKED):
            passive_wrench = compute_control(
                (passive.position, passive.velocity, passive.R), Setpoint(home), passive_params, gains, passive.omega
            )
        elif phase in (Phase.DROP, Phase.DOCKED):
            passive_wrench = WrenchInput()
    else:
        if not metrics.success and phase != Phase.FAILED:
            metrics.failure_reason = (
                "marker never detected" if phase == Phase.OFFBOARD else "docking criterion never met"
            )
            enter(Phase.FAILED, n_ticks / imu_rate)

    if est is not None:
        metrics.n_updates = est.n_updates
    metrics.times = np.array(m_times)
    metrics.position_errors = np.array(m_pos).reshape(-1, 3)
    metrics.attitude_errors = np.array(m_att).reshape(-1, 3)
    metrics.in_range = np.array(m_range, dtype=bool)
    metrics.nees = np.array(m_nees)
    return RunResult(metrics=metrics, records=records, phases=phases)


def _attached(active: VehicleTruth, stack_offset: float) -> VehicleTruth:
    return VehicleTruth(
        position=active.position + active.R @ np.array([0.0, 0.0, stack_offset]),
        velocity=active.velocity.copy(),
        acceleration=active.acceleration.copy(),
        R=active.R.copy(),
        omega=active.omega.copy(),
        t=active.t,
    )


def _run_metrics(cfg: ScenarioConfig) -> RunMetrics:
    return run_docking(cfg, record_log=False).metrics


@dataclass
class MonteCarloResult:
    runs: list  # RunMetrics, ordered by run index
    base_seed: int

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.runs) / len(self.runs)

    def pooled(self, name: str) -> np.ndarray:
        parts = [getattr(r, name) for r in self.runs]
        return np.concatenate(parts) if parts else np.zeros(0)

    def aggregate(self) -> dict:
        pos = np.concatenate([r.position_error_norms for r in self.runs])
        ir = np.concatenate([r.position_error_norms[r.in_range] for r in self.runs])
        att = np.degrees(np.abs(np.concatenate([r.attitude_errors for r in self.runs])))
        nees = self.pooled("nees")

        def q(a, pct):
            return float(np.percentile(a, pct)) if a.size else math.nan

        return {
            "runs": len(self.runs),
            "successes": sum(r.success for r in self.runs),
            "success_rate": self.success_rate,
            "pos_err_p50_m": q(pos, 50),
            "pos_err_p99_m": q(pos, 99),
            "pos_err_max_m": float(pos.max()) if pos.size else math.nan,
            "frac_pos_err_below_10cm": float(np.mean(pos < 0.10)) if pos.size else math.nan,
            "in_range_steps": int(ir.size),
            "in_range_pos_err_p50_m": q(ir, 50),
            "in_range_pos_err_p95_m": q(ir, 95),
            "in_range_pos_err_max_m": float(ir.max()) if ir.size else math.nan,
            "frac_yaw_err_below_5deg": float(np.mean(att[:, 2] < 5.0)) if att.size else math.nan,
            "yaw_err_p50_deg": q(att[:, 2], 50),
            "yaw_err_p95_deg": q(att[:, 2], 95),
            "roll_err_p50_deg": q(att[:, 0], 50),
            "pitch_err_p50_deg": q(att[:, 1], 50),
            "rollpitch_err_p50_deg": q(att[:, :2].reshape(-1), 50),
            "mean_nees": float(nees.mean()) if nees.size else math.nan,
            "mean_time_to_dock_s": float(np.nanmean([r.time_to_dock for r in self.runs]))
            if any(r.success for r in self.runs)
            else math.nan,
        }

    def rows(self) -> list[dict]:
        """Per-run summary rows followed by one aggregate row (``run = "all"``)."""
        out = []
        for i, r in enumerate(self.runs):
            row = r.summary()
            row["run"] = i
            out.append(row)
        agg = self.aggregate()
        out.append(
            {
                "run": "all",
                "seed": self.base_seed,
                "success": f"{agg['successes']}/{agg['runs']}",
                "time_to_dock_s": agg["mean_time_to_dock_s"],
                "onboard_steps": sum(r.summary()["onboard_steps"] for r in self.runs),
                "pos_err_p50_m": agg["pos_err_p50_m"],
                "pos_err_p99_m": agg["pos_err_p99_m"],
                "pos_err_max_m": agg["pos_err_max_m"],
                "in_range_steps": agg["in_range_steps"],
                "in_range_pos_err_p50_m": agg["in_range_pos_err_p50_m"],
                "in_range_pos_err_max_m": agg["in_range_pos_err_max_m"],
                "yaw_err_p95_deg": agg["yaw_err_p95_deg"],
                "rollpitch_err_p50_deg": agg["rollpitch_err_p50_deg"],
                "yaw_err_p50_deg": agg["yaw_err_p50_deg"],
                "mean_nees": agg["mean_nees"],
                "n_updates": sum(r.n_updates for r in self.runs),
            }
        )
        return out


def run_seed(cfg: ScenarioConfig, index: int) -> ScenarioConfig:
    """Config of Monte-Carlo run ``index``: seed = base seed + index."""
    return replace(cfg, seed=cfg.seed + index)


def run_monte_carlo(cfg: ScenarioConfig, n_runs: int, workers: int = 1) -> MonteCarloResult:
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    cfgs = [run_seed(cfg, i) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_metrics, cfgs))
    else:
        runs = [_run_metrics(c) for c in cfgs]
    return MonteCarloResult(runs=runs, base_seed=cfg.seed)


def nees_interval(dof: int, n_runs: int, confidence: float = 0.95) -> tuple[float, float]:
    """Two-sided bounds for the run-averaged NEES of a consistent filter."""
    a = (1.0 - confidence) / 2.0
    return chi2.ppf(a, dof * n_runs) / n_runs, chi2.ppf(1.0 - a, dof * n_runs) / n_runs
