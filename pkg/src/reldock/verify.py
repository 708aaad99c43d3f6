"""Self-checks behind ``reldock verify``: Jacobians against finite differences,
covariance health over a long randomized soak, and Monte-Carlo NEES
consistency on a static hover scene."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import estimator as ekf
from .dynamics import VehicleTruth
from .estimator import (
    Extrinsics,
    ImuSample,
    MeasurementNoiseModel,
    ProcessNoise,
    RelativePoseMeasurement,
)
from .geometry import exp_map, log_map
from .scenario import nees_interval
from .sensors import CameraModel, NotVisible, rng_stream, synthesize_imu, synthesize_marker_measurement


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_map(axis * rng.uniform(0.0, max_angle))


def random_extrinsics(rng: np.random.Generator) -> Extrinsics:
    return Extrinsics(
        random_rotation(rng), random_rotation(rng), rng.normal(0, 0.05, 3), rng.normal(0, 0.05, 3)
    )


def random_state(rng: np.random.Generator, t: float = 0.0) -> ekf.EstimatorState:
    return ekf.EstimatorState(
        p=rng.normal(0, 0.5, 3), v=rng.normal(0, 0.5, 3), delta=np.zeros(3), R_ref=random_rotation(rng), t=t
    )


def random_covariance(rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    L = rng.normal(0, scale, (9, 9))
    return L @ L.T + 1e-4 * np.eye(9)


def _rel_err(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.linalg.norm(A - B) / max(np.linalg.norm(B), 1.0))


def _perturbed(state: ekf.EstimatorState, dx: np.ndarray) -> ekf.EstimatorState:
    return ekf.EstimatorState(state.p + dx[0:3], state.v + dx[3:6], state.delta + dx[6:9], state.R_ref, state.t)


def fd_process_jacobian(state, imu, dt, step: float = 1e-6) -> np.ndarray:
    """Central differences of the (un-reset) mean propagation."""
    J = np.zeros((9, 9))
    for i in range(9):
        dx = np.zeros(9)
        dx[i] = step
        hi = np.concatenate(ekf.propagate_mean(_perturbed(state, dx), imu, dt))
        lo = np.concatenate(ekf.propagate_mean(_perturbed(state, -dx), imu, dt))
        J[:, i] = (hi - lo) / (2 * step)
    return J


def measurement_model(state, extrinsics: Extrinsics, R_EF) -> np.ndarray:
    """Noise-free (marker position, attitude innovation vector) as a function
    of the error state, with the innovation taken against the reference
    orientation of the unperturbed state."""
    R = state.R_ref @ exp_map(state.delta)
    t_MC = -extrinsics.R_CQ @ R.T @ (state.p + R_EF @ extrinsics.t_FM) + extrinsics.t_QC
    R_MC = extrinsics.R_MF @ R_EF.T @ R @ extrinsics.R_CQ.T
    ref = extrinsics.R_MF @ R_EF.T @ state.R_ref @ extrinsics.R_CQ.T
    return np.concatenate([t_MC, log_map(ref.T @ R_MC)])


def fd_measurement_jacobian(state, extrinsics, R_EF, step: float = 1e-6) -> np.ndarray:
    J = np.zeros((6, 9))
    for i in range(9):
        dx = np.zeros(9)
        dx[i] = step
        hi = measurement_model(_perturbed(state, dx), extrinsics, R_EF)
        lo = measurement_model(_perturbed(state, -dx), extrinsics, R_EF)
        J[:, i] = (hi - lo) / (2 * step)
    return J


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: str
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.4g} ({self.limit}){' ' + self.detail if self.detail else ''}"


def check_jacobians(n_configs: int = 100, seed: int = 0, tol: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_a = worst_h = 0.0
    for _ in range(n_configs):
        state = random_state(rng)
        imu = ImuSample(0.0, rng.normal(0, 3, 3) + np.array([0, 0, 9.8]), rng.normal(0, 1, 3))
        dt = rng.uniform(1e-3, 0.05)
        A = ekf.process_jacobian(state, imu, dt)
        worst_a = max(worst_a, _rel_err(A, fd_process_jacobian(state, imu, dt)))

        ext = random_extrinsics(rng)
        R_EF = random_rotation(rng)
        H = ekf.measurement_jacobian(state, ext, R_EF)
        worst_h = max(worst_h, _rel_err(H, fd_measurement_jacobian(state, ext, R_EF)))
    return [
        CheckResult("process Jacobian vs finite differences", worst_a <= tol, worst_a, f"max rel. error <= {tol:g}"),
        CheckResult(
            "measurement Jacobian vs finite differences", worst_h <= tol, worst_h, f"max rel. error <= {tol:g}"
        ),
    ]


def covariance_soak(n_cycles: int = 100_000, seed: int = 1) -> tuple[float, float]:
    """Alternate predict/update with randomized inputs; return the worst
    asymmetry ``max|P - P^T|`` and the smallest eigenvalue seen."""
    rng = np.random.default_rng(seed)
    ext = random_extrinsics(rng)
    noise = ProcessNoise()
    meas_noise = MeasurementNoiseModel()
    state, P = ekf.initialize(rng.normal(0, 0.3, 3), np.zeros(3), random_rotation(rng), ekf.default_initial_covariance())
    worst_asym = 0.0
    min_eig = np.inf
    check_every = max(1, n_cycles // 2000)
    for k in range(n_cycles):
        imu = ImuSample(state.t, rng.normal(0, 1, 3) + np.array([0, 0, 9.8]), rng.normal(0, 0.5, 3))
        state, P = ekf.predict(state, P, imu, 0.002, noise)
        # random measurement in front of the camera, near the predicted one
        R_EF = random_rotation(rng, 0.3)
        pos = ekf.predicted_marker_position(state, ext, R_EF) + rng.normal(0, 0.05, 3)
        pos[2] = abs(pos[2]) + 0.1
        ref = ekf.predicted_relative_orientation(state, ext, R_EF)
        meas = RelativePoseMeasurement(state.t, pos, ref @ exp_map(rng.normal(0, 0.1, 3)))
        try:
            state, P = ekf.update(state, P, meas, ext, R_EF, meas_noise)
        except ekf.MeasurementRejected:
            pass
        # keep the random walk bounded so the scene stays sensible
        if np.linalg.norm(state.p) > 5 or np.linalg.norm(state.v) > 5:
            state = ekf.EstimatorState(state.p * 0.0, state.v * 0.0, state.delta, state.R_ref, state.t)
        if k % check_every == 0 or k == n_cycles - 1:
            worst_asym = max(worst_asym, float(np.abs(P - P.T).max()))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(P).min()))
    return worst_asym, min_eig


def check_covariance(n_cycles: int = 100_000, seed: int = 1) -> list[CheckResult]:
    asym, eig = covariance_soak(n_cycles, seed)
    return [
        CheckResult(f"covariance symmetry over {n_cycles} cycles", asym <= 1e-10, asym, "max |P - P^T| <= 1e-10"),
        CheckResult(f"covariance PSD over {n_cycles} cycles", eig >= -1e-10, eig, "min eigenvalue >= -1e-10"),
    ]


@dataclass
class HoverRun:
    errors: np.ndarray  # (n, 9) error state at every step
    nees: np.ndarray  # per step
    times: np.ndarray


def hover_run(
    seed: int,
    duration: float = 5.0,
    separation: float = 0.6,
    imu_rate: float = 500.0,
    camera: CameraModel | None = None,
    extrinsics: Extrinsics | None = None,
    process_noise: ProcessNoise | None = None,
    measurement_noise: MeasurementNoiseModel | None = None,
    P0: np.ndarray | None = None,
) -> HoverRun:
    """Static scene: passive vehicle above the active one, both at rest. The
    filter starts from an initial error drawn from its own prior."""
    rng = rng_stream(seed, 10)
    camera = camera or CameraModel(dropout_probability=0.0)
    extrinsics = extrinsics or Extrinsics()
    pn = process_noise or ProcessNoise()
    mn = measurement_noise or MeasurementNoiseModel()
    P0 = ekf.default_initial_covariance() if P0 is None else P0

    R_EF = exp_map((0.02, -0.01, 0.4))
    R_EQ = exp_map((-0.03, 0.02, 0.1))
    passive = VehicleTruth.at_rest((0.0, 0.0, 2.0), R_EF)
    active = VehicleTruth.at_rest((0.01, -0.02, 2.0 - separation), R_EQ)
    p_true = active.position - passive.position

    e0 = np.linalg.cholesky(P0) @ rng.standard_normal(9)
    est = ekf.RelativeEstimator.start(
        p_true - e0[0:3],
        -e0[3:6],
        R_EQ @ exp_map(-e0[6:9]),
        P0,
        0.0,
        extrinsics=extrinsics,
        process_noise=pn,
        measurement_noise=mn,
        R_EF=R_EF,
    )
    n = int(round(duration * imu_rate))
    errs, nees, times = [], [], []
    frame = 0
    for k in range(1, n + 1):
        t = k / imu_rate
        a = VehicleTruth(active.position, active.velocity, active.acceleration, active.R, active.omega, t)
        est.process_imu(synthesize_imu(a, pn, rng))
        f = int(math.floor(k * camera.frame_rate / imu_rate + 1e-9))
        if f != frame:
            frame = f
            m = synthesize_marker_measurement(a, passive, extrinsics, camera, mn, rng)
            if not isinstance(m, NotVisible):
                est.process_marker(m)
        s = est.state
        e = np.concatenate([p_true - s.p, -s.v, log_map(s.R_ref.T @ R_EQ)])
        errs.append(e)
        nees.append(float(e @ np.linalg.solve(est.cov, e)))
        times.append(t)
    return HoverRun(np.array(errs), np.array(nees), np.array(times))


def hover_nees(n_runs: int = 50, duration: float = 5.0, seed: int = 100) -> tuple[float, tuple[float, float]]:
    """Run-averaged NEES at the final step and its 95% acceptance interval."""
    final = [hover_run(seed + i, duration).nees[-1] for i in range(n_runs)]
    return float(np.mean(final)), nees_interval(9, n_runs)


def check_nees(n_runs: int = 50, duration: float = 5.0, seed: int = 100) -> list[CheckResult]:
    value, (lo, hi) = hover_nees(n_runs, duration, seed)
    return [
        CheckResult(
            f"hover NEES, {n_runs}-run average (9 dof)",
            lo <= value <= hi,
            value,
            f"95% chi-square interval [{lo:.3f}, {hi:.3f}]",
        )
    ]


def run_all(quick: bool = False) -> list[CheckResult]:
    results = check_jacobians()
    results += check_covariance(10_000 if quick else 100_000)
    results += check_nees(50, 2.0 if quick else 5.0)
    return results
