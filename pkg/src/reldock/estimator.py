"""Error-state EKF for the pose of an active multirotor relative to a passive one.

The nine-dimensional error state is ordered ``(p, v, delta)``:

* ``p`` relative position of the active body w.r.t. the passive body, in the
  inertial frame E (m)
* ``v`` relative velocity in E (m/s)
* ``delta`` attitude error of the active body (rad), applied on the right of
  the reference attitude: ``R_EQ = R_ref @ exp(delta)``

``delta`` is folded into ``R_ref`` and reset to zero at the end of every
prediction and every measurement update, with the covariance realigned by
``T(delta) = diag(I, I, exp(-skew(delta) / 2))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .geometry import cross3, exp_map, is_rotation, log_map, skew

GRAVITY = np.array([0.0, 0.0, -9.80665])
EYE3 = np.eye(3)
EYE9 = np.eye(9)
MAX_INNOVATION_CONDITION = 1e12


class EstimatorError(ValueError):
    pass


class MeasurementRejected(EstimatorError):
    """A camera measurement could not be fused; the filter state is untouched."""


def _vec3(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise EstimatorError(f"{name} must have 3 components")
    if not np.all(np.isfinite(a)):
        raise EstimatorError(f"{name} is not finite")
    return a


def _rotation(R, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, 1e-6):
        raise EstimatorError(f"{name} is not a valid rotation matrix")
    return R


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: np.ndarray  # proper acceleration in the body frame, m/s^2
    gyro: np.ndarray  # body rates, rad/s


@dataclass(frozen=True)
class RelativePoseMeasurement:
    """Marker position in the camera frame and marker orientation ``R_MC``."""

    t: float
    position: np.ndarray
    rotation: np.ndarray


@dataclass(frozen=True)
class Extrinsics:
    """Fixed rig geometry.

    ``t_QC`` is the displacement from the camera origin to the body origin,
    expressed in the camera frame; ``t_FM`` is the displacement from the marker
    origin to the passive body origin, expressed in the passive body frame.
    """

    R_CQ: np.ndarray = field(default_factory=lambda: np.eye(3))
    R_MF: np.ndarray = field(default_factory=lambda: np.diag([1.0, -1.0, -1.0]))
    t_QC: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -0.03]))
    t_FM: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.02]))

    def __post_init__(self):
        object.__setattr__(self, "R_CQ", _rotation(self.R_CQ, "R_CQ"))
        object.__setattr__(self, "R_MF", _rotation(self.R_MF, "R_MF"))
        object.__setattr__(self, "t_QC", _vec3(self.t_QC, "t_QC"))
        object.__setattr__(self, "t_FM", _vec3(self.t_FM, "t_FM"))

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.eye(3), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class ProcessNoise:
    """Per-sample IMU noise standard deviations."""

    sigma_accel: float = 0.5  # m/s^2
    sigma_gyro: float = 0.1  # rad/s

    def __post_init__(self):
        if not (self.sigma_accel > 0 and self.sigma_gyro > 0):
            raise EstimatorError("process noise standard deviations must be positive")

    def matrix(self, dt: float) -> np.ndarray:
        """Discrete process noise added per prediction step of length ``dt``.

        White per-sample noise of standard deviation sigma held over ``dt``
        perturbs velocity (and attitude) by ``sigma * dt``.
        """
        qa = (self.sigma_accel * dt) ** 2
        qw = (self.sigma_gyro * dt) ** 2
        return np.diag([0.0, 0.0, 0.0, qa, qa, qa, qw, qw, qw])


@dataclass(frozen=True)
class MeasurementNoiseModel:
    """Camera-marker noise: position variance grows with the square of the
    optical-axis distance, orientation variance is constant."""

    position_var: tuple = (0.2**2, 0.2**2, 0.3**2)  # m^2 at reference_distance
    attitude_var: tuple = (0.35**2, 0.35**2, 0.05**2)  # rad^2
    reference_distance: float = 1.0
    min_distance: float = 0.05

    def __post_init__(self):
        if min(self.position_var) < 0 or min(self.attitude_var) < 0:
            raise EstimatorError("noise variances must be nonnegative")

    def covariance_at(self, z: float) -> tuple[np.ndarray, np.ndarray]:
        if not z > 0:
            raise EstimatorError(f"optical-axis distance must be positive, got {z}")
        scale = (z / self.reference_distance) ** 2
        return np.diag(np.asarray(self.position_var) * scale), np.diag(self.attitude_var)


@dataclass(frozen=True)
class WorldParams:
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())


@dataclass(frozen=True)
class EstimatorState:
    p: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    R_ref: np.ndarray
    t: float = 0.0


def _check_cov(P, tol: float = 1e-10) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (9, 9) or not np.all(np.isfinite(P)):
        raise EstimatorError("covariance must be a finite 9x9 matrix")
    if np.abs(P - P.T).max() > tol * max(1.0, np.abs(P).max()):
        raise EstimatorError("covariance is not symmetric")
    if np.linalg.eigvalsh(P).min() < -tol:
        raise EstimatorError("covariance is not positive semidefinite")
    return P


def default_initial_covariance() -> np.ndarray:
    return np.diag([0.05**2] * 3 + [0.05**2] * 3 + [0.1**2] * 3)


def initialize(p0, v0, R0, P0=None, t: float = 0.0) -> tuple[EstimatorState, np.ndarray]:
    P = _check_cov(default_initial_covariance() if P0 is None else P0)
    state = EstimatorState(
        p=_vec3(p0, "p0"),
        v=_vec3(v0, "v0"),
        delta=np.zeros(3),
        R_ref=_rotation(R0, "R0").copy(),
        t=float(t),
    )
    return state, P.copy()


def current_estimate(state: EstimatorState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(p, v, R_EQ)`` with ``R_EQ = R_ref @ exp(delta)``."""
    R = state.R_ref @ exp_map(state.delta) if np.any(state.delta) else state.R_ref.copy()
    return state.p.copy(), state.v.copy(), R


def _require_reset(state: EstimatorState):
    if np.any(state.delta != 0.0):
        raise EstimatorError("attitude error must be zero between filter steps")


def alignment_matrix(delta) -> np.ndarray:
    """``T(delta)`` keeping the covariance aligned with a moved reference."""
    T = np.eye(9)
    T[6:, 6:] = exp_map(-0.5 * np.asarray(delta, dtype=float))
    return T


def propagate_mean(state: EstimatorState, imu: ImuSample, dt: float, gravity=GRAVITY):
    """Mean propagation before the attitude-error reset: ``(p, v, delta)``."""
    acc, gyro = imu.accel, imu.gyro
    R = state.R_ref @ exp_map(state.delta)
    p = state.p + state.v * dt
    v = state.v + (R @ acc + gravity) * dt
    delta = state.delta + (gyro - 0.5 * cross3(gyro, state.delta)) * dt
    return p, v, delta


def process_jacobian(state: EstimatorState, imu: ImuSample, dt: float) -> np.ndarray:
    """Jacobian of :func:`propagate_mean` w.r.t. the error state at ``delta = 0``.

    The velocity/attitude block is ``-R_ref skew(accel) dt``, the derivative of
    ``R_ref exp(delta) accel`` for a right-multiplied attitude error.
    """
    A = np.eye(9)
    A[0:3, 3:6] = EYE3 * dt
    A[3:6, 6:9] = -state.R_ref @ skew(imu.accel) * dt
    A[6:9, 6:9] = EYE3 - 0.5 * skew(imu.gyro) * dt
    return A


def _check_imu(imu: ImuSample):
    if not (np.all(np.isfinite(imu.accel)) and np.all(np.isfinite(imu.gyro))):
        raise EstimatorError("non-finite IMU sample")


def predict(
    state: EstimatorState,
    cov: np.ndarray,
    imu: ImuSample,
    dt: float,
    noise: ProcessNoise,
    world: WorldParams | None = None,
) -> tuple[EstimatorState, np.ndarray]:
    if not dt > 0:
        raise EstimatorError(f"time step must be positive, got {dt}")
    _check_imu(imu)
    _require_reset(state)
    gravity = GRAVITY if world is None else world.gravity

    p, v, delta = propagate_mean(state, imu, dt, gravity)
    A = process_jacobian(state, imu, dt)
    P = A @ cov @ A.T + noise.matrix(dt)

    T = alignment_matrix(delta)
    P = T @ P @ T.T
    P = 0.5 * (P + P.T)
    new = EstimatorState(p=p, v=v, delta=np.zeros(3), R_ref=state.R_ref @ exp_map(delta), t=state.t + dt)
    return new, P


def predicted_relative_orientation(state: EstimatorState, extrinsics: Extrinsics, R_EF) -> np.ndarray:
    """Reference marker-in-camera orientation ``R_MF R_EF^T R_ref R_CQ^T``."""
    return extrinsics.R_MF @ R_EF.T @ state.R_ref @ extrinsics.R_CQ.T


def predicted_marker_position(state: EstimatorState, extrinsics: Extrinsics, R_EF) -> np.ndarray:
    """Noise-free marker position in the camera frame at the current estimate."""
    _, _, R = current_estimate(state)
    w = state.p + R_EF @ extrinsics.t_FM
    return -extrinsics.R_CQ @ R.T @ w + extrinsics.t_QC


def attitude_innovation(meas: RelativePoseMeasurement, reference: np.ndarray) -> np.ndarray:
    """Rotation vector of ``reference^T R_MC``; refuses the half-turn ambiguity."""
    sigma, ambiguous = log_map(reference.T @ meas.rotation, with_flag=True)
    if ambiguous:
        raise MeasurementRejected("attitude innovation is a half turn (sign ambiguous)")
    return sigma


def measurement_jacobian(state: EstimatorState, extrinsics: Extrinsics, R_EF) -> np.ndarray:
    """6x9 Jacobian of (marker position, attitude innovation) at ``delta = 0``."""
    _require_reset(state)
    RcRt = extrinsics.R_CQ @ state.R_ref.T
    w = state.p + R_EF @ extrinsics.t_FM
    H = np.zeros((6, 9))
    H[0:3, 0:3] = -RcRt
    H[0:3, 6:9] = -extrinsics.R_CQ @ skew(state.R_ref.T @ w)
    H[3:6, 6:9] = extrinsics.R_CQ
    return H


@dataclass(frozen=True)
class UpdateInfo:
    innovation: np.ndarray
    innovation_cov: np.ndarray
    mahalanobis2: float
    distance: float


def update(
    state: EstimatorState,
    cov: np.ndarray,
    meas: RelativePoseMeasurement,
    extrinsics: Extrinsics,
    R_EF,
    noise_model: MeasurementNoiseModel,
    gate_probability: float | None = None,
    return_info: bool = False,
):
    """Fuse one camera-marker measurement.

    ``gate_probability`` enables chi-square innovation gating (e.g. 0.999);
    by default every measurement is fused.
    """
    _require_reset(state)
    if meas.t < state.t:
        raise MeasurementRejected(f"stale measurement at t={meas.t} (filter at t={state.t})")
    R_EF = np.asarray(R_EF, dtype=float)

    pos_pred = predicted_marker_position(state, extrinsics, R_EF)
    sigma = attitude_innovation(meas, predicted_relative_orientation(state, extrinsics, R_EF))
    e = np.concatenate([meas.position - pos_pred, sigma])

    z = max(pos_pred[2], noise_model.min_distance)
    Sigma_s, Sigma_R = noise_model.covariance_at(z)
    Rm = np.zeros((6, 6))
    Rm[0:3, 0:3] = Sigma_s
    Rm[3:6, 3:6] = Sigma_R

    H = measurement_jacobian(state, extrinsics, R_EF)
    PHt = cov @ H.T
    S = H @ PHt + Rm
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_INNOVATION_CONDITION:
        raise MeasurementRejected("innovation covariance is singular")
    m2 = float(e @ np.linalg.solve(S, e))
    if gate_probability is not None and m2 > chi2.ppf(gate_probability, 6):
        raise MeasurementRejected(f"innovation gated (Mahalanobis^2 = {m2:.1f})")

    K = np.linalg.solve(S, PHt.T).T
    dx = K @ e
    P = (EYE9 - K @ H) @ cov
    P = 0.5 * (P + P.T)

    delta_m = dx[6:9]
    T = alignment_matrix(delta_m)
    P = T @ P @ T.T
    P = 0.5 * (P + P.T)
    new = EstimatorState(
        p=state.p + dx[0:3],
        v=state.v + dx[3:6],
        delta=np.zeros(3),
        R_ref=state.R_ref @ exp_map(delta_m),
        t=max(state.t, meas.t),
    )
    if return_info:
        return new, P, UpdateInfo(e, S, m2, z)
    return new, P


class RelativeEstimator:
    """Stream wrapper: feeds IMU samples, passive-attitude messages and camera
    measurements to the filter in timestamp order.

    The passive attitude is held from the most recent message. Each IMU sample
    is applied over the interval since the previous filter time. Camera
    measurements older than the filter time are dropped.
    """

    def __init__(
        self,
        state: EstimatorState,
        cov: np.ndarray,
        extrinsics: Extrinsics,
        process_noise: ProcessNoise | None = None,
        measurement_noise: MeasurementNoiseModel | None = None,
        world: WorldParams | None = None,
        gate_probability: float | None = None,
        R_EF=None,
    ):
        self.state = state
        self.cov = cov
        self.extrinsics = extrinsics
        self.process_noise = process_noise or ProcessNoise()
        self.measurement_noise = measurement_noise or MeasurementNoiseModel()
        self.world = world or WorldParams()
        self.gate_probability = gate_probability
        self.R_EF = np.eye(3) if R_EF is None else np.asarray(R_EF, dtype=float)
        self.n_updates = 0
        self.n_rejected = 0

    @classmethod
    def start(cls, p0, v0, R0, P0=None, t: float = 0.0, **kwargs) -> "RelativeEstimator":
        state, cov = initialize(p0, v0, R0, P0, t)
        return cls(state, cov, **kwargs)

    @property
    def t(self) -> float:
        return self.state.t

    def set_passive_attitude(self, R_EF):
        self.R_EF = np.asarray(R_EF, dtype=float)

    def process_imu(self, imu: ImuSample):
        dt = imu.t - self.state.t
        if dt <= 0:
            return
        state, cov = predict(self.state, self.cov, imu, dt, self.process_noise, self.world)
        # keep the clock on the sample timestamp instead of an accumulated sum
        self.state = replace(state, t=imu.t)
        self.cov = cov

    def process_marker(self, meas: RelativePoseMeasurement) -> bool:
        try:
            self.state, self.cov = update(
                self.state,
                self.cov,
                meas,
                self.extrinsics,
                self.R_EF,
                self.measurement_noise,
                self.gate_probability,
            )
        except MeasurementRejected:
            self.n_rejected += 1
            return False
        self.n_updates += 1
        return True

    def estimate(self):
        return current_estimate(self.state)
