"""Rigid-body truth model for both vehicles, a cascaded PD controller, and a
synthetic downwash disturbance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import GRAVITY
from .geometry import cross3, exp_map, reorthonormalize, vee


@dataclass(frozen=True)
class VehicleTruth:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    R: np.ndarray  # body-to-inertial rotation
    omega: np.ndarray  # body rates, body frame
    t: float = 0.0

    @classmethod
    def at_rest(cls, position, R=None, t: float = 0.0) -> "VehicleTruth":
        return cls(
            position=np.asarray(position, dtype=float),
            velocity=np.zeros(3),
            acceleration=np.zeros(3),
            R=np.eye(3) if R is None else np.asarray(R, dtype=float),
            omega=np.zeros(3),
            t=t,
        )


def disk_inertia(mass: float, radius: float) -> np.ndarray:
    """Thin uniform disk about its center, axis along body z."""
    i = mass * radius**2 / 4.0
    return np.diag([i, i, 2.0 * i])


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    inertia: np.ndarray
    max_thrust: float
    max_torque: float
    inertia_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=float)
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "inertia_inv", np.linalg.inv(J))

    @classmethod
    def active(cls) -> "VehicleParams":
        # 825 g, 165 mm arms; the disk inertia is an approximation
        return cls(0.825, disk_inertia(0.825, 0.165), max_thrust=2.5 * 0.825 * 9.80665, max_torque=0.5)

    @classmethod
    def passive(cls) -> "VehicleParams":
        # 160 g, 58 mm arms
        return cls(0.160, disk_inertia(0.160, 0.058), max_thrust=2.5 * 0.160 * 9.80665, max_torque=0.05)

    def with_payload(self, other: "VehicleParams") -> "VehicleParams":
        """Combined vehicle after docking (payload stacked on the body axis)."""
        return VehicleParams(
            self.mass + other.mass,
            self.inertia + other.inertia,
            self.max_thrust,
            self.max_torque,
        )


@dataclass(frozen=True)
class WrenchInput:
    f_p: np.ndarray = field(default_factory=lambda: np.zeros(3))  # inertial frame, N
    tau_p: np.ndarray = field(default_factory=lambda: np.zeros(3))  # body frame, N m
    f_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class Setpoint:
    position: np.ndarray
    yaw: float = 0.0


def _angular_acceleration(J, J_inv, omega, tau):
    return J_inv @ (tau - cross3(omega, J @ omega))


def step_dynamics(
    truth: VehicleTruth,
    params: VehicleParams,
    wrench: WrenchInput,
    dt: float,
    gravity=GRAVITY,
) -> VehicleTruth:
    """Advance one vehicle by ``dt``.

    Translation uses semi-implicit Euler. Body rates are integrated with RK4
    under a held torque, then the attitude is advanced by ``R exp(omega dt)``
    and re-orthonormalized.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    a = (wrench.f_p + wrench.f_d) / params.mass + gravity
    v = truth.velocity + a * dt
    p = truth.position + v * dt

    J = params.inertia
    J_inv = params.inertia_inv
    tau = wrench.tau_p + wrench.tau_d
    w0 = truth.omega
    k1 = _angular_acceleration(J, J_inv, w0, tau)
    k2 = _angular_acceleration(J, J_inv, w0 + 0.5 * dt * k1, tau)
    k3 = _angular_acceleration(J, J_inv, w0 + 0.5 * dt * k2, tau)
    k4 = _angular_acceleration(J, J_inv, w0 + dt * k3, tau)
    w = w0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    R = reorthonormalize(truth.R @ exp_map(w * dt))
    return VehicleTruth(position=p, velocity=v, acceleration=a, R=R, omega=w, t=truth.t + dt)


@dataclass(frozen=True)
class ControlGains:
    """Position gains act on acceleration (1/s^2, 1/s); attitude gains on
    angular acceleration so they scale with the vehicle inertia."""

    kp_pos: tuple = (9.0, 9.0, 9.0)
    kd_pos: tuple = (5.0, 5.0, 5.0)
    kp_att: tuple = (400.0, 400.0, 150.0)
    kd_att: tuple = (40.0, 40.0, 25.0)
    max_tilt: float = math.radians(30.0)


def compute_control(
    estimate,
    setpoint: Setpoint,
    params: VehicleParams,
    gains: ControlGains,
    omega=None,
    velocity_setpoint=None,
    gravity=GRAVITY,
) -> WrenchInput:
    """Cascaded PD: position error to desired force, force direction and yaw to
    desired attitude, attitude error to torque. Outputs are saturated.

    ``estimate`` is ``(p, v, R)``; ``omega`` the measured body rates.
    """
    p, v, R = estimate
    omega = np.zeros(3) if omega is None else np.asarray(omega, dtype=float)
    v_des = np.zeros(3) if velocity_setpoint is None else velocity_setpoint

    a_des = -np.asarray(gains.kp_pos) * (p - setpoint.position) - np.asarray(gains.kd_pos) * (v - v_des)
    f_des = params.mass * (a_des - gravity)
    # limit tilt of the commanded force
    horiz = math.hypot(f_des[0], f_des[1])
    max_h = max(f_des[2], 0.0) * math.tan(gains.max_tilt)
    if horiz > max_h:
        scale = max_h / horiz if horiz > 0 else 0.0
        f_des = np.array([f_des[0] * scale, f_des[1] * scale, f_des[2]])

    b3 = R[:, 2]
    thrust = min(max(float(f_des @ b3), 0.0), params.max_thrust)

    n = math.sqrt(float(f_des @ f_des))
    b3_des = f_des / n if n > 1e-9 else np.array([0.0, 0.0, 1.0])
    b1_c = np.array([math.cos(setpoint.yaw), math.sin(setpoint.yaw), 0.0])
    b2_des = cross3(b3_des, b1_c)
    b2_des /= math.sqrt(float(b2_des @ b2_des))
    b1_des = cross3(b2_des, b3_des)
    R_des = np.column_stack([b1_des, b2_des, b3_des])

    e_R = 0.5 * vee(R_des.T @ R - R.T @ R_des)
    J = params.inertia
    ang_acc = -np.asarray(gains.kp_att) * e_R - np.asarray(gains.kd_att) * omega
    tau = J @ ang_acc + cross3(omega, J @ omega)
    tau = np.clip(tau, -params.max_torque, params.max_torque)
    return WrenchInput(f_p=thrust * b3, tau_p=tau)


@dataclass(frozen=True)
class DisturbanceConfig:
    """Axisymmetric downwash from the vehicle above.

    The downward force equals ``peak_force`` directly below the upper vehicle
    for vertical gaps up to ``reference_gap``, decays as ``(reference_gap /
    gap)^2`` beyond it, and as a Gaussian of width ``radius`` with lateral
    offset. ``noise_std`` adds white force noise on every axis.
    """

    enabled: bool = True
    peak_force: float = 0.15  # N
    radius: float = 0.06  # m
    reference_gap: float = 0.3  # m
    noise_std: float = 0.02  # N

    def __post_init__(self):
        if self.peak_force < 0 or self.radius <= 0 or self.reference_gap <= 0 or self.noise_std < 0:
            raise ValueError("invalid disturbance parameters")


def inject_disturbance(
    relative_position, model: DisturbanceConfig, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Disturbance ``(f_d, tau_d)`` on the lower vehicle at ``relative_position``
    (lower minus upper, inertial frame)."""
    if not model.enabled:
        return np.zeros(3), np.zeros(3)
    p = np.asarray(relative_position, dtype=float)
    gap = -p[2]
    f = np.zeros(3)
    if gap > 0.0:
        r2 = p[0] ** 2 + p[1] ** 2
        vertical = min(1.0, (model.reference_gap / gap) ** 2)
        f[2] = -model.peak_force * vertical * math.exp(-r2 / (2.0 * model.radius**2))
    if rng is not None and model.noise_std > 0:
        f = f + rng.normal(0.0, model.noise_std, 3)
    return f, np.zeros(3)
