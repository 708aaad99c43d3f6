"""Synthetic IMU and camera-marker measurements generated from simulator truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import (
    GRAVITY,
    Extrinsics,
    ImuSample,
    MeasurementNoiseModel,
    ProcessNoise,
    RelativePoseMeasurement,
)
from .geometry import exp_map


@dataclass(frozen=True)
class CameraModel:
    fov_half_angle: float = math.radians(30.0)
    frame_rate: float = 30.0
    dropout_probability: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.fov_half_angle < math.pi / 2:
            raise ValueError("fov_half_angle must lie in (0, pi/2)")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ValueError("dropout_probability must lie in [0, 1]")


class NotVisible:
    """Outcome of a camera frame in which the marker was not detected."""

    __slots__ = ("reason",)

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self):
        return f"NotVisible({self.reason!r})"


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for ``seed``; ``keys`` select independent substreams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def noise_covariance_at(z: float, model: MeasurementNoiseModel) -> tuple[np.ndarray, np.ndarray]:
    """Position and orientation noise covariances at optical-axis distance ``z``."""
    return model.covariance_at(z)


def synthesize_imu(truth, noise: ProcessNoise | None, rng: np.random.Generator | None, gravity=GRAVITY) -> ImuSample:
    """Accelerometer/gyro sample from a :class:`~reldock.dynamics.VehicleTruth`.

    ``noise=None`` produces exact readings.
    """
    accel = truth.R.T @ (truth.acceleration - gravity)
    gyro = truth.omega.copy()
    if noise is not None:
        accel = accel + rng.normal(0.0, noise.sigma_accel, 3)
        gyro = gyro + rng.normal(0.0, noise.sigma_gyro, 3)
    return ImuSample(t=truth.t, accel=accel, gyro=gyro)


def marker_pose_in_camera(active, passive, extrinsics: Extrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Exact marker position (camera frame) and orientation ``R_MC`` from truth."""
    p = active.position - passive.position
    w = p + passive.R @ extrinsics.t_FM
    t_MC = -extrinsics.R_CQ @ active.R.T @ w + extrinsics.t_QC
    R_MC = extrinsics.R_MF @ passive.R.T @ active.R @ extrinsics.R_CQ.T
    return t_MC, R_MC


def synthesize_marker_measurement(
    active,
    passive,
    extrinsics: Extrinsics,
    camera: CameraModel,
    noise_model: MeasurementNoiseModel | None,
    rng: np.random.Generator | None,
):
    """One camera frame: a :class:`RelativePoseMeasurement` or :class:`NotVisible`.

    ``noise_model=None`` disables measurement noise. The random stream is
    consumed identically whether or not the marker turns out visible, so
    visibility changes do not shift later samples.
    """
    t_MC, R_MC = marker_pose_in_camera(active, passive, extrinsics)
    if rng is not None:
        u = rng.random()
        n_pos = rng.standard_normal(3)
        n_att = rng.standard_normal(3)
    else:
        u, n_pos, n_att = 1.0, np.zeros(3), np.zeros(3)

    z = t_MC[2]
    if z <= 0.0:
        return NotVisible("behind camera")
    if math.atan2(math.hypot(t_MC[0], t_MC[1]), z) > camera.fov_half_angle:
        return NotVisible("outside field of view")
    if u < camera.dropout_probability:
        return NotVisible("dropout")

    if noise_model is not None:
        Sigma_s, Sigma_R = noise_model.covariance_at(z)
        t_MC = t_MC + np.sqrt(np.diag(Sigma_s)) * n_pos
        R_MC = R_MC @ exp_map(np.sqrt(np.diag(Sigma_R)) * n_att)
    return RelativePoseMeasurement(t=active.t, position=t_MC, rotation=R_MC)
