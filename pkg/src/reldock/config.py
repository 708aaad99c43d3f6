"""Scenario configuration: nested dataclasses loaded from YAML.

Unknown keys and wrongly typed values raise :class:`ConfigError` naming the
offending key path, e.g. ``camera.frame_rate: expected a number``.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import ControlGains, DisturbanceConfig, VehicleParams, disk_inertia
from .estimator import Extrinsics, MeasurementNoiseModel, ProcessNoise
from .geometry import exp_map
from .sensors import CameraModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RatesConfig:
    imu: float = 500.0
    camera: float = 30.0
    passive_attitude: float = 100.0
    physics: float = 1000.0


@dataclass(frozen=True)
class ImuNoiseConfig:
    sigma_accel: float = 0.5
    sigma_gyro: float = 0.1


@dataclass(frozen=True)
class MarkerNoiseConfig:
    position_std: tuple = (0.2, 0.2, 0.3)  # m at reference_distance
    attitude_std: tuple = (0.35, 0.35, 0.05)  # rad
    reference_distance: float = 1.0
    min_distance: float = 0.05


@dataclass(frozen=True)
class CameraConfig:
    fov_deg: float = 60.0  # full cone angle
    dropout_probability: float = 0.05


@dataclass(frozen=True)
class ExtrinsicsConfig:
    """Rotations given as rotation vectors (rad)."""

    camera_rotvec: tuple = (0.0, 0.0, 0.0)  # R_CQ: camera looks along body +z (up)
    marker_rotvec: tuple = (math.pi, 0.0, 0.0)  # R_MF: marker faces down
    t_QC: tuple = (0.0, 0.0, -0.03)  # camera 3 cm above the body origin
    t_FM: tuple = (0.0, 0.0, 0.02)  # marker 2 cm below the passive body origin


@dataclass(frozen=True)
class VehicleConfig:
    mass: float
    arm_length: float
    max_thrust_ratio: float = 2.5
    max_torque: float = 0.5


@dataclass(frozen=True)
class VehiclesConfig:
    active: VehicleConfig = field(default_factory=lambda: VehicleConfig(0.825, 0.165, 2.5, 0.5))
    passive: VehicleConfig = field(default_factory=lambda: VehicleConfig(0.160, 0.058, 2.5, 0.05))


@dataclass(frozen=True)
class GeometryConfig:
    initial_separation: float = 0.6  # vertical, passive above active
    initial_horizontal_offset: float = 0.5
    passive_position: tuple = (0.0, 0.0, 1.6)
    platform_height: float = 0.05  # docking platform top above the active body origin
    leg_length: float = 0.05  # docking legs below the passive body origin


@dataclass(frozen=True)
class ThresholdsConfig:
    vertical_gap_max: float = 0.15
    horizontal_offset_max: float = 0.025
    capture_tolerance: float = 0.03
    trigger_dwell: float = 0.8


@dataclass(frozen=True)
class DockingConfig:
    settle_time: float = 1.0
    ascent_speed: float = 0.1
    final_gap: float = 0.035
    post_dock_time: float = 0.5
    undock: bool = False
    undock_hold: float = 1.0
    undock_time: float = 5.0


@dataclass(frozen=True)
class EstimatorConfig:
    # the filter starts from the offboard (motion-capture) state
    initial_position_std: float = 0.01
    initial_velocity_std: float = 0.02
    initial_attitude_std: float = 0.02
    gate_probability: float | None = None


@dataclass(frozen=True)
class DisturbanceSection:
    enabled: bool = True
    peak_force: float = 0.15
    radius: float = 0.06
    reference_gap: float = 0.3
    noise_std: float = 0.02


@dataclass(frozen=True)
class ControlConfig:
    kp_pos: tuple = (9.0, 9.0, 9.0)
    kd_pos: tuple = (5.0, 5.0, 5.0)
    kp_att: tuple = (400.0, 400.0, 150.0)
    kd_att: tuple = (40.0, 40.0, 25.0)
    max_tilt_deg: float = 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    duration: float = 30.0
    sensor_noise: bool = True
    rates: RatesConfig = field(default_factory=RatesConfig)
    imu_noise: ImuNoiseConfig = field(default_factory=ImuNoiseConfig)
    marker_noise: MarkerNoiseConfig = field(default_factory=MarkerNoiseConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    extrinsics: ExtrinsicsConfig = field(default_factory=ExtrinsicsConfig)
    vehicles: VehiclesConfig = field(default_factory=VehiclesConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    thresholds: ThresholdsConfig = field(default_factory=ThresholdsConfig)
    docking: DockingConfig = field(default_factory=DockingConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    control: ControlConfig = field(default_factory=ControlConfig)

    def __post_init__(self):
        r = self.rates
        if min(r.imu, r.camera, r.passive_attitude, r.physics) <= 0:
            raise ConfigError("rates: all rates must be positive")
        if not self.duration > 0:
            raise ConfigError("duration: must be positive")
        ratio = r.physics / r.imu
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("rates.physics: must be an integer multiple of rates.imu")

    # builders for domain objects
    def process_noise(self) -> ProcessNoise:
        return ProcessNoise(self.imu_noise.sigma_accel, self.imu_noise.sigma_gyro)

    def measurement_noise(self) -> MeasurementNoiseModel:
        m = self.marker_noise
        return MeasurementNoiseModel(
            tuple(s**2 for s in m.position_std),
            tuple(s**2 for s in m.attitude_std),
            m.reference_distance,
            m.min_distance,
        )

    def camera_model(self) -> CameraModel:
        return CameraModel(math.radians(self.camera.fov_deg) / 2.0, self.rates.camera, self.camera.dropout_probability)

    def rig(self) -> Extrinsics:
        e = self.extrinsics
        return Extrinsics(exp_map(e.camera_rotvec), exp_map(e.marker_rotvec), np.array(e.t_QC), np.array(e.t_FM))

    def vehicle_params(self, which: str) -> VehicleParams:
        v = getattr(self.vehicles, which)
        return VehicleParams(
            v.mass, disk_inertia(v.mass, v.arm_length), v.max_thrust_ratio * v.mass * 9.80665, v.max_torque
        )

    def disturbance_model(self) -> DisturbanceConfig:
        d = self.disturbance
        return DisturbanceConfig(d.enabled, d.peak_force, d.radius, d.reference_gap, d.noise_std)

    def gains(self) -> ControlGains:
        c = self.control
        return ControlGains(c.kp_pos, c.kd_pos, c.kp_att, c.kd_att, math.radians(c.max_tilt_deg))

    def initial_covariance(self) -> np.ndarray:
        e = self.estimator
        return np.diag(
            [e.initial_position_std**2] * 3 + [e.initial_velocity_std**2] * 3 + [e.initial_attitude_std**2] * 3
        )


def _coerce(value, tp, path: str, base=None):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path, base)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ConfigError(f"{path}: expected a list of 3 numbers")
        return tuple(_coerce(v, float, f"{path}[{i}]") for i, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported type")  # pragma: no cover


def _build(cls, data: dict, prefix: str = "", base=None):
    """Instance of ``cls`` with ``data`` layered over ``base`` (or the defaults)."""
    base = cls() if base is None else base
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ConfigError(f"{path}: unknown key")
        kwargs[key] = _coerce(value, hints[key], path, getattr(base, key))
    try:
        return dataclasses.replace(base, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or '<root>'}: {exc}") from None


def config_from_dict(data: dict | None) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {})


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def default_config_text() -> str:
    return resources.files("reldock").joinpath("default_config.yaml").read_text()


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def with_overrides(cfg: ScenarioConfig, **sections) -> ScenarioConfig:
    """``with_overrides(cfg, seed=3, camera={"dropout_probability": 1.0})``"""
    data = config_to_dict(cfg)
    for key, value in sections.items():
        if isinstance(value, dict):
            data[key].update(value)
        else:
            data[key] = value
    return config_from_dict(data)
