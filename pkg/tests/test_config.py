import math

import numpy as np
import pytest
import yaml

from reldock.config import (
    ConfigError,
    ScenarioConfig,
    config_from_dict,
    config_to_dict,
    default_config_text,
    load_config,
    with_overrides,
)


def test_packaged_default_matches_dataclass_defaults():
    assert config_from_dict(yaml.safe_load(default_config_text())) == ScenarioConfig()


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == ScenarioConfig()


def test_partial_override(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 7\ncamera:\n  dropout_probability: 0.5\n")
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.camera.dropout_probability == 0.5
    assert cfg.camera.fov_deg == 60.0


@pytest.mark.parametrize(
    "data, message",
    [
        ({"camera": {"fov": 60}}, "camera.fov: unknown key"),
        ({"seed": 1.5}, "seed: expected an integer"),
        ({"sensor_noise": "yes"}, "sensor_noise: expected true/false"),
        ({"control": {"kp_pos": [1, 2]}}, "control.kp_pos: expected a list of 3 numbers"),
        ({"rates": "fast"}, "rates: expected a mapping"),
        ({"rates": {"physics": 750.0}}, "rates.physics"),
        ({"duration": -1.0}, "duration"),
    ],
)
def test_invalid_values_name_the_key(data, message):
    with pytest.raises(ConfigError, match=message.replace("[", r"\[")):
        config_from_dict(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(bad)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("3\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(scalar)


def test_round_trip_through_dict():
    cfg = with_overrides(ScenarioConfig(), seed=9, docking={"ascent_speed": 0.2})
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert cfg.docking.ascent_speed == 0.2


def test_builders():
    cfg = ScenarioConfig()
    assert cfg.camera_model().fov_half_angle == pytest.approx(math.radians(30))
    np.testing.assert_allclose(cfg.rig().R_MF, np.diag([1.0, -1.0, -1.0]), atol=1e-15)
    np.testing.assert_allclose(np.diag(cfg.measurement_noise().covariance_at(1.0)[0]), (0.04, 0.04, 0.09))
    assert cfg.vehicle_params("active").mass == 0.825
    assert cfg.initial_covariance().shape == (9, 9)
