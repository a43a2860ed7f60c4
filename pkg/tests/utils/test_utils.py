import json

import numpy as np
import pytest

from posetrack.synth import AugmentConfig, DatasetConfig
from posetrack.utils.config import apply_overrides, config_echo, load_flat_config
from posetrack.utils.errors import (
    ConfigError,
    DatasetError,
    GradientCheckFailed,
    ObjParseError,
    OutOfFrustum,
    ReportIoError,
    TrackingBudgetExceeded,
    exit_code_for,
)
from posetrack.utils.helper import derive_rng, validate_positive_int, validate_probability, validate_range


def _write(tmp_path, payload):
    path = tmp_path / "cfg.json"
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return path


def test_load_flat_config(tmp_path):
    assert load_flat_config(_write(tmp_path, {"n_viewpoints": 8})) == {"n_viewpoints": 8}


@pytest.mark.parametrize("payload", ["[1, 2]", "{not json", {"deltas": {"trans_m": 0.01}}])
def test_load_flat_config_rejects(tmp_path, payload):
    with pytest.raises(ConfigError):
        load_flat_config(_write(tmp_path, payload))


def test_load_flat_config_missing(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_flat_config(tmp_path / "absent.json")
    assert excinfo.value.field.endswith("absent.json")


def test_overrides_reach_nested_fields():
    cfg = apply_overrides(DatasetConfig(), {"trans_m": 0.01, "p_occluder": 0.2, "n_viewpoints": 16})
    assert cfg.deltas.trans_m == 0.01
    assert cfg.augment.p_occluder == 0.2
    assert cfg.n_viewpoints == 16
    assert DatasetConfig().augment.p_occluder == 0.6


def test_overrides_coerce_integers_to_floats():
    assert apply_overrides(DatasetConfig(), {"distance_m": 1}).distance_m == 1.0


@pytest.mark.parametrize(
    "overrides",
    [{"unknown": 1}, {"n_viewpoints": 1.5}, {"p_occluder": "high"}, {"alpha_range": 1.0}, {"p_occluder": 2.0}],
)
def test_overrides_rejected(overrides):
    with pytest.raises(ConfigError):
        apply_overrides(DatasetConfig(), overrides)


def test_config_echo_is_flat():
    echo = config_echo(DatasetConfig())
    assert echo["p_occluder"] == 0.6
    assert echo["alpha_range"] == [0.0, 3.0]
    assert "augment" not in echo
    json.dumps(echo)


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("bad"), 2),
        (ObjParseError("bad", 3), 2),
        (DatasetError("bad"), 2),
        (FileNotFoundError("bad"), 2),
        (ValueError("bad"), 2),
        (GradientCheckFailed("bad"), 1),
        (TrackingBudgetExceeded("bad"), 1),
        (ReportIoError("bad"), 1),
        (OutOfFrustum("bad"), 1),
    ],
)
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


def test_validators():
    validate_positive_int(3, "n")
    validate_probability(0.0, "p")
    validate_range((1.0, 1.0), "r")
    for bad in (0, -1, True, 2.0):
        with pytest.raises(ValueError):
            validate_positive_int(bad, "n")
    with pytest.raises(ValueError):
        validate_probability(1.5, "p")
    with pytest.raises(ValueError):
        validate_range((2.0, 1.0), "r")


def test_derive_rng_depends_only_on_seed_and_index():
    a = derive_rng(7, 3).random(4)
    assert np.array_equal(a, derive_rng(7, 3).random(4))
    assert not np.array_equal(a, derive_rng(7, 4).random(4))
    assert not np.array_equal(a, derive_rng(8, 3).random(4))


def test_augment_identity_is_valid():
    assert AugmentConfig.identity().p_occluder == 0.0
