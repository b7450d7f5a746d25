import json

import pytest

from radarforge.cli import main
from radarforge.core import ParseError, PillarConfig, SimDenConfig, ValidationError
from radarforge.exporters import Exporter
from radarforge.settings import Settings, dumps, load_settings, loads


def test_default_settings():
    settings = load_settings()
    assert settings == Settings()
    assert settings.pillars.grid_shape == (320, 320)
    assert settings.simden.points_per_instance == 200


def test_settings_merge_over_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({
        "simden": {"kernel": "cosine", "rng_seed": 5},
        "pillars": {"preset": "astyx", "split": "train", "max_points_per_pillar": 8},
        "loss": {"beta": 0.2},
    }))
    settings = load_settings(path)
    assert settings.simden.kernel.value == "cosine"
    assert settings.simden.edge_point_count == 20
    assert settings.pillars.grid_shape == (480, 512)
    assert (settings.pillars.max_pillars, settings.pillars.max_points_per_pillar) == (16000, 8)
    assert settings.loss.beta == 0.2 and settings.loss.alpha == 0.25
    assert loads(dumps(settings)) == settings


@pytest.mark.parametrize(
    "text, error, field",
    [
        ('{"simden": {"gamma": -1}}', ValidationError, "gamma"),
        ('{"simden": {"gamma_": 1}}', ValidationError, "gamma_"),
        ('{"render": {}}', ValidationError, "render"),
        ('{"pillars": {"preset": "kitti"}}', ValidationError, "preset"),
    ],
)
def test_settings_errors(text, error, field):
    with pytest.raises(error) as err:
        loads(text)
    assert err.value.field == field


def test_settings_syntax_errors():
    with pytest.raises(ParseError) as err:
        loads('{"simden": ')
    assert err.value.offset == 11
    with pytest.raises(ParseError):
        loads("[1, 2]")


@pytest.mark.parametrize(
    "field, value",
    [
        ("points_per_instance", 10.5),
        ("max_key_points", 2.0),
        ("edge_point_count", "20"),
        ("referring_point_count", True),
        ("mask_resample_attempts", None),
    ],
)
def test_simden_counts_must_be_integers(field, value):
    with pytest.raises(ValidationError) as err:
        SimDenConfig(**{field: value})
    assert err.value.field == field
    with pytest.raises(ValidationError) as err:
        loads(json.dumps({"simden": {field: value}}))
    assert err.value.field == field


@pytest.mark.parametrize("field", ["max_pillars", "max_points_per_pillar"])
def test_pillar_caps_must_be_integers(field):
    with pytest.raises(ValidationError) as err:
        loads(json.dumps({"pillars": {"preset": "vod", field: 5.5}}))
    assert err.value.field == field
    caps = {"max_pillars": 10, "max_points_per_pillar": 5, field: False}
    with pytest.raises(ValidationError):
        PillarConfig((0, 1), (0, 1), (0, 1), (1, 1, 1), **caps)


def test_fractional_count_in_config_is_a_usage_error(tmp_path, scene3, capsys):
    frame, masks = scene3
    exporter = Exporter()
    exporter.write_frame(frame, tmp_path / "calib.json", tmp_path / "scan.bin")
    exporter.write_masks_png(masks, tmp_path / "masks.png")
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"simden": {"points_per_instance": 10.5}}))
    args = [
        "densify", "--calib", str(tmp_path / "calib.json"), "--cloud", str(tmp_path / "scan.bin"),
        "--masks", str(tmp_path / "masks.png"), "--out", str(tmp_path / "out.bin"), "--config", str(config),
    ]
    assert main(args) == 2
    assert "points_per_instance" in capsys.readouterr().err
    assert not (tmp_path / "out.bin").exists()
