from pathlib import Path

import pytest

from semmap.config import CONFIG_FILE_NAME, PipelineConfig
from semmap.exceptions import ConfigurationError
from semmap.geometry import CameraModel
from semmap.simulator import WorldTemplate

REPO_CONFIG = Path(__file__).parents[2] / CONFIG_FILE_NAME


@pytest.fixture
def config_file(tmp_path):
    def write(text: str) -> Path:
        path = tmp_path / CONFIG_FILE_NAME
        path.write_text(text)
        return path

    return write


def test_defaults():
    config = PipelineConfig.load()
    assert config.seed == 0
    assert config.world.template is WorldTemplate.URBAN_BLOCK
    assert config.drive.frame_rate == 10.0


def test_repository_config_is_valid():
    config = PipelineConfig.load(REPO_CONFIG)
    assert config.seed == 7
    assert config.noise.gnss_blocked == [(400.0, 550.0)]


def test_load_file(config_file):
    path = config_file("seed: 3\nworld:\n  template: straight_road\nnoise:\n  seg_flip_prob: 0.1\n")
    config = PipelineConfig.load(path)
    assert config.seed == 3
    assert config.world.template is WorldTemplate.STRAIGHT_ROAD
    assert config.noise.seg_flip_prob == 0.1


def test_overrides_win(config_file):
    path = config_file("seed: 3\n")
    assert PipelineConfig.load(path, seed=9).seed == 9
    assert PipelineConfig.load(path, seed=None).seed == 3


def test_relative_paths_resolve_against_the_file(config_file, tmp_path):
    (tmp_path / "world.json").write_text("{}")
    config = PipelineConfig.load(config_file("paths:\n  world: world.json\n"))
    assert config.paths.world == tmp_path / "world.json"


@pytest.mark.parametrize(
    "text",
    [
        "seed: [1\n",
        "- just\n- a list\n",
        "sede: 3\n",
        "drive:\n  speed: -1\n",
        "paths:\n  log: missing.slog\n",
    ],
)
def test_invalid_configs(config_file, text):
    with pytest.raises(ConfigurationError):
        PipelineConfig.load(config_file(text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        PipelineConfig.load(tmp_path / "nope.yaml")


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("SEMMAP_SERVER__PORT", "9000")
    assert PipelineConfig.load().server.port == 9000


def test_with_seed():
    config = PipelineConfig.load().with_seed(5)
    assert (config.seed, config.noise.seed) == (5, 5)
    assert config.with_seed(None) is config


def test_camera_model(config_file, tmp_path):
    assert PipelineConfig.load().camera_model().model_dump() == (
        CameraModel.from_mounting().model_dump()
    )

    calibrated = CameraModel.from_mounting(fx=500.0, fy=500.0)
    calibrated.save(tmp_path / "calibration.json")
    config = PipelineConfig.load(config_file("paths:\n  calibration: calibration.json\n"))
    assert config.camera_model().fx == 500.0


def test_invalid_calibration(config_file, tmp_path):
    (tmp_path / "calibration.json").write_text('{"fx": -1}')
    config = PipelineConfig.load(config_file("paths:\n  calibration: calibration.json\n"))
    with pytest.raises(ConfigurationError):
        config.camera_model()
