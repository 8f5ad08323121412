import pytest
from click.testing import CliRunner

from semmap._cli import cli as CLI
from semmap.server import MapHTTPServer, MapService

STRAIGHT_ROAD_CONFIG = """\
seed: 5
world:
  template: straight_road
noise:
  seg_flip_prob: 0.01
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def cli():
    return CLI


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    path = tmp_path_factory.mktemp("project")
    (path / "semmap-config.yaml").write_text(STRAIGHT_ROAD_CONFIG)
    return path


@pytest.fixture(scope="module")
def config_path(project):
    return project / "semmap-config.yaml"


@pytest.fixture(scope="module")
def drive_log(project, config_path):
    out = project / "drive.slog"
    result = CliRunner().invoke(
        CLI, ("--config", str(config_path), "simulate", "--out", str(out)), catch_exceptions=False
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def map_server():
    with MapService() as service:
        server = MapHTTPServer(service).start()
        yield server
        server.stop()
