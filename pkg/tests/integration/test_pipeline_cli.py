import pytest

from semmap.codec import decode
from semmap.evaluation import ErrorSummary
from semmap.geometry import CameraModel
from semmap.grid import decode_upload
from semmap.server import MapHTTPServer, MapService
from semmap.simulator import write_drive_log


def invoke(runner, cli, config_path, *args):
    return runner.invoke(cli, ("--config", str(config_path), *map(str, args)))


def test_help(runner, cli):
    result = runner.invoke(cli, "--help", catch_exceptions=False)
    assert result.exit_code == 0, result.output
    assert "map-build" in result.output


def test_simulate(runner, cli, config_path, tmp_path):
    out = tmp_path / "drive.slog"
    world = tmp_path / "world.json"
    result = invoke(runner, cli, config_path, "simulate", "--out", out, "--save-world", world)
    assert result.exit_code == 0, result.output
    assert "Frames: 200" in result.output
    assert "GNSS coverage: 1.000" in result.output
    assert out.stat().st_size > 0
    assert world.is_file()


def test_simulate_reports_gnss_coverage(runner, cli, tmp_path):
    config_path = tmp_path / "semmap-config.yaml"
    config_path.write_text(
        "world:\n  template: straight_road\nnoise:\n  gnss_blocked:\n    - [30.0, 60.0]\n"
    )
    result = invoke(runner, cli, config_path, "simulate", "--out", tmp_path / "drive.slog")
    assert result.exit_code == 0, result.output

    (line,) = [line for line in result.output.splitlines() if line.startswith("GNSS coverage")]
    assert float(line.split(":")[1]) == pytest.approx(0.70, abs=0.01)


def test_simulate_is_deterministic(runner, cli, config_path, drive_log, tmp_path):
    out = tmp_path / "again.slog"
    result = invoke(runner, cli, config_path, "simulate", "--out", out)
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == drive_log.read_bytes()


def test_invalid_config(runner, cli, tmp_path):
    path = tmp_path / "semmap-config.yaml"
    path.write_text("sede: 3\n")
    result = invoke(runner, cli, path, "simulate", "--out", tmp_path / "drive.slog")
    assert result.exit_code == 2, result.output


def test_map_build(runner, cli, config_path, drive_log, tmp_path):
    out = tmp_path / "local.sgup"
    trajectory = tmp_path / "trajectory.csv"
    result = invoke(
        runner, cli, config_path, "map-build", drive_log, "--out", out, "--trajectory", trajectory
    )
    assert result.exit_code == 0, result.output
    assert "Cells:" in result.output
    assert "Trajectory cost:" in result.output
    assert decode_upload(out.read_bytes()).cell_count > 0
    assert len(trajectory.read_text().splitlines()) == 401


def test_map_build_of_an_empty_log(runner, cli, config_path, tmp_path):
    log = tmp_path / "empty.slog"
    write_drive_log(log, [], CameraModel.from_mounting(), 10.0)
    out = tmp_path / "local.sgup"

    result = invoke(runner, cli, config_path, "map-build", log, "--out", out)
    assert result.exit_code == 0, result.output
    assert "Cells: 0" in result.output
    assert decode_upload(out.read_bytes()).cell_count == 0


def test_map_build_without_gnss(runner, cli, tmp_path):
    config_path = tmp_path / "semmap-config.yaml"
    config_path.write_text(
        "world:\n  template: straight_road\nnoise:\n  gnss_blocked:\n    - [0.0, 1000.0]\n"
    )
    log = tmp_path / "drive.slog"
    assert invoke(runner, cli, config_path, "simulate", "--out", log).exit_code == 0

    result = invoke(runner, cli, config_path, "map-build", log, "--out", tmp_path / "local.sgup")
    assert result.exit_code == 3, result.output


def test_map_build_with_other_calibration(runner, cli, config_path, drive_log, tmp_path):
    calibration = tmp_path / "calibration.json"
    CameraModel.from_mounting(cx=400.0, cy=300.0, image_w=800, image_h=600).save(calibration)
    result = invoke(
        runner, cli, config_path, "map-build", drive_log, "--calibration", calibration
    )
    assert result.exit_code == 2, result.output
    assert "800x600" in result.output


def test_map_round_trip(runner, cli, config_path, drive_log, map_server, tmp_path):
    url = map_server.url
    local = tmp_path / "local.sgup"
    assert invoke(runner, cli, config_path, "map-build", drive_log, "--out", local).exit_code == 0

    result = invoke(
        runner, cli, config_path, "upload", local, "--server-url", url, "--session-id", "drive-1"
    )
    assert result.exit_code == 0, result.output
    assert "Session: drive-1" in result.output
    assert "Map version: 1" in result.output

    again = invoke(
        runner, cli, config_path, "upload", local, "--server-url", url, "--session-id", "drive-1"
    )
    assert again.exit_code == 0, again.output
    assert "Map version: 1" in again.output

    result = invoke(runner, cli, config_path, "status", "--server-url", url)
    assert result.exit_code == 0, result.output
    assert "Merged sessions: 1" in result.output

    smap = tmp_path / "map.smap"
    result = invoke(runner, cli, config_path, "fetch", "--server-url", url, "--out", smap)
    assert result.exit_code == 0, result.output
    tiles = len(decode(smap.read_bytes()).tiles)
    assert f"Tiles: {tiles} ({smap.stat().st_size} bytes)" in result.output

    estimate = tmp_path / "localization.csv"
    result = invoke(runner, cli, config_path, "localize", drive_log, smap, "--out", estimate)
    assert result.exit_code == 0, result.output
    assert "Frames: 200 (" in result.output

    summary = tmp_path / "summary.json"
    result = invoke(
        runner,
        cli,
        config_path,
        "evaluate",
        estimate,
        drive_log,
        "--errors",
        tmp_path / "errors.csv",
        "--summary",
        summary,
    )
    assert result.exit_code == 0, result.output
    report = ErrorSummary.model_validate_json(summary.read_text())
    assert report.frames == 200
    assert report.p90_y < 0.5


def test_upload_default_session_id(runner, cli, config_path, drive_log, map_server, tmp_path):
    local = tmp_path / "local.sgup"
    assert invoke(runner, cli, config_path, "map-build", drive_log, "--out", local).exit_code == 0

    result = invoke(runner, cli, config_path, "upload", local, "--server-url", map_server.url)
    assert result.exit_code == 0, result.output
    assert "Session: local-" in result.output


def test_evaluate_rejects_other_files(runner, cli, config_path, drive_log, tmp_path):
    not_csv = tmp_path / "notes.csv"
    not_csv.write_text("a,b\n1,2\n")
    result = invoke(runner, cli, config_path, "evaluate", not_csv, drive_log)
    assert result.exit_code == 2, result.output


@pytest.mark.parametrize("bbox", ["1,2,3", "a,b,c,d", "5,0,1,1"])
def test_fetch_bad_bbox(runner, cli, config_path, bbox):
    result = invoke(runner, cli, config_path, "fetch", "--bbox", bbox)
    assert result.exit_code == 2, result.output


def test_server_unreachable(runner, cli, config_path):
    server = MapHTTPServer(MapService())
    url = server.url
    server.server_close()

    result = invoke(runner, cli, config_path, "status", "--server-url", url)
    assert result.exit_code == 4, result.output


@pytest.mark.slow
def test_demo(runner, cli, config_path, tmp_path):
    result = invoke(runner, cli, config_path, "demo", "--out", tmp_path / "demo", "--sessions", 1)
    assert result.exit_code == 0, result.output
    assert "Distributed map:" in result.output
    assert (tmp_path / "demo").is_dir()
