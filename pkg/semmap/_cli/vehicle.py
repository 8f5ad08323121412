from pathlib import Path

import click
import rich

from semmap._cli.click_ext import (
    SemmapCliContext,
    calibration_option,
    existing_file,
    output_file,
    semmap_cli_ctx,
    server_url_option,
)
from semmap.exceptions import InputMismatchError, handle_pipeline_error


@click.command(short_help="Record a simulated drive")
@semmap_cli_ctx
@click.option("--world", "world_path", type=existing_file, help="World JSON (overrides config)")
@click.option("--out", type=output_file, default="drive.slog", show_default=True)
@click.option("--save-world", type=output_file, help="Also write the world that was driven")
@handle_pipeline_error()
def simulate(cli_ctx: SemmapCliContext, world_path, out, save_world):
    """
    Drive the configured route through a world and write the rendered frames as a drive log
    """
    from semmap.pipeline import route_for
    from semmap.simulator import iter_drive, write_drive_log

    config = cli_ctx.config
    world = cli_ctx.world(world_path)
    route = route_for(config.world.template, config)
    cam = cli_ctx.camera()
    frames = list(iter_drive(world, route, cam, config.noise, config.drive, config.roi))
    size = write_drive_log(out, frames, cam, config.drive.frame_rate)
    if save_world:
        world.save(save_world)

    fixes = sum(frame.gnss is not None for frame in frames)
    coverage = fixes / len(frames) if frames else 0.0
    click.echo(f"Frames: {len(frames)}")
    click.echo(f"GNSS coverage: {coverage:.3f}")
    cli_ctx.logger.success(f"Wrote {size} bytes to '{out}'.")


@click.command("map-build", short_help="Build a local semantic map from a drive log")
@semmap_cli_ctx
@click.argument("log", type=existing_file, required=False)
@calibration_option
@click.option("--out", type=output_file, default="local.sgup", show_default=True)
@click.option("--trajectory", type=output_file, help="Also write raw and optimized poses (CSV)")
@handle_pipeline_error()
def map_build(cli_ctx: SemmapCliContext, log, calibration, out, trajectory):
    """
    Optimize the drive's trajectory, project every frame's labeled pixels onto the ground
    and vote them into a grid map, written as an upload payload
    """
    from semmap.grid import encode_upload
    from semmap.pipeline import build_map_from_frames
    from semmap.posegraph import write_trajectory
    from semmap.simulator import read_drive_log

    config = cli_ctx.config
    drive_log = read_drive_log(cli_ctx.input_path(log, "log"))
    cam = cli_ctx.camera(calibration)
    drive_log.check_camera(cam)
    result = build_map_from_frames(
        [frame.observation for frame in drive_log.frames],
        cam,
        config.roi,
        config.weights,
        config.solver,
    )
    out.write_bytes(encode_upload(result.grid))
    if trajectory:
        write_trajectory(trajectory, result.trajectory_rows())

    cost = result.optimization.final_cost if result.optimization else 0.0
    click.echo(f"Cells: {len(result.grid)}")
    click.echo(f"Trajectory cost: {cost:.6g}")


@click.command(short_help="Localize a drive against a distributed map")
@semmap_cli_ctx
@click.argument("log", type=existing_file, required=False)
@click.argument("map_file", metavar="MAP", type=existing_file, required=False)
@calibration_option
@click.option("--out", type=output_file, default="localization.csv", show_default=True)
@handle_pipeline_error()
def localize(cli_ctx: SemmapCliContext, log, map_file, calibration, out):
    """
    Run ICP and EKF localization of a drive log on a compressed map
    """
    from semmap.codec import decode, decompress_to_map
    from semmap.localizer import write_localization
    from semmap.pipeline import localize_frames
    from semmap.simulator import read_drive_log

    config = cli_ctx.config
    drive_log = read_drive_log(cli_ctx.input_path(log, "log"))
    cam = cli_ctx.camera(calibration)
    drive_log.check_camera(cam)
    grid = decompress_to_map(decode(cli_ctx.input_path(map_file, "map").read_bytes()))
    observations = (frame.observation for frame in drive_log.frames)
    rows = list(localize_frames(observations, grid, cam, config.roi, config.localizer))
    write_localization(out, rows)

    matched = sum(row.icp_inliers > 0 for row in rows)
    click.echo(f"Frames: {len(rows)} ({matched} matched to the map)")


@click.command(short_help="Compare localization output with a drive's true poses")
@semmap_cli_ctx
@click.argument("estimate", type=existing_file)
@click.argument("log", type=existing_file, required=False)
@click.option("--errors", "errors_out", type=output_file, default="errors.csv", show_default=True)
@click.option(
    "--summary", "summary_out", type=output_file, default="summary.json", show_default=True
)
@handle_pipeline_error()
def evaluate(cli_ctx: SemmapCliContext, estimate, log, errors_out, summary_out):
    """
    Per-frame x, y and yaw errors of a localization CSV, plus their average and 90th
    percentile
    """
    from semmap.evaluation import (
        ErrorSummary,
        frame_errors,
        match_by_time,
        write_errors,
        write_summary,
    )
    from semmap.localizer import read_localization
    from semmap.simulator import read_drive_log

    try:
        rows = read_localization(estimate)
    except (KeyError, ValueError) as err:
        raise InputMismatchError(f"'{estimate}' is not a localization CSV: {err}") from err

    drive_log = read_drive_log(cli_ctx.input_path(log, "log"))
    times, estimates, truths = match_by_time(
        rows,
        [frame.t for frame in drive_log.frames],
        [frame.truth for frame in drive_log.frames],
    )
    errors = frame_errors(estimates, truths)
    summary = ErrorSummary.from_errors(errors)
    write_errors(errors_out, times, errors)
    write_summary(summary_out, summary)
    rich.print(summary.table())


@click.command(short_help="Run the whole pipeline on a generated world")
@semmap_cli_ctx
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default="demo",
    show_default=True,
)
@click.option("--sessions", type=click.IntRange(min=1), help="Mapping drives (overrides config)")
@server_url_option
@handle_pipeline_error()
def demo(cli_ctx: SemmapCliContext, out_dir, sessions, server_url):
    """
    Map a generated world with several simulated vehicles, merge and compress their maps,
    then localize one more drive on the result. Uses an in-process map server unless
    --server-url is given.
    """
    from semmap.client import MapClient
    from semmap.pipeline import run_demo

    config = cli_ctx.config
    if sessions:
        config = config.model_copy(
            update={"demo": config.demo.model_copy(update={"sessions": sessions})}
        )

    client = MapClient(server_url, timeout=config.server.timeout) if server_url else None
    report = run_demo(config, out_dir, client=client)
    rich.print(report.summary.table())
    click.echo(f"Occupied-cell payload: {report.upload_bytes} bytes")
    click.echo(
        f"Distributed map: {report.map_bytes} bytes ({report.compression_ratio:.1%} of upload)"
    )
    cli_ctx.logger.success(f"Map version {report.map_version}, outputs in '{out_dir}'.")
