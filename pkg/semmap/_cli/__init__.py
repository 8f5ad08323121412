from pathlib import Path

import click

from semmap._cli.click_ext import SemmapCliContext
from semmap._cli.cloud import fetch, serve, status, upload
from semmap._cli.vehicle import demo, evaluate, localize, map_build, simulate


@click.group(short_help="Crowd-sourced semantic road-marking maps")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Project config file (default: ./semmap-config.yaml when present)",
)
@click.option("--seed", type=int, help="Seed of the generated world and the sensor noise")
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level")
@click.pass_context
def cli(ctx: click.Context, config_path, seed, verbose):
    """
    Build semantic road-marking maps on simulated vehicles, merge and compress them on a
    map server, and localize against the distributed map.

    Exit codes: 2 invalid config or input, 3 trajectory without GNSS, 4 map server
    unreachable, 5 unsupported map format version, 1 any other error.
    """
    ctx.obj = SemmapCliContext(config_path=config_path, seed=seed, verbose=verbose)


cli.add_command(simulate)
cli.add_command(map_build)
cli.add_command(upload)
cli.add_command(serve)
cli.add_command(fetch)
cli.add_command(status)
cli.add_command(localize)
cli.add_command(evaluate)
cli.add_command(demo)
