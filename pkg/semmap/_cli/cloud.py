import zlib
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import click

from semmap._cli.click_ext import (
    SemmapCliContext,
    bbox_option,
    existing_file,
    output_file,
    semmap_cli_ctx,
    server_url_option,
)
from semmap.exceptions import handle_pipeline_error

if TYPE_CHECKING:
    from semmap.client import MapClient


def _client(cli_ctx: SemmapCliContext, server_url: Optional[str]) -> "MapClient":
    from semmap.client import MapClient

    server = cli_ctx.config.server
    return MapClient(server_url or server.url, timeout=server.timeout)


@click.command(short_help="Run the map aggregation server")
@semmap_cli_ctx
@click.option("--host", help="Listen address (overrides config)")
@click.option("--port", type=click.IntRange(0, 65535), help="Listen port (overrides config)")
@click.option(
    "--data-dir",
    type=click.Path(file_okay=False, path_type=Path),
    help="Tile store directory (overrides config)",
)
@handle_pipeline_error()
def serve(cli_ctx: SemmapCliContext, host, port, data_dir):
    """
    Accept vehicle uploads, merge them into the global map and serve compressed tiles
    """
    from semmap.server import MapService
    from semmap.server import serve as run_server

    server = cli_ctx.config.server
    with MapService(data_dir or server.data_dir, server.compact_interval) as service:
        run_server(service, host or server.host, server.port if port is None else port)


@click.command(short_help="Upload a local map to the server")
@semmap_cli_ctx
@click.argument("map_file", metavar="MAP", type=existing_file, required=False)
@server_url_option
@click.option("--session-id", help="Defaults to one derived from the file's content")
@click.option("--vehicle-id", default="", help="Reported with the session")
@handle_pipeline_error()
def upload(cli_ctx: SemmapCliContext, map_file, server_url, session_id, vehicle_id):
    """
    Send a local map built by `semmap map-build` to the map server. Re-sending the same
    session is acknowledged without merging it twice.
    """
    from semmap.client import SessionID, VehicleID
    from semmap.grid import decode_upload

    path = cli_ctx.input_path(map_file, "map")
    payload = path.read_bytes()
    cells = decode_upload(payload).cell_count
    session_id = session_id or f"{path.stem}-{zlib.crc32(payload):08x}"
    ack = _client(cli_ctx, server_url).upload(payload, SessionID(session_id), VehicleID(vehicle_id))
    if ack.duplicate:
        cli_ctx.logger.warning(f"Session '{ack.session_id}' was already merged.")

    click.echo(f"Session: {ack.session_id} ({cells} cells)")
    click.echo(f"Map version: {ack.version}")


@click.command(short_help="Download the compressed map")
@semmap_cli_ctx
@bbox_option
@server_url_option
@click.option("--out", type=output_file, default="map.smap", show_default=True)
@handle_pipeline_error()
def fetch(cli_ctx: SemmapCliContext, bbox, server_url, out):
    """
    Fetch the compressed global map, or the tiles intersecting --bbox
    """
    from semmap.codec import decode

    fetched = _client(cli_ctx, server_url).fetch_map(bbox)
    compressed = decode(fetched.data)
    out.write_bytes(fetched.data)
    click.echo(f"Map version: {fetched.version}")
    click.echo(f"Tiles: {len(compressed.tiles)} ({len(fetched.data)} bytes)")


@click.command(short_help="Show the server's map version")
@semmap_cli_ctx
@server_url_option
@handle_pipeline_error()
def status(cli_ctx: SemmapCliContext, server_url):
    """
    Map version, merged sessions and size of the server's global map
    """
    result = _client(cli_ctx, server_url).status()
    click.echo(f"Map version: {result.version}")
    click.echo(f"Merged sessions: {result.merged_sessions}")
    click.echo(f"Tiles: {result.tiles} ({result.cells} cells)")
    if result.updated_at is not None:
        click.echo(f"Updated: {result.updated_at.isoformat()}")
