from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, NoReturn, Optional

import click

from semmap.exceptions import Abort, ConfigurationError
from semmap.logging import SemmapLogger, logger

if TYPE_CHECKING:
    # perf: Keep the CLI module loading fast as possible.
    from semmap.config import PipelineConfig
    from semmap.geometry import CameraModel
    from semmap.simulator import WorldModel


class SemmapCliContext:
    """
    Shared state of one ``semmap`` invocation: the global flags and the project config
    they resolve to.
    """

    def __init__(
        self,
        config_path: Optional[Path] = None,
        seed: Optional[int] = None,
        verbose: bool = False,
    ):
        self.config_path = config_path
        self.seed = seed
        if verbose:
            logger.set_level("DEBUG")

    @property
    def logger(self) -> SemmapLogger:
        return logger

    @cached_property
    def config(self) -> "PipelineConfig":
        from semmap.config import CONFIG_FILE_NAME, PipelineConfig

        path = self.config_path
        if path is None and Path(CONFIG_FILE_NAME).is_file():
            path = Path(CONFIG_FILE_NAME)

        return PipelineConfig.load(path).with_seed(self.seed)

    def input_path(self, value: Optional[Path], name: str) -> Path:
        """A command argument, falling back to the config's ``paths.<name>``."""
        path = value or getattr(self.config.paths, name)
        if path is None:
            raise ConfigurationError(f"No {name} file given on the command line or in config.")

        return Path(path)

    def camera(self, calibration: Optional[Path] = None) -> "CameraModel":
        config = self.config
        if calibration is not None:
            paths = config.paths.model_copy(update={"calibration": calibration})
            config = config.model_copy(update={"paths": paths})

        return config.camera_model()

    def world(self, path: Optional[Path] = None) -> "WorldModel":
        """The world file given, else the config's, else one generated from the template."""
        from pydantic import ValidationError

        from semmap.simulator import WorldModel, generate_world

        path = path or self.config.paths.world
        if path is None:
            world_config = self.config.world
            return generate_world(world_config.template, world_config.params, self.config.seed)

        try:
            return WorldModel.load(path)
        except ValidationError as err:
            raise ConfigurationError(f"Invalid world file '{path}': {err}") from err

    def abort(self, msg: str, exit_code: int = 1) -> NoReturn:
        raise Abort(msg, exit_code=exit_code)


semmap_cli_ctx = click.make_pass_decorator(SemmapCliContext, ensure=True)


def _bbox_callback(ctx, param, value):
    if value is None:
        return None

    parts = value.split(",")
    try:
        bbox = tuple(float(x) for x in parts)
    except ValueError:
        bbox = ()

    if len(bbox) != 4:
        raise click.BadParameter("Expected 'min_x,min_y,max_x,max_y'.")

    if bbox[0] > bbox[2] or bbox[1] > bbox[3]:
        raise click.BadParameter("Minimum corner lies beyond the maximum corner.")

    return bbox


existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
output_file = click.Path(dir_okay=False, writable=True, path_type=Path)

bbox_option = click.option(
    "--bbox",
    callback=_bbox_callback,
    metavar="MIN_X,MIN_Y,MAX_X,MAX_Y",
    help="Only the map tiles intersecting this world box (meters)",
)
calibration_option = click.option(
    "--calibration", type=existing_file, help="Camera calibration JSON (overrides config)"
)
server_url_option = click.option("--server-url", help="Map server URL (overrides config)")
