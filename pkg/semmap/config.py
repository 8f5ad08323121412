import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from semmap.exceptions import ConfigurationError
from semmap.geometry import CameraModel, RoiSpec
from semmap.localizer import LocalizerConfig
from semmap.posegraph import FactorWeights, SolverConfig
from semmap.simulator import DriveConfig, NoiseSpec, WorldParams, WorldTemplate

CONFIG_FILE_NAME = "semmap-config.yaml"


class CameraMounting(BaseModel):
    """
    Camera intrinsics plus where the camera sits on the vehicle (degrees, meters).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    position: tuple[float, float, float] = (1.0, 0.0, 1.5)
    pitch: float = 15.0
    yaw: float = 0.0
    roll: float = 0.0
    fx: PositiveFloat = 400.0
    fy: PositiveFloat = 400.0
    cx: float = 320.0
    cy: float = 240.0
    image_w: PositiveInt = 640
    image_h: PositiveInt = 480
    dist: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def to_camera(self) -> CameraModel:
        return CameraModel.from_mounting(
            position=self.position,
            pitch=math.radians(self.pitch),
            yaw=math.radians(self.yaw),
            roll=math.radians(self.roll),
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            image_w=self.image_w,
            image_h=self.image_h,
            dist=self.dist,
        )


class WorldConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    template: WorldTemplate = WorldTemplate.URBAN_BLOCK
    params: WorldParams = Field(default_factory=WorldParams)


class RouteConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    corner_radius: float = Field(6.0, ge=0)
    turn: Literal["straight", "left", "right"] = "straight"
    """Exit taken through an ``intersection`` world."""


class ServerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    url: str = "http://127.0.0.1:8765"
    """Where clients reach the map server."""
    host: str = "127.0.0.1"
    port: int = Field(8765, ge=0, le=65535)
    data_dir: Path = Path(".semmap")
    compact_interval: PositiveFloat = 5.0
    """Seconds between background compactions of changed tiles."""
    timeout: PositiveFloat = 30.0


class DemoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sessions: PositiveInt = 3
    """Mapping drives uploaded before the localization drive."""


class InputPaths(BaseModel):
    """Input files; each one given must exist."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    world: Optional[Path] = None
    calibration: Optional[Path] = None
    log: Optional[Path] = None
    map: Optional[Path] = None

    @model_validator(mode="after")
    def _check_exist(self) -> "InputPaths":
        missing = [
            f"{name}: {path}"
            for name, path in self.model_dump().items()
            if path is not None and not Path(path).is_file()
        ]
        if missing:
            raise ValueError(f"Referenced files do not exist ({', '.join(missing)}).")

        return self


def _resolve(base: Path, value):
    if value and not Path(value).is_absolute():
        return str(base / value)

    return value


class PipelineConfig(BaseSettings):
    """
    Every tunable of the pipeline. Values come from ``semmap-config.yaml``, then
    ``SEMMAP_*`` environment variables (nested with ``__``, e.g. ``SEMMAP_SERVER__PORT``).
    """

    model_config = SettingsConfigDict(
        env_prefix="SEMMAP_", env_nested_delimiter="__", extra="forbid", frozen=True
    )

    seed: int = 0
    paths: InputPaths = Field(default_factory=InputPaths)
    camera: CameraMounting = Field(default_factory=CameraMounting)
    roi: RoiSpec = Field(default_factory=RoiSpec)
    world: WorldConfig = Field(default_factory=WorldConfig)
    route: RouteConfig = Field(default_factory=RouteConfig)
    drive: DriveConfig = Field(default_factory=DriveConfig)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    weights: FactorWeights = Field(default_factory=FactorWeights)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    localizer: LocalizerConfig = Field(default_factory=LocalizerConfig)
    server: ServerConfig = Field(default_factory=ServerConfig)
    demo: DemoConfig = Field(default_factory=DemoConfig)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "PipelineConfig":
        """
        Load a YAML project file. Relative input paths resolve against the file's folder.

        Raises:
            :class:`~semmap.exceptions.ConfigurationError`: When the file cannot be read,
              holds unknown keys or invalid values, or references missing files.
        """
        data: dict = {}
        if path is not None:
            path = Path(path)
            try:
                data = yaml.safe_load(path.read_text()) or {}
            except (OSError, yaml.YAMLError) as err:
                raise ConfigurationError(f"Cannot read config '{path}': {err}") from err

            if not isinstance(data, dict):
                raise ConfigurationError(f"Config '{path}' must be a mapping.")

            paths = data.get("paths")
            if isinstance(paths, dict):
                data["paths"] = {
                    key: _resolve(path.parent, value) for key, value in paths.items()
                }

        data.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return cls(**data)
        except ValidationError as err:
            raise ConfigurationError(f"Invalid configuration: {err}") from err

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        """Apply a ``--seed`` override to the run and to the sensor noise."""
        if seed is None:
            return self

        noise = self.noise.model_copy(update={"seed": seed})
        return self.model_copy(update={"seed": seed, "noise": noise})

    def camera_model(self) -> CameraModel:
        """The calibration file when one is configured, otherwise the mounting model."""
        if self.paths.calibration is not None:
            try:
                return CameraModel.load(self.paths.calibration)
            except ValidationError as err:
                raise ConfigurationError(
                    f"Invalid calibration '{self.paths.calibration}': {err}"
                ) from err

        return self.camera.to_camera()
