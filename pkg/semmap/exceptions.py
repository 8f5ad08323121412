from contextlib import ContextDecorator
from typing import TYPE_CHECKING, Optional

import click

if TYPE_CHECKING:
    from requests import Response


class SemmapException(Exception):
    """
    Base class for every error raised by ``semmap``.
    """

    exit_code: int = 1


class Abort(click.ClickException):
    """
    A CLI abort carrying a stable process exit code.
    """

    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


class ConfigurationError(SemmapException):
    exit_code = 2


class InputMismatchError(ConfigurationError):
    pass


class GeometryError(SemmapException):
    pass


class BehindCameraError(GeometryError):
    def __init__(self, depth: float):
        super().__init__(f"Point is behind the camera (depth={depth:.3g} m).")


class UndistortionError(GeometryError):
    def __init__(self, iterations: int):
        super().__init__(f"Undistortion did not converge in {iterations} iterations.")


class DegenerateGeometryError(GeometryError):
    def __init__(self, message: Optional[str] = None):
        super().__init__(message or "Ground homography is singular (camera lies on the ground).")


class PoseGraphError(SemmapException):
    pass


class UnobservableGaugeError(PoseGraphError):
    exit_code = 3

    def __init__(self):
        super().__init__(
            "Pose graph has no GNSS factor; the trajectory's global frame is unobservable."
        )


class DivergenceError(PoseGraphError):
    def __init__(self, iteration: int):
        super().__init__(f"Non-finite cost at solver iteration {iteration}.")


class GridError(SemmapException):
    pass


class EmptyCellError(GridError):
    def __init__(self):
        super().__init__("Cell has no votes; its label is undefined.")


class ParseError(SemmapException):
    """
    A binary payload could not be parsed. ``offset`` is the byte position of the failure.
    """

    kind = "payload"

    def __init__(self, message: str, offset: int):
        self.offset = offset
        self.reason = message
        super().__init__(f"Malformed {self.kind} at byte {offset}: {message}")


class UploadParseError(ParseError):
    kind = "occupied-cell upload"


class MapDecodeError(ParseError):
    kind = "compressed map"


class MapVersionMismatch(MapDecodeError):
    exit_code = 5

    def __init__(self, version: int, supported: int):
        super().__init__(f"format version {version} (decoder supports {supported})", 4)


class DriveLogError(ParseError):
    kind = "drive log"


class CodecError(SemmapException):
    pass


class ContourBoundsError(CodecError):
    def __init__(self, width: int, height: int):
        super().__init__(f"Contour leaves the {width}x{height} raster.")


class CapacityError(CodecError):
    def __init__(self, what: str, count: int, limit: int):
        super().__init__(f"Too many {what} ({count}); the format allows at most {limit}.")


class LocalizationError(SemmapException):
    pass


class NoOverlapError(LocalizationError):
    def __init__(self, radius: float):
        super().__init__(f"No scan point has a same-label map cell within {radius:.2f} m.")


class SimulationError(SemmapException):
    exit_code = 2


class StoreError(SemmapException):
    pass


class StoreWriteError(StoreError):
    def __init__(self, path: str, message: str):
        super().__init__(f"Failed to persist '{path}': {message}")


class MapClientException(SemmapException):
    pass


class ClientUnavailable(MapClientException):
    exit_code = 4

    def __init__(self, url: str, message: Optional[str] = None):
        self.url = url
        super().__init__(
            f"{message or 'Map server unavailable'} ({url}). "
            "Check the server is running and retry."
        )


class ClientResponseError(MapClientException):
    def __init__(self, endpoint_url: str, response: "Response", message: Optional[str] = None):
        self.endpoint_url = endpoint_url
        self.response = response
        message = message or f"Exception when calling '{endpoint_url}':\n{response.text}"
        super().__init__(message)


class UploadRejected(ClientResponseError):
    def __init__(self, endpoint_url: str, response: "Response"):
        try:
            body = response.json()
        except ValueError:
            body = {"error": response.text}

        self.offset = body.get("offset")
        message = f"Upload rejected: {body.get('error')}"
        if self.offset is not None:
            message = f"{message} (byte {self.offset})"

        super().__init__(endpoint_url, response, message=message)


class handle_pipeline_error(ContextDecorator):
    """
    Turn domain errors raised inside a CLI command into an :class:`Abort` with the
    exception's exit code.
    """

    def __enter__(self):
        pass

    def __exit__(self, exc_type: type[BaseException], exc: BaseException, tb):
        if isinstance(exc, SemmapException):
            raise Abort(str(exc), exit_code=exc.exit_code) from exc

        # NOTE: Will raise `exc` by default because we did not return anything
