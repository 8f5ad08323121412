import logging
from typing import Union

from rich.console import Console
from rich.logging import RichHandler

SUCCESS = 25
logging.addLevelName(SUCCESS, "SUCCESS")


class SemmapLogger(logging.Logger):
    """
    Package logger with the extra ``SUCCESS`` level the CLI reports completed steps with.
    """

    def success(self, message: str, *args, **kwargs):
        if self.isEnabledFor(SUCCESS):
            self._log(SUCCESS, message, args, **kwargs)

    def set_level(self, level: Union[int, str]):
        self.setLevel(level.upper() if isinstance(level, str) else level)


def _create_logger(name: str = "semmap") -> SemmapLogger:
    previous = logging.getLoggerClass()
    logging.setLoggerClass(SemmapLogger)
    try:
        _logger = logging.getLogger(name)
    finally:
        logging.setLoggerClass(previous)

    if not _logger.handlers:
        handler = RichHandler(
            console=Console(stderr=True),
            show_time=False,
            show_path=False,
            markup=False,
            rich_tracebacks=False,
        )
        _logger.addHandler(handler)
        _logger.propagate = False

    _logger.setLevel(logging.INFO)
    return _logger  # type: ignore[return-value]


logger = _create_logger()

__all__ = ["SUCCESS", "SemmapLogger", "logger"]
