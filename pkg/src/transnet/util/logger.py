import logging
import os
from typing import Union


class CustomFormatter(logging.Formatter):
    """Colours records by level; colours are dropped when the stream is not a terminal."""

    COLORS = {
        logging.DEBUG: "\x1b[38;21m",
        logging.INFO: "\x1b[38;21m",
        logging.WARNING: "\x1b[33;21m",
        logging.ERROR: "\x1b[31;21m",
        logging.CRITICAL: "\x1b[31;1m",
    }
    RESET = "\x1b[0m"
    FMT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s (%(filename)s:%(lineno)d)"

    def __init__(self, color: bool = True):
        super().__init__(self.FMT)
        self.color = color

    def format(self, record):
        text = super().format(record)
        if not self.color:
            return text
        return self.COLORS.get(record.levelno, "") + text + self.RESET


def setup_logging(level: Union[int, str, None] = None) -> logging.Logger:
    """
    Configure the root logger once and return it.

    The level is taken from `level`, then from the TNET_LOG_LEVEL environment
    variable, and defaults to INFO. Later calls without a level keep the
    configured one.
    """
    logger = logging.getLogger()
    configured = any(isinstance(h.formatter, CustomFormatter) for h in logger.handlers)
    if level is None and configured:
        return logger
    if level is None:
        level = os.environ.get("TNET_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logger.setLevel(level)

    stream_handlers = [h for h in logger.handlers if isinstance(h.formatter, CustomFormatter)]
    if not stream_handlers:
        ch = logging.StreamHandler()
        ch.setFormatter(CustomFormatter(color=getattr(ch.stream, "isatty", lambda: False)()))
        logger.addHandler(ch)
        stream_handlers = [ch]
    for handler in stream_handlers:
        handler.setLevel(level)

    return logger
