# msct/logging_config.py
import logging
import os

import colorlog
from dotenv import load_dotenv

FILE = 60
FORMAT = "%(log_color)s%(levelname)s:%(name)s:%(message)s"

LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red,bg_white",
    "FILE": "bg_yellow,bold",
}

# Trainer messages are prefixed with their phase
PHASE_COLORS = {"encoder:": "blue", "decoder:": "purple"}


class PhaseColoredFormatter(colorlog.ColoredFormatter):
    """Level colours, except INFO lines from a training phase get the phase colour."""

    def __init__(self, fmt: str = FORMAT):
        super().__init__(fmt, log_colors=LOG_COLORS)
        self._phases = {
            prefix: colorlog.ColoredFormatter(fmt, log_colors={"INFO": color})
            for prefix, color in PHASE_COLORS.items()
        }

    def format(self, record):
        if record.levelno == logging.INFO:
            msg = record.getMessage()
            for prefix, formatter in self._phases.items():
                if msg.startswith(prefix):
                    return formatter.format(record)
        return super().format(record)


def setup_logging(logger_name: str = "msct") -> logging.Logger:
    load_dotenv(override=False)
    logging.addLevelName(FILE, "FILE")

    logger = logging.getLogger(logger_name)
    logger.setLevel(os.getenv("MSCT_LOG_LEVEL", "INFO").upper())
    logger.handlers.clear()

    handler = colorlog.StreamHandler()
    handler.setFormatter(PhaseColoredFormatter())
    logger.addHandler(handler)
    logger.propagate = False

    # statsmodels warns per fit; the MSM code reports separation itself
    logging.getLogger("statsmodels").setLevel(logging.WARNING)

    # Artifact writes: logger.file("Wrote %s", path)
    logger.file = lambda message, *args, **kwargs: logger.log(FILE, message, *args, **kwargs)
    return logger


logger = setup_logging()
