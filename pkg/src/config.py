import os
import logging
from typing import Optional
from dotenv import load_dotenv
from pythonjsonlogger import jsonlogger
from .exceptions import ValidationError

LOG_FORMATS = ("json", "text")


class Config:
    """Environment defaults for solver runs.

    Values come from the process environment, optionally seeded from a
    ``.env`` file. CLI flags and run-config values take precedence over
    these.
    """

    def __init__(self):
        load_dotenv()
        self.validate_env()

        self.rtol = float(os.getenv("STATESPACE_RTOL", "1e-10"))
        self.out_dir = os.getenv("STATESPACE_OUT_DIR", ".")
        self.seed = int(os.getenv("STATESPACE_SEED", "0"))
        self.log_level = os.getenv("STATESPACE_LOG_LEVEL", "INFO").upper()
        self.log_format = os.getenv("STATESPACE_LOG_FORMAT", "text").lower()

    def validate_env(self) -> None:
        """Validate optional environment variables that are set."""
        rtol = os.getenv("STATESPACE_RTOL")
        if rtol is not None:
            try:
                value = float(rtol)
            except ValueError:
                raise ValidationError("STATESPACE_RTOL must be a number", field="STATESPACE_RTOL", value=rtol)
            if not value > 0:
                raise ValidationError("STATESPACE_RTOL must be positive", field="STATESPACE_RTOL", value=rtol)

        seed = os.getenv("STATESPACE_SEED")
        if seed is not None:
            try:
                if int(seed) < 0:
                    raise ValueError
            except ValueError:
                raise ValidationError("STATESPACE_SEED must be a non-negative integer", field="STATESPACE_SEED", value=seed)

        level = os.getenv("STATESPACE_LOG_LEVEL")
        if level is not None and not isinstance(logging.getLevelName(level.upper()), int):
            raise ValidationError(f"Unknown log level: {level}", field="STATESPACE_LOG_LEVEL", value=level)

        fmt = os.getenv("STATESPACE_LOG_FORMAT")
        if fmt is not None and fmt.lower() not in LOG_FORMATS:
            raise ValidationError(f"Log format must be one of {', '.join(LOG_FORMATS)}", field="STATESPACE_LOG_FORMAT", value=fmt)


def configure_logging(level: str = "INFO", fmt: str = "text", stream: Optional[object] = None) -> None:
    """Install a single root handler, JSON or plain text."""
    handler = logging.StreamHandler(stream)
    if fmt == "json":
        handler.setFormatter(jsonlogger.JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
