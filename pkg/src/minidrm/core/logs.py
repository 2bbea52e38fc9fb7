"""Structured log lines.

Records look like ``license_issued account=alice version=3 transcript=9f0c...``.
Byte values are rendered as their length only, so raw key material cannot be
formatted into a record by accident.
"""

import hashlib
import logging
import os
from enum import Enum
from typing import Any, Optional

LOG_LEVEL_ENV = "MINIDRM_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def _render(value: Any) -> str:
    if isinstance(value, (bytes, bytearray, memoryview)):
        return f"<{len(value)}B>"
    text = value.name if isinstance(value, Enum) else str(value)
    if not text or any(c.isspace() for c in text):
        return repr(text)
    return text


def format_event(event: str, /, **fields: Any) -> str:
    """Format ``event`` and its fields as one ``key=value`` line."""
    parts = [event]
    parts.extend(f"{key}={_render(value)}" for key, value in fields.items())
    return " ".join(parts)


def log_event(logger: logging.Logger, level: int, event: str, /, **fields: Any) -> None:
    """Emit a structured record if ``level`` is enabled."""
    if logger.isEnabledFor(level):
        logger.log(level, format_event(event, **fields))


def transcript_digest(*parts: bytes) -> str:
    """Short hex digest identifying one request/response exchange in logs."""
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.hexdigest()[:16]


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the ``minidrm`` logger hierarchy once per process.

    Parameters
    ----------
    level : str, optional
        Level name; falls back to ``MINIDRM_LOG_LEVEL`` and then ``INFO``
    """
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    resolved = logging.getLevelName(name)
    if not isinstance(resolved, int):
        raise ValueError(f"Unknown log level: {name}")
    root = logging.getLogger("minidrm")
    root.setLevel(resolved)
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
