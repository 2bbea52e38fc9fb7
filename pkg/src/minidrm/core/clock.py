"""Injectable time sources.

Protocol code never reads ambient time; it asks a ``Clock``. Timestamps are
whole seconds.
"""

import threading
import time
from abc import ABC, abstractmethod


class Clock(ABC):
    """Source of the current time in seconds."""

    @abstractmethod
    def now(self) -> int:
        pass


class SystemClock(Clock):
    """Wall-clock time."""

    def now(self) -> int:
        return int(time.time())


class ManualClock(Clock):
    """Clock that only moves when told to; thread-safe.

    Parameters
    ----------
    start : int, optional
        Initial time in seconds (default: 1_000_000)

    Examples
    --------
    >>> clock = ManualClock(start=100)
    >>> clock.advance(5)
    105
    """

    def __init__(self, start: int = 1_000_000):
        if start < 0:
            raise ValueError(f"Clock start must be non-negative, got {start}")
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def set(self, value: int) -> None:
        if value < 0:
            raise ValueError(f"Time must be non-negative, got {value}")
        with self._lock:
            self._now = value

    def advance(self, seconds: int) -> int:
        """Move forward by ``seconds`` and return the new time."""
        if seconds < 0:
            raise ValueError("Clock cannot move backwards")
        with self._lock:
            self._now += seconds
            return self._now
