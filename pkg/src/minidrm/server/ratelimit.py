"""Token-bucket rate limiting per client certificate."""

import threading
from typing import Dict, Tuple

from minidrm.core.clock import Clock
from minidrm.core.errors import DrmError, ErrorCode

DEFAULT_RATE = 20.0


class RateLimiter:
    """One token bucket per device.

    Parameters
    ----------
    clock : Clock
        Time source (whole seconds)
    rate : float, optional
        Requests per second refilled into each bucket (default: 20)
    burst : float, optional
        Bucket size (default: ``rate``)
    """

    def __init__(self, clock: Clock, rate: float = DEFAULT_RATE, burst: float = 0.0):
        if rate <= 0:
            raise ValueError(f"Rate must be positive, got {rate}")
        self.rate = rate
        self.burst = burst or rate
        self._clock = clock
        self._buckets: Dict[bytes, Tuple[float, int]] = {}
        self._lock = threading.Lock()

    def acquire(self, device_id: bytes) -> None:
        """Take one token for ``device_id``.

        Raises
        ------
        DrmError
            ``RATE_LIMITED`` when the bucket is empty
        """
        now = self._clock.now()
        with self._lock:
            tokens, stamp = self._buckets.get(device_id, (self.burst, now))
            tokens = min(self.burst, tokens + (now - stamp) * self.rate)
            if tokens < 1:
                self._buckets[device_id] = (tokens, now)
                raise DrmError(ErrorCode.RATE_LIMITED, "too many requests from this device")
            self._buckets[device_id] = (tokens - 1, now)
