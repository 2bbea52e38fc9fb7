"""Anti-replay ledger for license requests."""

import threading
from collections import OrderedDict
from typing import Dict

from minidrm.core.errors import DrmError, ErrorCode

DEFAULT_REPLAY_WINDOW = 600


class ReplayLedger:
    """Set of accepted anti-replay seeds with bounded memory.

    Client times may lie up to ``window`` on either side of the server
    clock, so a seed is kept for twice the window. Past that, any request
    carrying it also carries a client time outside the window and is refused
    on that ground; eviction never reopens a replay.

    Parameters
    ----------
    window : int, optional
        Replay window in seconds (default: 600)

    Examples
    --------
    >>> ledger = ReplayLedger()
    >>> ledger.check_and_record(seed, client_time=1000, now=1000)
    >>> ledger.check_and_record(seed, client_time=1000, now=1001)
    Traceback (most recent call last):
    minidrm.core.errors.DrmError: REPLAY: anti-replay seed already used
    """

    def __init__(self, window: int = DEFAULT_REPLAY_WINDOW):
        if window <= 0:
            raise ValueError(f"Replay window must be positive, got {window}")
        self.window = window
        self._seen: "OrderedDict[bytes, int]" = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)

    def __contains__(self, seed: bytes) -> bool:
        with self._lock:
            return seed in self._seen

    def _evict(self, now: int) -> None:
        horizon = now - 2 * self.window
        while self._seen:
            _, stamp = next(iter(self._seen.items()))
            if stamp >= horizon:
                break
            self._seen.popitem(last=False)

    def _check(self, seed: bytes, client_time: int, now: int) -> None:
        if abs(now - client_time) > self.window:
            raise DrmError(ErrorCode.REPLAY, "client time outside the replay window")
        self._evict(now)
        if seed in self._seen:
            raise DrmError(ErrorCode.REPLAY, "anti-replay seed already used")

    def check(self, seed: bytes, client_time: int, now: int) -> None:
        """Raise what ``check_and_record`` would raise, without recording ``seed``."""
        with self._lock:
            self._check(seed, client_time, now)

    def check_and_record(self, seed: bytes, client_time: int, now: int) -> None:
        """Accept ``seed`` once; the check and insertion are atomic.

        Raises
        ------
        DrmError
            ``REPLAY`` for a seen seed or a client time outside the window
        """
        with self._lock:
            self._check(seed, client_time, now)
            # stamps stay monotone so eviction can stop at the first fresh entry
            self._seen[seed] = max(now, next(reversed(self._seen.values()), now))

    def discard(self, seed: bytes) -> None:
        """Forget ``seed`` after the request that recorded it failed."""
        with self._lock:
            self._seen.pop(seed, None)

    def snapshot(self) -> Dict[bytes, int]:
        with self._lock:
            return dict(self._seen)
