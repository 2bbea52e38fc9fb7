"""Concurrent-playback lease slots per account and content."""

import secrets
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

from minidrm.core.errors import DrmError, ErrorCode

SLOT_TOKEN_SIZE = 16
DEFAULT_LEASE_DURATION = 120


@dataclass(frozen=True)
class LeaseSlot:
    """A slot held by one device.

    Attributes:
        slot_index: Position in ``range(capacity)``
        token: Bearer token proving possession of the slot
        expiry: Lease end on the server clock; the slot is free once ``now >= expiry``
        client_expiry: Lease end on the holder's time reference, as reported to it
    """

    slot_index: int
    token: bytes = field(repr=False)
    expiry: int
    client_expiry: int

    def expired(self, now: int) -> bool:
        return now >= self.expiry


class LeaseTable:
    """Lease slots keyed by ``(account, content_id)`` then ``device_id``.

    All operations take one lock, so concurrent allocations never exceed
    capacity. Slots are kept and reclaimed on the server clock ``now``; a
    request's own ``client_time`` only sets the expiry reported back to that
    device and can end no slot but its own.

    Parameters
    ----------
    duration : int, optional
        Lease length granted by allocation and renewal, in seconds
        (default: 120)
    token_source : callable, optional
        ``n -> n random bytes`` for slot tokens (default: ``secrets.token_bytes``)
    """

    def __init__(
        self,
        duration: int = DEFAULT_LEASE_DURATION,
        token_source: Callable[[int], bytes] = secrets.token_bytes,
    ):
        if duration <= 0:
            raise ValueError(f"Lease duration must be positive, got {duration}")
        self.duration = duration
        self._token_source = token_source
        self._slots: Dict[Tuple[str, str], Dict[bytes, LeaseSlot]] = {}
        self._lock = threading.Lock()

    def _table(self, account: str, content_id: str, now: int) -> Dict[bytes, LeaseSlot]:
        # expired slots are reclaimed on every access
        table = self._slots.setdefault((account, content_id), {})
        for device_id in [d for d, s in table.items() if s.expired(now)]:
            del table[device_id]
        return table

    def _grant(self, index: int, token: bytes, now: int, client_time: int) -> LeaseSlot:
        return LeaseSlot(
            slot_index=index,
            token=token,
            expiry=now + self.duration,
            client_expiry=client_time + self.duration,
        )

    def allocate(
        self,
        account: str,
        content_id: str,
        device_id: bytes,
        capacity: int,
        now: int,
        client_time: Optional[int] = None,
    ) -> LeaseSlot:
        """Give ``device_id`` a slot, or return the one it already holds.

        Parameters
        ----------
        now : int
            Server clock
        client_time : int, optional
            Requesting device's time reference (default: ``now``)

        Raises
        ------
        DrmError
            ``LEASE_EXHAUSTED`` when other devices hold every slot
        """
        if capacity < 0:
            raise ValueError(f"Lease capacity must be non-negative, got {capacity}")
        with self._lock:
            table = self._table(account, content_id, now)
            held = table.get(device_id)
            if held is not None:
                return held
            if len(table) >= capacity:
                raise DrmError(
                    ErrorCode.LEASE_EXHAUSTED, f"all {capacity} playback slots are in use"
                )
            used = {slot.slot_index for slot in table.values()}
            index = min(i for i in range(capacity) if i not in used)
            slot = self._grant(
                index,
                self._token_source(SLOT_TOKEN_SIZE),
                now,
                now if client_time is None else client_time,
            )
            table[device_id] = slot
            return slot

    def renew(
        self,
        account: str,
        content_id: str,
        device_id: bytes,
        token: bytes,
        now: int,
        client_time: Optional[int] = None,
    ) -> LeaseSlot:
        """Extend a held, unexpired slot by ``duration``.

        A renewal whose ``client_time`` is already past the holder's
        ``client_expiry`` frees that slot.

        Raises
        ------
        DrmError
            ``LEASE_NOT_HELD`` if the slot expired, was released or the token
            does not match; an expired slot is freed for other devices
        """
        client_now = now if client_time is None else client_time
        with self._lock:
            table = self._table(account, content_id, now)
            held = table.get(device_id)
            if held is None or not secrets.compare_digest(held.token, token):
                raise DrmError(ErrorCode.LEASE_NOT_HELD, "no live lease slot for this device")
            if client_now >= held.client_expiry:
                del table[device_id]
                raise DrmError(ErrorCode.LEASE_NOT_HELD, "lease ran out before renewal")
            renewed = self._grant(held.slot_index, held.token, now, client_now)
            table[device_id] = renewed
            return renewed

    def release(
        self, account: str, content_id: str, device_id: bytes, token: bytes, now: int
    ) -> None:
        """Free the slot held by ``device_id``.

        Raises
        ------
        DrmError
            ``LEASE_NOT_HELD`` if no live slot matches ``token``
        """
        with self._lock:
            table = self._table(account, content_id, now)
            held = table.get(device_id)
            if held is None or not secrets.compare_digest(held.token, token):
                raise DrmError(ErrorCode.LEASE_NOT_HELD, "no live lease slot for this device")
            del table[device_id]

    def active(self, account: str, content_id: str, now: int) -> Dict[bytes, LeaseSlot]:
        """Live slots of one account and content, keyed by device."""
        with self._lock:
            return dict(self._table(account, content_id, now))
