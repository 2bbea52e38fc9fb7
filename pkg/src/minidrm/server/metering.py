"""Append-only metering log."""

import threading
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import pandas as pd

from minidrm.core.messages import MeteringEvent


@dataclass(frozen=True)
class MeteringRecord:
    account: str
    content_id: str
    event: MeteringEvent
    timestamp: int


class MeteringLog:
    """Thread-safe, append-only record of usage events.

    Examples
    --------
    >>> log = MeteringLog()
    >>> log.record_metering("alice", "movie", MeteringEvent.PLAYBACK_START, now=10)
    >>> log.count("alice", "movie")
    1
    """

    def __init__(self) -> None:
        self._records: List[MeteringRecord] = []
        self._counts: Counter = Counter()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def record_metering(
        self, account: str, content_id: str, event: MeteringEvent, now: int = 0
    ) -> None:
        record = MeteringRecord(account=account, content_id=content_id, event=event, timestamp=now)
        with self._lock:
            self._records.append(record)
            self._counts[(account, content_id, event)] += 1

    def count(
        self, account: str, content_id: str, event: Optional[MeteringEvent] = None
    ) -> int:
        """Number of events for one account and content, optionally of one kind."""
        with self._lock:
            if event is not None:
                return self._counts[(account, content_id, event)]
            return sum(
                n for (a, c, _), n in self._counts.items() if a == account and c == content_id
            )

    def counts_for(self, account: str) -> Dict[str, Dict[str, int]]:
        """Per-content event counts of ``account`` as ``{content_id: {event: n}}``."""
        out: Dict[str, Dict[str, int]] = {}
        with self._lock:
            items: List[Tuple[Tuple[str, str, MeteringEvent], int]] = list(self._counts.items())
        for (a, content_id, event), n in sorted(items, key=lambda kv: (kv[0][1], kv[0][2])):
            if a == account:
                out.setdefault(content_id, {})[event.name] = n
        return out

    def records(self) -> List[MeteringRecord]:
        with self._lock:
            return list(self._records)

    def summary(self) -> pd.DataFrame:
        """Event counts with one row per (account, content_id) and one column per event.

        Returns
        -------
        pd.DataFrame
            Integer counts, zero where an event never occurred

        Examples
        --------
        >>> print(log.summary())
        """
        records = self.records()
        columns = [e.name for e in MeteringEvent]
        if not records:
            return pd.DataFrame(columns=columns, dtype="int64")
        frame = pd.DataFrame(
            {
                "account": [r.account for r in records],
                "content_id": [r.content_id for r in records],
                "event": [r.event.name for r in records],
            }
        )
        table = frame.groupby(["account", "content_id", "event"]).size().unstack(fill_value=0)
        return table.reindex(columns=columns, fill_value=0).astype("int64")
