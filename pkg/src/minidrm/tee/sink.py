"""In-boundary display sink.

The sink is the only consumer of decrypted segment bytes. It keeps a byte
counter and a running digest; the content itself is dropped on arrival.
"""

import threading
from typing import Any

from minidrm.core.crypto import CryptoSuite


class DisplaySink:
    """Terminal of the secure video path.

    Parameters
    ----------
    sink_id : str
        Identifier reported in logs and evidence
    suite : CryptoSuite
        Suite whose hash produces the running digest

    Examples
    --------
    >>> sink = vault.create_sink("screen-0")
    >>> cdm.play(session, sink=sink)
    >>> sink.received_bytes
    1048576
    """

    def __init__(self, sink_id: str, suite: CryptoSuite):
        self.sink_id = sink_id
        self._hash: Any = suite.hash.new()
        self._received = 0
        self._lock = threading.Lock()

    def _deliver(self, plaintext: bytes) -> None:
        # called by the vault only
        with self._lock:
            self._hash.update(plaintext)
            self._received += len(plaintext)

    @property
    def received_bytes(self) -> int:
        with self._lock:
            return self._received

    @property
    def digest(self) -> bytes:
        """Digest of everything delivered so far, in delivery order."""
        with self._lock:
            return self._hash.copy().digest()

    def __repr__(self) -> str:
        return f"DisplaySink({self.sink_id!r}, received_bytes={self.received_bytes})"
