"""On-disk store for sealed persistent licenses (offline playback).

One file per content id, holding the ``OfflineRecord`` sealed by the vault.
The store never sees plaintext keys; it only reads the record's expiry.
"""

import hashlib
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import DefaultDict, Optional, Union

from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.wire import decode
from minidrm.tee.vault import OfflineRecord

HDS_DIR_ENV = "MINIDRM_HDS_DIR"
RECORD_SUFFIX = ".mdrm"


def default_store_dir() -> Path:
    env = os.environ.get(HDS_DIR_ENV)
    if env:
        return Path(env)
    return Path.home() / ".minidrm" / "hds"


class OfflineStore:
    """File-based store of offline records with expiry-based eviction.

    Parameters
    ----------
    store_dir : str or Path, optional
        Directory for record files (default: ``$MINIDRM_HDS_DIR`` or
        ``~/.minidrm/hds``)

    Examples
    --------
    >>> store = OfflineStore()
    >>> store.set("movie", record_bytes)
    >>> store.get("movie")
    """

    def __init__(self, store_dir: Optional[Union[str, Path]] = None):
        self.store_dir = Path(store_dir) if store_dir is not None else default_store_dir()
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._locks: DefaultDict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()

    def _lock_for(self, content_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks[content_id]

    def _path(self, content_id: str) -> Path:
        """Record path for a content id.

        Parameters
        ----------
        content_id : str
            Content identifier

        Returns
        -------
        Path
            Path to the record file
        """
        name = hashlib.sha256(content_id.encode("utf-8")).hexdigest()[:32]
        return self.store_dir / f"{name}{RECORD_SUFFIX}"

    def get(self, content_id: str) -> Optional[bytes]:
        """Return the stored record, or None if absent or damaged.

        Damaged records are deleted. Expiry is left to the vault, which
        refuses an expired record with ``EXPIRED``.
        """
        path = self._path(content_id)
        with self._lock_for(content_id):
            if not path.exists():
                return None
            try:
                data = path.read_bytes()
                record = decode(data, OfflineRecord)
            except (OSError, DrmError):
                path.unlink(missing_ok=True)
                return None
            if record.content_id != content_id:
                return None
            return data

    def set(self, content_id: str, record_bytes: bytes) -> Path:
        """Store a record, replacing any previous one for the content.

        Raises
        ------
        DrmError
            ``IO`` if the file cannot be written
        """
        path = self._path(content_id)
        tmp = path.with_suffix(".tmp")
        with self._lock_for(content_id):
            try:
                fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
                with os.fdopen(fd, "wb") as f:
                    f.write(record_bytes)
                os.replace(tmp, path)
            except OSError as e:
                raise DrmError(ErrorCode.IO, f"cannot write offline record: {e.strerror}") from e
        return path

    def delete(self, content_id: str) -> None:
        with self._lock_for(content_id):
            self._path(content_id).unlink(missing_ok=True)

    def clear(self) -> None:
        """Remove all stored records."""
        for record_file in self.store_dir.glob(f"*{RECORD_SUFFIX}"):
            try:
                record_file.unlink()
            except OSError:
                pass

    def clear_expired(self, now: int) -> int:
        """Remove expired or damaged records; returns how many were removed."""
        removed = 0
        for record_file in self.store_dir.glob(f"*{RECORD_SUFFIX}"):
            try:
                record = decode(record_file.read_bytes(), OfflineRecord)
                if now < record.expiry:
                    continue
            except (OSError, DrmError):
                # damaged, drop it
                pass
            try:
                record_file.unlink()
                removed += 1
            except OSError:
                pass
        return removed
