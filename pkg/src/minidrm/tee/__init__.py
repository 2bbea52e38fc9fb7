"""Emulated TEE: key vault and display sink."""

from minidrm.tee.sink import DisplaySink
from minidrm.tee.vault import (
    InstallReceipt,
    OfflineRecord,
    PlaybackGrant,
    SessionHandle,
    TeeVault,
)

__all__ = [
    "DisplaySink",
    "InstallReceipt",
    "OfflineRecord",
    "PlaybackGrant",
    "SessionHandle",
    "TeeVault",
]
