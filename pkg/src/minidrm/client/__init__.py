"""Client side: CDM, playback sessions, offline store and transports."""

from minidrm.client.cdm import Cdm
from minidrm.client.offline import OfflineStore, default_store_dir
from minidrm.client.session import TRANSITIONS, PlaybackSession, SessionState
from minidrm.client.transport import HttpLicenseTransport, InProcessTransport, LicenseTransport

__all__ = [
    "Cdm",
    "HttpLicenseTransport",
    "InProcessTransport",
    "LicenseTransport",
    "OfflineStore",
    "PlaybackSession",
    "SessionState",
    "TRANSITIONS",
    "default_store_dir",
]
