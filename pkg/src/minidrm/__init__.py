"""minidrm - a desk-scale DRM pipeline.

The package covers content packaging with key rotation, a license server
with anti-replay, expiry and lease policies, a client CDM, an emulated TEE
key vault, and a conformance harness that checks the deployment against 21
security properties.

Example:
    >>> import minidrm
    >>> out = minidrm.pack_file("movie.bin", "out/movie", "movie",
    ...                         "keys/publisher.key", "keys/transport.key", "keys/movie.seed")
    >>> report = minidrm.run_suite(seed=7)
    >>> print(report.to_table())
"""

__version__ = "0.1.0"
__license__ = "MIT"

from minidrm.api.highlevel import (
    PlaybackResult,
    load_or_create_seed,
    pack_file,
    play_content,
    resume_content,
)
from minidrm.client import Cdm, HttpLicenseTransport, InProcessTransport, OfflineStore
from minidrm.conformance import ConformanceReport, Fixture, Verdict, run_suite
from minidrm.core import (
    DrmError,
    ErrorCode,
    KeyPair,
    KeyRole,
    LicenseMode,
    SecurityLevel,
    get_suite,
    read_keypair,
)
from minidrm.packager import PackageConfig, load_package, package
from minidrm.server import ContentPolicy, LicenseServer
from minidrm.tee import DisplaySink, TeeVault

__all__ = [
    "Cdm",
    "ConformanceReport",
    "ContentPolicy",
    "DisplaySink",
    "DrmError",
    "ErrorCode",
    "Fixture",
    "HttpLicenseTransport",
    "InProcessTransport",
    "KeyPair",
    "KeyRole",
    "LicenseMode",
    "LicenseServer",
    "OfflineStore",
    "PackageConfig",
    "PlaybackResult",
    "SecurityLevel",
    "TeeVault",
    "Verdict",
    "get_suite",
    "load_or_create_seed",
    "load_package",
    "pack_file",
    "package",
    "play_content",
    "read_keypair",
    "resume_content",
    "run_suite",
]
