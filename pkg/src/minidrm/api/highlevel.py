"""High-level API for minidrm.

This module provides simple functions for the two everyday flows: packaging a
file and playing a package through a license server.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

from minidrm.client.cdm import Cdm
from minidrm.client.offline import OfflineStore
from minidrm.client.session import PlaybackSession
from minidrm.client.transport import LicenseTransport
from minidrm.core.clock import Clock
from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import KeyPair, KeyRole, generate_key_seed, read_keypair
from minidrm.core.logs import log_event
from minidrm.core.suites import get_suite
from minidrm.core.types import KEY_SEED_SIZE, ClientCertificate, KeySeed
from minidrm.packager.package import (
    PackageConfig,
    PackageOutput,
    load_package,
    package,
    write_package,
)
from minidrm.tee.vault import TeeVault

logger = logging.getLogger(__name__)

DEFAULT_SEGMENT_SIZE = 64 * 1024
DEFAULT_ROTATION = 4

KeySource = Union[str, Path, KeyPair]


def _keypair(source: KeySource, role: KeyRole) -> KeyPair:
    if isinstance(source, KeyPair):
        if source.key_role is not role:
            raise DrmError(ErrorCode.CONFIG, f"expected a {role.value} key, got {source.role}")
        return source
    return read_keypair(source, role)


def load_or_create_seed(path: Union[str, Path], suite: CryptoSuite) -> KeySeed:
    """Read the raw 30-byte key seed at ``path``, creating it (mode 0600) if absent.

    Raises
    ------
    DrmError
        ``SEED_LENGTH`` if the file holds anything but 30 bytes, ``IO`` if it
        cannot be read or written
    """
    path = Path(path)
    try:
        if path.exists():
            return KeySeed(path.read_bytes())
        seed = generate_key_seed(suite)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "wb") as f:
            f.write(seed.seed)
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot access seed file {path}: {e.strerror}") from e
    log_event(logger, logging.INFO, "seed_created", path=path, size=KEY_SEED_SIZE)
    return seed


def pack_file(
    input_path: Union[str, Path],
    out_dir: Union[str, Path],
    content_id: str,
    publisher_key: KeySource,
    transport_key: KeySource,
    seed_file: Union[str, Path],
    segment_size: int = DEFAULT_SEGMENT_SIZE,
    rotation_interval: int = DEFAULT_ROTATION,
    suite: Optional[CryptoSuite] = None,
) -> PackageOutput:
    """Package a file into ``out_dir``.

    Args:
        input_path: Content to package
        out_dir: Package directory (manifest, segments, sealed registry)
        content_id: Identifier of the content
        publisher_key: Publisher KEYPAIR (or its file) that signs the manifest
        transport_key: Transport KEYPAIR (or its file) sealing the registry
        seed_file: Raw key seed file; created when missing
        segment_size: Segment length in bytes, default 64 KiB
        rotation_interval: Segments per crypto-period, default 4
        suite: Crypto suite (default: the publisher key's suite)

    Returns:
        PackageOutput as written to disk

    Raises:
        DrmError: ``IO`` for unreadable input or unwritable output, ``CONFIG``
            for bad parameters or mismatched keys

    Example:
        >>> out = pack_file("movie.bin", "out/movie", "movie", "keys/publisher.key",
        ...                 "keys/transport.key", "keys/movie.seed")
        >>> len(out.segments)
        16
    """
    publisher = _keypair(publisher_key, KeyRole.PUBLISHER)
    transport = _keypair(transport_key, KeyRole.TRANSPORT)
    suite = suite or get_suite(publisher.suite)
    if transport.suite != suite.name:
        raise DrmError(ErrorCode.CONFIG, f"transport key is for suite {transport.suite}")

    seed = load_or_create_seed(seed_file, suite)
    config = PackageConfig(
        content_id=content_id,
        segment_size=segment_size,
        rotation_interval=rotation_interval,
        seed=seed,
    )
    try:
        with open(input_path, "rb") as f:
            output = package(
                f,
                config,
                suite,
                publisher.require("sign_private"),
                transport.require("symmetric_key"),
            )
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot read {input_path}: {e.strerror}") from e
    write_package(output, out_dir)
    return output


@dataclass(frozen=True)
class PlaybackResult:
    """Outcome of one playback.

    Attributes:
        content_id: Content played
        delivered_bytes: Plaintext bytes delivered to the sink
        digest: Sink digest over everything delivered
        mode: License mode name
        expiry: License expiry (Unix seconds), if any
        stored_offline: Whether the license was kept for offline use
    """

    content_id: str
    delivered_bytes: int
    digest: bytes
    mode: Optional[str]
    expiry: Optional[int]
    stored_offline: bool = False

    @property
    def hexdigest(self) -> str:
        return self.digest.hex()


def _play_to_end(cdm: Cdm, vault: TeeVault, session: PlaybackSession) -> PlaybackResult:
    sink = vault.create_sink()
    try:
        cdm.play(session, sink)
    finally:
        cdm.stop(session)
    return PlaybackResult(
        content_id=session.content_id,
        delivered_bytes=sink.received_bytes,
        digest=sink.digest,
        mode=session.mode,
        expiry=session.expiry,
    )


def _device(identity: KeySource) -> Tuple[ClientCertificate, CryptoSuite, TeeVault]:
    keypair = _keypair(identity, KeyRole.CLIENT)
    if keypair.client_certificate is None:
        raise DrmError(ErrorCode.CONFIG, "client identity carries no certificate")
    suite = get_suite(keypair.suite)
    return keypair.client_certificate, suite, TeeVault(keypair, suite)


def play_content(
    package_dir: Union[str, Path],
    identity: KeySource,
    auth_token: str,
    transport: LicenseTransport,
    root_public_key: bytes,
    publisher_public_key: bytes,
    offline_store: Optional[OfflineStore] = None,
    clock: Optional[Clock] = None,
) -> PlaybackResult:
    """Acquire a license for a package and play it to the end.

    The server certificate is fetched through ``transport`` and verified
    against ``root_public_key`` before any request is sent. When
    ``offline_store`` is given and the license is persistent, it is stored
    for later ``resume_content`` calls.

    Args:
        package_dir: Package written by ``pack_file``
        identity: Client KEYPAIR (or its file) with its certificate
        auth_token: Account token presented to the server
        transport: Channel to the license server
        root_public_key: Root verification key
        publisher_public_key: Manifest verification key
        offline_store: Store for persistent licenses, optional
        clock: Client time source, optional

    Returns:
        PlaybackResult with the sink digest

    Raises:
        DrmError: any protocol or playback failure

    Example:
        >>> result = play_content("out/movie", "keys/alice.key", "alice-token",
        ...                       HttpLicenseTransport("http://127.0.0.1:8400"),
        ...                       root_pub, publisher_pub)
        >>> result.hexdigest == hashlib.sha256(original).hexdigest()
        True
    """
    certificate, suite, vault = _device(identity)
    loaded = load_package(package_dir, publisher_public_key, suite)
    cdm = Cdm(
        vault,
        certificate,
        transport.fetch_server_certificate(),
        root_public_key,
        publisher_public_key,
        suite,
        clock=clock,
        transport=transport,
        offline_store=offline_store,
    )
    session = cdm.open_session(loaded.manifest, loaded.read_segment)
    cdm.acquire_license(session, auth_token)

    stored = False
    if offline_store is not None and session.receipt is not None:
        if session.receipt.policy.persistent:
            cdm.store_offline(session)
            stored = True
    result = _play_to_end(cdm, vault, session)
    log_event(
        logger,
        logging.INFO,
        "content_played",
        content_id=result.content_id,
        delivered=result.delivered_bytes,
        stored=stored,
    )
    if stored:
        return dataclasses.replace(result, stored_offline=True)
    return result


def resume_content(
    package_dir: Union[str, Path],
    identity: KeySource,
    publisher_public_key: bytes,
    offline_store: OfflineStore,
    content_id: Optional[str] = None,
    clock: Optional[Clock] = None,
) -> PlaybackResult:
    """Play a package from its stored offline license, without a server.

    When ``content_id`` is given the package must hold that content.

    Raises:
        DrmError: ``KEY_MISSING`` if no license is stored, ``DEVICE_MISMATCH``
            for a record sealed by another device, ``EXPIRED`` if it expired
    """
    certificate, suite, vault = _device(identity)
    loaded = load_package(package_dir, publisher_public_key, suite)
    if content_id is not None and loaded.manifest.content_id != content_id:
        raise DrmError(
            ErrorCode.CONFIG, f"package holds {loaded.manifest.content_id}, not {content_id}"
        )
    cdm = Cdm(
        vault,
        certificate,
        None,
        b"",
        publisher_public_key,
        suite,
        clock=clock,
        offline_store=offline_store,
    )
    session = cdm.resume_offline(loaded.manifest, loaded.read_segment)
    return _play_to_end(cdm, vault, session)
