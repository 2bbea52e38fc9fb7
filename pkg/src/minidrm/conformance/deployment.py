"""Isolated in-process deployments for the conformance harness.

A ``Deployment`` owns a complete miniature system: root, publisher,
transport and server identities, three packaged contents written to a work
directory (rental, lease and persistent), a license server on a manual clock
and a factory for client devices. Negative fixtures weaken exactly one
mechanism each.
"""

import logging
import shutil
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from minidrm.client.cdm import Cdm
from minidrm.client.offline import OfflineStore
from minidrm.client.session import PlaybackSession
from minidrm.client.transport import InProcessTransport
from minidrm.core.clock import ManualClock
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import (
    KeyPair,
    generate_client,
    generate_publisher,
    generate_root,
    generate_server,
    generate_transport,
)
from minidrm.core.messages import CURRENT_PROTOCOL_VERSION, LicenseMode
from minidrm.core.suites import DEFAULT_SUITE, get_suite
from minidrm.core.types import KEY_SEED_SIZE, KeySeed, SecurityLevel
from minidrm.packager.manifest import EncryptionScheme
from minidrm.packager.package import (
    LoadedPackage,
    PackageConfig,
    load_package,
    package,
    write_package,
)
from minidrm.server.policy import ContentPolicy
from minidrm.server.service import LicenseServer
from minidrm.tee.vault import TeeVault

AUTH_TOKEN = "conformance-token"
ACCOUNT = "conformance"
SERVER_CERT_LIFETIME = 10 * 365 * 24 * 3600


class Fixture(str, Enum):
    """Deployment variants; every one except NONE disables one protection."""

    NONE = "none"
    UNSIGNED_MANIFEST = "unsigned_manifest"
    NO_REPLAY_CHECK = "no_replay_check"
    PLAIN_SEGMENTS = "plain_segments"
    NO_VERSION_FLOOR = "no_version_floor"
    NO_EXPIRY_ENFORCEMENT = "no_expiry_enforcement"
    LEAKY_VAULT = "leaky_vault"

    @classmethod
    def parse(cls, value: Union[str, "Fixture"]) -> "Fixture":
        """Accept a member or its name.

        Raises
        ------
        DrmError
            ``HARNESS_SETUP`` for an unknown fixture
        """
        if isinstance(value, Fixture):
            return value
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise DrmError(
                ErrorCode.HARNESS_SETUP, f"Unknown fixture '{value}'. Available: {names}"
            ) from None


# The security property each negative fixture is expected to break.
FIXTURE_TARGETS: Dict[Fixture, int] = {
    Fixture.UNSIGNED_MANIFEST: 16,
    Fixture.NO_REPLAY_CHECK: 9,
    Fixture.PLAIN_SEGMENTS: 14,
    Fixture.NO_VERSION_FLOOR: 10,
    Fixture.NO_EXPIRY_ENFORCEMENT: 6,
    Fixture.LEAKY_VAULT: 5,
}


@dataclass
class DeploymentSettings:
    """Parameters of a conformance deployment.

    Attributes:
        suite: Crypto suite name
        content_size: Bytes of random content per package
        segment_size: Segment length in bytes
        rotation_interval: Segments per crypto-period
        rental_duration: Seconds a rental license lives
        lease_duration: Seconds a lease slot lives without renewal
        lease_capacity: Concurrent lease slots per account
        replay_window: Server replay window in seconds
        version_floor: Lowest protocol version the server accepts
        extraction_calls: Randomized API calls made by the key extraction attack
        flip_positions: Byte positions mutated by the tamper attacks
    """

    suite: str = DEFAULT_SUITE
    content_size: int = 24 * 1024
    segment_size: int = 2048
    rotation_interval: int = 4
    rental_duration: int = 3600
    lease_duration: int = 120
    lease_capacity: int = 2
    replay_window: int = 600
    version_floor: int = 2
    extraction_calls: int = 10_000
    flip_positions: int = 48

    def __post_init__(self) -> None:
        """Validate settings."""
        positive = {
            "content_size": self.content_size,
            "segment_size": self.segment_size,
            "rotation_interval": self.rotation_interval,
            "rental_duration": self.rental_duration,
            "lease_duration": self.lease_duration,
            "lease_capacity": self.lease_capacity,
            "replay_window": self.replay_window,
            "extraction_calls": self.extraction_calls,
            "flip_positions": self.flip_positions,
        }
        for name, value in positive.items():
            if value < 1:
                raise DrmError(ErrorCode.HARNESS_SETUP, f"{name} must be >= 1, got {value}")
        if not 2 <= self.version_floor <= CURRENT_PROTOCOL_VERSION:
            raise DrmError(
                ErrorCode.HARNESS_SETUP,
                f"version_floor must be between 2 and {CURRENT_PROTOCOL_VERSION}, "
                f"got {self.version_floor}",
            )


@dataclass
class PackagedContent:
    """One content as the harness sees it: plaintext, package and policy."""

    content_id: str
    plaintext: bytes
    loaded: LoadedPackage
    policy: ContentPolicy
    keys: Tuple[bytes, ...]
    seed: KeySeed

    @property
    def segments(self) -> List[bytes]:
        return [self.loaded.read_segment(r) for r in self.loaded.manifest.segments]


class LogCapture(logging.Handler):
    """Collects every formatted record of the ``minidrm`` logger."""

    def __init__(self) -> None:
        super().__init__(level=logging.DEBUG)
        self.lines: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.lines.append(self.format(record))


@dataclass
class ClientDevice:
    """A provisioned client: identity, vault and CDM."""

    identity: KeyPair
    vault: TeeVault
    cdm: Cdm


class Deployment:
    """Self-contained deployment on a manual clock.

    Parameters
    ----------
    settings : DeploymentSettings
        Sizes, durations and suite
    fixture : Fixture
        Negative fixture to build, or ``Fixture.NONE``
    rng : numpy.random.Generator
        Source of content bytes and attack choices
    workdir : Path, optional
        Directory for package files (default: a private temporary directory
        removed by ``close``)

    Examples
    --------
    >>> with Deployment(DeploymentSettings(), Fixture.NONE, np.random.default_rng(0)) as dep:
    ...     device = dep.new_client()
    ...     session = dep.licensed_session(device, dep.rental)
    """

    def __init__(
        self,
        settings: DeploymentSettings,
        fixture: Fixture,
        rng: np.random.Generator,
        workdir: Optional[Path] = None,
    ):
        self.settings = settings
        self.fixture = Fixture.parse(fixture)
        self.rng = rng
        self._own_workdir = workdir is None
        self.workdir = Path(workdir) if workdir is not None else Path(tempfile.mkdtemp())
        self.logs = LogCapture()
        self._logger = logging.getLogger("minidrm")
        self._saved_level = self._logger.level

        try:
            self.suite = get_suite(settings.suite)
        except DrmError as e:
            self.close()
            raise DrmError(ErrorCode.HARNESS_SETUP, e.message) from e
        self._logger.addHandler(self.logs)
        self._logger.setLevel(logging.DEBUG)

        try:
            self.clock = ManualClock()
            floor = 0 if self.fixture is Fixture.NO_VERSION_FLOOR else settings.version_floor
            self.root = generate_root(self.suite)
            self.publisher = generate_publisher(self.suite)
            self.transport_key = generate_transport(self.suite).require("symmetric_key")
            self.server_identity = generate_server(
                self.suite, self.root, self.clock.now() + SERVER_CERT_LIFETIME
            )
            self.server = LicenseServer(
                self.server_identity,
                self.suite,
                self.root.require("sign_public"),
                clock=self.clock,
                auth={AUTH_TOKEN: ACCOUNT},
                replay_window=settings.replay_window,
                version_floor=floor,
                lease_duration=settings.lease_duration,
                rate_limit=None,
                replay_check=self.fixture is not Fixture.NO_REPLAY_CHECK,
            )
            self.transport = InProcessTransport(self.server, capture=True)

            self.rental = self._publish(
                "conformance-rental",
                ContentPolicy(mode=LicenseMode.RENTAL, duration=settings.rental_duration),
            )
            self.lease = self._publish(
                "conformance-lease",
                ContentPolicy(
                    mode=LicenseMode.LEASE,
                    duration=settings.rental_duration,
                    max_concurrent=settings.lease_capacity,
                ),
            )
            self.offline = self._publish(
                "conformance-offline",
                ContentPolicy(
                    mode=LicenseMode.PERSISTENT,
                    duration=settings.rental_duration,
                    persistent=True,
                ),
            )
        except OSError as e:
            self.close()
            raise DrmError(ErrorCode.HARNESS_SETUP, f"cannot build deployment: {e}") from e
        except Exception:
            self.close()
            raise

    # ------------------------------------------------------------------
    # setup helpers
    # ------------------------------------------------------------------

    def random_bytes(self, n: int) -> bytes:
        return self.rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()

    def _publish(self, content_id: str, policy: ContentPolicy) -> PackagedContent:
        plaintext = self.random_bytes(self.settings.content_size)
        seed = KeySeed(self.suite.rng.random_bytes(KEY_SEED_SIZE))
        config = PackageConfig(
            content_id=content_id,
            segment_size=self.settings.segment_size,
            rotation_interval=self.settings.rotation_interval,
            seed=seed,
            scheme=(
                EncryptionScheme.PLAIN_CTR
                if self.fixture is Fixture.PLAIN_SEGMENTS
                else EncryptionScheme.AEAD
            ),
            sign=self.fixture is not Fixture.UNSIGNED_MANIFEST,
        )
        output = package(
            plaintext,
            config,
            self.suite,
            self.publisher.require("sign_private"),
            self.transport_key,
        )
        out_dir = write_package(output, self.workdir / content_id)
        loaded = load_package(out_dir, None, self.suite)
        self.server.add_sealed_content(loaded.read_registry(), self.transport_key, policy)
        return PackagedContent(
            content_id=content_id,
            plaintext=plaintext,
            loaded=loaded,
            policy=policy,
            keys=tuple(k.key for k in output.registry.entries),
            seed=seed,
        )

    @property
    def contents(self) -> Tuple[PackagedContent, ...]:
        return (self.rental, self.lease, self.offline)

    @property
    def key_canaries(self) -> Tuple[bytes, ...]:
        """Every content key of the deployment."""
        return tuple(k for c in self.contents for k in c.keys)

    # ------------------------------------------------------------------
    # clients
    # ------------------------------------------------------------------

    def new_client(
        self,
        level: SecurityLevel = SecurityLevel.SOFTWARE,
        supported_versions: Optional[Sequence[int]] = None,
        root: Optional[KeyPair] = None,
        server_identity: Optional[KeyPair] = None,
        transport: Optional[InProcessTransport] = None,
    ) -> ClientDevice:
        """Provision a client device against this deployment.

        ``root``, ``server_identity`` and ``transport`` let attacks build
        devices certified by a foreign root or pointed at a rogue server.
        """
        identity = generate_client(self.suite, root or self.root, level)
        vault = TeeVault(
            identity,
            self.suite,
            enforce_expiry=self.fixture is not Fixture.NO_EXPIRY_ENFORCEMENT,
            debug_export=self.fixture is Fixture.LEAKY_VAULT,
        )
        server_cert = (server_identity or self.server_identity).server_certificate
        assert identity.client_certificate is not None and server_cert is not None
        cdm = Cdm(
            vault,
            identity.client_certificate,
            server_cert,
            self.root.require("sign_public"),
            self.publisher.require("sign_public"),
            self.suite,
            clock=self.clock,
            transport=transport or self.transport,
            offline_store=OfflineStore(self.workdir / "hds"),
            verify_manifests=self.fixture is not Fixture.UNSIGNED_MANIFEST,
            supported_versions=supported_versions,
        )
        return ClientDevice(identity=identity, vault=vault, cdm=cdm)

    def open_session(self, device: ClientDevice, content: PackagedContent) -> PlaybackSession:
        manifest = device.cdm.load_manifest(content.loaded.manifest_bytes)
        return device.cdm.open_session(manifest, content.loaded.read_segment)

    def licensed_session(self, device: ClientDevice, content: PackagedContent) -> PlaybackSession:
        session = self.open_session(device, content)
        device.cdm.acquire_license(session, AUTH_TOKEN)
        return session

    # ------------------------------------------------------------------
    # teardown
    # ------------------------------------------------------------------

    def close(self) -> None:
        self._logger.removeHandler(self.logs)
        self._logger.setLevel(self._saved_level)
        if self._own_workdir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def __enter__(self) -> "Deployment":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
