"""Content packaging: segment, rotate keys, seal segments, sign the manifest."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Tuple, Union

from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import derive_content_key, random_key_id, sign_message
from minidrm.core.logs import log_event
from minidrm.core.types import ContentKey, KeyId, KeySeed
from minidrm.core.wire import decode, encode
from minidrm.packager.manifest import (
    EncryptionScheme,
    InitData,
    PeriodKey,
    SegmentRecord,
    SignedManifest,
    segment_ad,
    segment_nonce,
    verify_manifest,
)
from minidrm.packager.registry import KeyRegistry
from minidrm.packager.segmenter import segment_content

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.mdrm"
REGISTRY_FILE = "registry.sealed"
SEGMENT_DIR = "seg"


@dataclass
class PackageConfig:
    """Packaging parameters.

    Attributes:
        content_id: Identifier of the content
        segment_size: Segment length in bytes (>= 1)
        rotation_interval: Segments per crypto-period (>= 1)
        seed: Key seed the content keys are derived from
        scheme: Segment protection (AEAD unless building a test fixture)
        sign: Sign the manifest (False only for the unsigned fixture)
        workers: Thread count for sealing segments (default: executor's choice)
    """

    content_id: str
    segment_size: int
    rotation_interval: int
    seed: KeySeed = field(repr=False)
    scheme: EncryptionScheme = EncryptionScheme.AEAD
    sign: bool = True
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        """Validate packaging parameters."""
        if not self.content_id:
            raise DrmError(ErrorCode.CONFIG, "content_id must not be empty")
        if self.segment_size < 1:
            raise DrmError(ErrorCode.CONFIG, f"segment_size must be >= 1, got {self.segment_size}")
        if self.rotation_interval < 1:
            raise DrmError(
                ErrorCode.CONFIG, f"rotation_interval must be >= 1, got {self.rotation_interval}"
            )
        if not isinstance(self.seed, KeySeed):
            self.seed = KeySeed(self.seed)


@dataclass
class PackageOutput:
    """Everything the packager emits.

    Attributes
    ----------
    manifest : SignedManifest
        Decoded manifest
    manifest_bytes : bytes
        Canonical signed manifest as published
    segments : list of bytes
        Sealed segments, position = segment index
    registry : KeyRegistry
        Keys for the license server (sealed form in ``sealed_for_transport``)
    """

    manifest: SignedManifest
    manifest_bytes: bytes
    segments: List[bytes] = field(repr=False)
    registry: KeyRegistry

    def segment_map(self) -> Dict[str, bytes]:
        """Sealed segments keyed by manifest URI."""
        return {rec.uri: self.segments[rec.index] for rec in self.manifest.segments}


def seal_segment(
    suite: CryptoSuite,
    scheme: EncryptionScheme,
    content_id: str,
    index: int,
    key: ContentKey,
    plaintext: bytes,
) -> bytes:
    """Protect one segment under its period key."""
    nonce = segment_nonce(key.period, index)
    if scheme is EncryptionScheme.PLAIN_CTR:
        return suite.cipher.apply(key.key, nonce, plaintext)
    return suite.aead.seal(key.key, nonce, segment_ad(content_id, index, key.key_id), plaintext)


def package(
    content: Union[bytes, BinaryIO],
    config: PackageConfig,
    suite: CryptoSuite,
    publisher_signing_key: bytes,
    transport_key: bytes,
) -> PackageOutput:
    """Package content into sealed segments, a signed manifest and a key registry.

    Parameters
    ----------
    content : bytes or binary file object
        Content to package
    config : PackageConfig
        Segmenting, rotation and key seed
    suite : CryptoSuite
        Active crypto suite
    publisher_signing_key : bytes
        Private key that signs the manifest
    transport_key : bytes
        Symmetric key sealing the registry for the license server

    Returns
    -------
    PackageOutput
        Manifest, sealed segments and registry

    Raises
    ------
    DrmError
        ``CONFIG`` or ``SEED_LENGTH`` for bad parameters

    Examples
    --------
    >>> out = package(data, PackageConfig("movie", 65536, 4, seed), suite, pub_sk, tk)
    >>> out.manifest.segments[0].uri
    'seg/0.bin'
    """
    plaintexts = segment_content(content, config.segment_size)
    # empty content still gets one period, so it has a key to license
    n_periods = max(1, math.ceil(len(plaintexts) / config.rotation_interval))

    keys: List[ContentKey] = []
    for period in range(n_periods):
        keys.append(derive_content_key(config.seed, random_key_id(suite), suite, period=period))

    def _seal(index: int) -> bytes:
        key = keys[index // config.rotation_interval]
        return seal_segment(
            suite, config.scheme, config.content_id, index, key, plaintexts[index]
        )

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        sealed = list(pool.map(_seal, range(len(plaintexts))))

    records = tuple(
        SegmentRecord(
            index=index,
            period=index // config.rotation_interval,
            key_id=keys[index // config.rotation_interval].key_id,
            nonce=segment_nonce(index // config.rotation_interval, index),
            uri=f"{SEGMENT_DIR}/{index}.bin",
            ciphertext_digest=suite.hash.digest(blob),
        )
        for index, blob in enumerate(sealed)
    )
    key_ids: Tuple[KeyId, ...] = tuple(k.key_id for k in keys)
    manifest = SignedManifest(
        content_id=config.content_id,
        scheme=config.scheme,
        rotation_interval=config.rotation_interval,
        segments=records,
        key_ids_per_period=tuple(PeriodKey(period=k.period, key_id=k.key_id) for k in keys),
        init_data=encode(InitData(content_id=config.content_id, key_ids=key_ids)),
        publisher_signature=b"",
    )
    if config.sign:
        manifest = sign_message(manifest, publisher_signing_key, suite)

    registry = KeyRegistry.seal(config.content_id, tuple(keys), transport_key, suite)

    log_event(
        logger,
        logging.INFO,
        "content_packaged",
        content_id=config.content_id,
        segments=len(sealed),
        periods=n_periods,
        scheme=config.scheme,
        signed=config.sign,
    )
    return PackageOutput(
        manifest=manifest,
        manifest_bytes=encode(manifest),
        segments=sealed,
        registry=registry,
    )


def write_package(output: PackageOutput, out_dir: Union[str, Path]) -> Path:
    """Write ``manifest.mdrm``, ``seg/<index>.bin`` and ``registry.sealed``.

    Raises
    ------
    DrmError
        ``IO`` if the directory cannot be written
    """
    out = Path(out_dir)
    try:
        (out / SEGMENT_DIR).mkdir(parents=True, exist_ok=True)
        for record in output.manifest.segments:
            (out / record.uri).write_bytes(output.segments[record.index])
        (out / REGISTRY_FILE).write_bytes(output.registry.sealed_for_transport)
        (out / MANIFEST_FILE).write_bytes(output.manifest_bytes)
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot write package to {out}: {e.strerror}") from e
    return out


@dataclass
class LoadedPackage:
    """A package read back from disk."""

    manifest: SignedManifest
    manifest_bytes: bytes
    root: Path

    def read_segment(self, record: SegmentRecord) -> bytes:
        """Fetch a sealed segment by its manifest record.

        Raises
        ------
        DrmError
            ``IO`` if the file is missing
        """
        path = self.root / record.uri
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise DrmError(ErrorCode.IO, f"cannot read segment {record.uri}") from e
        return blob

    def read_registry(self) -> bytes:
        try:
            return (self.root / REGISTRY_FILE).read_bytes()
        except OSError as e:
            raise DrmError(ErrorCode.IO, f"cannot read {REGISTRY_FILE}") from e


def load_package(
    package_dir: Union[str, Path],
    publisher_verification_key: Optional[bytes],
    suite: CryptoSuite,
) -> LoadedPackage:
    """Read a package directory, verifying the manifest when a key is given.

    Raises
    ------
    DrmError
        ``IO`` if files are missing, ``BAD_SIGNATURE``/``MALFORMED`` from
        manifest verification
    """
    root = Path(package_dir)
    try:
        manifest_bytes = (root / MANIFEST_FILE).read_bytes()
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot read {root / MANIFEST_FILE}") from e
    if publisher_verification_key is None:
        manifest = decode(manifest_bytes, SignedManifest)
    else:
        manifest = verify_manifest(manifest_bytes, publisher_verification_key, suite)
    return LoadedPackage(manifest=manifest, manifest_bytes=manifest_bytes, root=root)


def verify_segment_digest(record: SegmentRecord, blob: bytes, suite: CryptoSuite) -> None:
    """Reject a fetched segment whose bytes differ from the manifest digest.

    Raises
    ------
    DrmError
        ``MALFORMED`` on mismatch
    """
    if suite.hash.digest(blob) != record.ciphertext_digest:
        raise DrmError(ErrorCode.MALFORMED, f"segment {record.index} digest mismatch")
