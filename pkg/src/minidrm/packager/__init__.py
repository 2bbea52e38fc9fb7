"""Content packaging: segmentation, key rotation, sealing and manifest signing."""

from minidrm.packager.manifest import (
    EncryptionScheme,
    InitData,
    SegmentRecord,
    SignedManifest,
    decode_init_data,
    segment_ad,
    segment_nonce,
    verify_manifest,
)
from minidrm.packager.package import (
    LoadedPackage,
    PackageConfig,
    PackageOutput,
    load_package,
    package,
    seal_segment,
    verify_segment_digest,
    write_package,
)
from minidrm.packager.registry import KeyRegistry, open_registry
from minidrm.packager.segmenter import segment_content

__all__ = [
    "EncryptionScheme",
    "InitData",
    "KeyRegistry",
    "LoadedPackage",
    "PackageConfig",
    "PackageOutput",
    "SegmentRecord",
    "SignedManifest",
    "decode_init_data",
    "load_package",
    "open_registry",
    "package",
    "seal_segment",
    "segment_ad",
    "segment_content",
    "segment_nonce",
    "verify_manifest",
    "verify_segment_digest",
    "write_package",
]
