"""Shared domain types, wire codec and cryptographic contracts."""

from minidrm.core.clock import Clock, ManualClock, SystemClock
from minidrm.core.crypto import Aead, Cipher, CryptoSuite, HashFunction, Kem, Rng, SignatureScheme
from minidrm.core.errors import DrmError, ErrorCode, exit_code_for, http_status_for
from minidrm.core.keys import (
    KeyPair,
    KeyRole,
    derive_content_key,
    device_id_for,
    generate_key_seed,
    open_signed,
    random_key_id,
    read_keypair,
    secure_content_id,
    sign_detached,
    sign_message,
    verify_attestation,
    verify_client_certificate,
    verify_detached,
    verify_server_certificate,
    write_keypair,
)
from minidrm.core.messages import (
    CURRENT_PROTOCOL_VERSION,
    PROTOCOL_VERSIONS,
    Ckc,
    LicenseBody,
    LicenseMode,
    LicensePolicy,
    MeteringEvent,
    Spc,
)
from minidrm.core.suites import (
    ALTERNATE_SUITE,
    DEFAULT_SUITE,
    available_suites,
    get_suite,
    register_suite,
)
from minidrm.core.types import (
    AttestationReport,
    ClientCertificate,
    ContentKey,
    KeyId,
    KeySeed,
    SecurityLevel,
    ServerCertificate,
)
from minidrm.core.wire import decode, decode_any, encode

__all__ = [
    "Aead",
    "ALTERNATE_SUITE",
    "AttestationReport",
    "Cipher",
    "Ckc",
    "ClientCertificate",
    "Clock",
    "ContentKey",
    "CryptoSuite",
    "CURRENT_PROTOCOL_VERSION",
    "DEFAULT_SUITE",
    "DrmError",
    "ErrorCode",
    "HashFunction",
    "Kem",
    "KeyId",
    "KeyPair",
    "KeyRole",
    "KeySeed",
    "LicenseBody",
    "LicenseMode",
    "LicensePolicy",
    "ManualClock",
    "MeteringEvent",
    "PROTOCOL_VERSIONS",
    "Rng",
    "SecurityLevel",
    "ServerCertificate",
    "SignatureScheme",
    "Spc",
    "SystemClock",
    "available_suites",
    "decode",
    "decode_any",
    "derive_content_key",
    "device_id_for",
    "encode",
    "exit_code_for",
    "generate_key_seed",
    "get_suite",
    "http_status_for",
    "open_signed",
    "random_key_id",
    "read_keypair",
    "register_suite",
    "secure_content_id",
    "sign_detached",
    "sign_message",
    "verify_attestation",
    "verify_client_certificate",
    "verify_detached",
    "verify_server_certificate",
    "write_keypair",
]
