"""Key derivation, detached signatures, certificates and key files.

Examples
--------
>>> from minidrm.core.suites import get_suite
>>> suite = get_suite("x25519-ed25519")
>>> seed = generate_key_seed(suite)
>>> key = derive_content_key(seed, random_key_id(suite), suite, period=0)
>>> len(key.key)
16
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Type, TypeVar, Union

from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.logs import log_event
from minidrm.core.types import (
    CONTENT_KEY_SIZE,
    DEVICE_ID_SIZE,
    KEY_ID_SIZE,
    KEY_SEED_SIZE,
    AttestationReport,
    ClientCertificate,
    ContentKey,
    KeyId,
    KeySeed,
    SecurityLevel,
    ServerCertificate,
)
from minidrm.core.wire import (
    Kind,
    MessageType,
    WireMessage,
    decode,
    encode,
    signature_field,
    signed_payload,
    split_signed,
    wire,
)

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=WireMessage)

CONTENT_KEY_LABEL = b"minidrm/ck/v1"
TRANSPORT_KEY_SIZE = 16


# --------------------------------------------------------------------------
# key material
# --------------------------------------------------------------------------


def generate_key_seed(suite: CryptoSuite) -> KeySeed:
    """Draw a fresh 30-byte seed from the suite RNG."""
    return KeySeed(suite.rng.random_bytes(KEY_SEED_SIZE))


def random_key_id(suite: CryptoSuite) -> KeyId:
    return KeyId(suite.rng.random_bytes(KEY_ID_SIZE))


def derive_content_key(
    seed: Union[KeySeed, bytes], key_id: KeyId, suite: CryptoSuite, period: int = 0
) -> ContentKey:
    """Derive the content key for ``key_id``.

    ``key = HASH(seed ‖ key_id ‖ "minidrm/ck/v1")[:16]``

    Parameters
    ----------
    seed : KeySeed or bytes
        30-byte key seed
    key_id : KeyId
        Identifier of the key
    suite : CryptoSuite
        Suite supplying HASH
    period : int, default 0
        Crypto-period the caller assigns to the key

    Returns
    -------
    ContentKey
        Deterministic for a given (seed, key_id)

    Raises
    ------
    DrmError
        ``SEED_LENGTH`` if the seed is not 30 bytes
    """
    if not isinstance(seed, KeySeed):
        seed = KeySeed(seed)
    digest = suite.hash.digest(seed.seed + bytes(key_id) + CONTENT_KEY_LABEL)
    return ContentKey(key_id=key_id, key=digest[:CONTENT_KEY_SIZE], period=period)


def device_id_for(public_key: bytes, suite: CryptoSuite) -> bytes:
    """Anonymous device identifier: HASH(public key), 32 bytes."""
    return suite.hash.digest(public_key)[:DEVICE_ID_SIZE]


def secure_content_id(content_id: str, suite: CryptoSuite) -> bytes:
    """Opaque content identifier sent in license requests."""
    return suite.hash.digest(content_id.encode("utf-8"))


# --------------------------------------------------------------------------
# signatures
# --------------------------------------------------------------------------


def sign_detached(payload: bytes, signing_key: bytes, suite: CryptoSuite) -> bytes:
    return suite.sig.sign(signing_key, payload)


def verify_detached(
    payload: bytes, signature: bytes, verification_key: bytes, suite: CryptoSuite
) -> bool:
    """Accept exactly the signatures ``sign_detached`` produced for the matching key."""
    return suite.sig.verify(verification_key, payload, signature)


def sign_message(message: M, signing_key: bytes, suite: CryptoSuite) -> M:
    """Return a copy of ``message`` with its signature field filled in."""
    signature = sign_detached(signed_payload(message), signing_key, suite)
    return dataclasses.replace(message, **{signature_field(type(message)): signature})


def open_signed(data: bytes, cls: Type[M], verification_key: bytes, suite: CryptoSuite) -> M:
    """Verify the detached signature of ``data``, then decode it as ``cls``.

    No semantic field is interpreted before the signature checks out.

    Raises
    ------
    DrmError
        ``MALFORMED`` on an envelope or framing violation, ``BAD_SIGNATURE``
        if the signature does not verify
    """
    payload, signature = split_signed(data, cls)
    if not verify_detached(payload, signature, verification_key, suite):
        raise DrmError(ErrorCode.BAD_SIGNATURE, f"{cls.__name__} signature rejected")
    return decode(data, cls)


def message_signature_valid(
    message: WireMessage, verification_key: bytes, suite: CryptoSuite
) -> bool:
    signature = getattr(message, signature_field(type(message)))
    return verify_detached(signed_payload(message), signature, verification_key, suite)


# --------------------------------------------------------------------------
# certificates and attestation
# --------------------------------------------------------------------------


def verify_client_certificate(
    cert: ClientCertificate, root_public_key: bytes, suite: CryptoSuite
) -> bool:
    """Check suite, identifier derivations and the root signature."""
    if cert.suite != suite.name:
        return False
    if cert.device_id != device_id_for(cert.client_public_key, suite):
        return False
    if cert.domain_kem_key is not None and cert.domain_id != device_id_for(
        cert.domain_kem_key, suite
    ):
        return False
    return message_signature_valid(cert, root_public_key, suite)


def verify_server_certificate(
    cert: ServerCertificate, root_public_key: bytes, suite: CryptoSuite, now: int
) -> bool:
    """Check suite, expiry (``now < not_after``) and the root signature."""
    if cert.suite != suite.name or now >= cert.not_after:
        return False
    return message_signature_valid(cert, root_public_key, suite)


def verify_attestation(
    report: AttestationReport,
    nonce: bytes,
    verification_key: bytes,
    suite: CryptoSuite,
) -> AttestationReport:
    """Accept a vault attestation only if it is authentic and fresh.

    Raises
    ------
    DrmError
        ``BAD_SIGNATURE`` if the vault signature fails, ``REPLAY`` if the
        report echoes a different nonce than the one expected
    """
    if not message_signature_valid(report, verification_key, suite):
        raise DrmError(ErrorCode.BAD_SIGNATURE, "attestation signature rejected")
    if report.nonce != nonce:
        raise DrmError(ErrorCode.REPLAY, "attestation nonce is stale")
    return report


# --------------------------------------------------------------------------
# key files
# --------------------------------------------------------------------------


class KeyRole(str, Enum):
    ROOT = "root"
    PUBLISHER = "publisher"
    SERVER = "server"
    CLIENT = "client"
    VAULT = "vault"
    TRANSPORT = "transport"
    DOMAIN = "domain"


@dataclass(frozen=True)
class KeyPair(WireMessage):
    """Contents of a KEYPAIR key file; which fields are set depends on the role."""

    TYPE_TAG = MessageType.KEYPAIR

    role: str = wire(1, Kind.STR)
    suite: str = wire(2, Kind.STR)
    sign_private: Optional[bytes] = wire(3, Kind.BYTES, optional=True, secret=True)
    sign_public: Optional[bytes] = wire(4, Kind.BYTES, optional=True)
    kem_private: Optional[bytes] = wire(5, Kind.BYTES, optional=True, secret=True)
    kem_public: Optional[bytes] = wire(6, Kind.BYTES, optional=True)
    symmetric_key: Optional[bytes] = wire(7, Kind.BYTES, optional=True, secret=True)
    client_certificate: Optional[ClientCertificate] = wire(
        8, Kind.MESSAGE, of=ClientCertificate, optional=True
    )
    server_certificate: Optional[ServerCertificate] = wire(
        9, Kind.MESSAGE, of=ServerCertificate, optional=True
    )
    domain_kem_private: Optional[bytes] = wire(10, Kind.BYTES, optional=True, secret=True)
    domain_id: Optional[bytes] = wire(11, Kind.BYTES, optional=True)

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.role not in {r.value for r in KeyRole}:
            raise ValueError(f"Unknown key role: {self.role}")

    @property
    def key_role(self) -> KeyRole:
        return KeyRole(self.role)

    def require(self, attribute: str) -> bytes:
        """Return a key field that the caller's role needs.

        Raises
        ------
        DrmError
            ``CONFIG`` if the field is absent
        """
        value = getattr(self, attribute)
        if value is None:
            raise DrmError(ErrorCode.CONFIG, f"{self.role} key file lacks {attribute}")
        return value


def _sign_pair(role: KeyRole, suite: CryptoSuite) -> KeyPair:
    private, public = suite.sig.generate()
    return KeyPair(role=role.value, suite=suite.name, sign_private=private, sign_public=public)


def generate_root(suite: CryptoSuite) -> KeyPair:
    return _sign_pair(KeyRole.ROOT, suite)


def generate_publisher(suite: CryptoSuite) -> KeyPair:
    return _sign_pair(KeyRole.PUBLISHER, suite)


def generate_transport(suite: CryptoSuite) -> KeyPair:
    return KeyPair(
        role=KeyRole.TRANSPORT.value,
        suite=suite.name,
        symmetric_key=suite.rng.random_bytes(TRANSPORT_KEY_SIZE),
    )


def generate_domain(suite: CryptoSuite) -> KeyPair:
    kem_private, kem_public = suite.kem.generate()
    return KeyPair(
        role=KeyRole.DOMAIN.value,
        suite=suite.name,
        kem_private=kem_private,
        kem_public=kem_public,
        domain_id=device_id_for(kem_public, suite),
    )


def generate_vault(suite: CryptoSuite) -> KeyPair:
    """Uncertified device identity: signing and KEM key pairs."""
    sign_private, sign_public = suite.sig.generate()
    kem_private, kem_public = suite.kem.generate()
    return KeyPair(
        role=KeyRole.VAULT.value,
        suite=suite.name,
        sign_private=sign_private,
        sign_public=sign_public,
        kem_private=kem_private,
        kem_public=kem_public,
    )


def generate_server(suite: CryptoSuite, root: Optional[KeyPair], not_after: int) -> KeyPair:
    """Server identity with a root-issued certificate valid until ``not_after``."""
    if root is None:
        raise DrmError(ErrorCode.ROOT_MISSING, "a root key is required to certify a server")
    sign_private, sign_public = suite.sig.generate()
    kem_private, kem_public = suite.kem.generate()
    cert = ServerCertificate(
        server_public_key=sign_public,
        server_kem_key=kem_public,
        not_after=not_after,
        suite=suite.name,
        issuer_signature=b"",
    )
    cert = sign_message(cert, root.require("sign_private"), suite)
    return KeyPair(
        role=KeyRole.SERVER.value,
        suite=suite.name,
        sign_private=sign_private,
        sign_public=sign_public,
        kem_private=kem_private,
        kem_public=kem_public,
        server_certificate=cert,
    )


def certify_client(
    identity: KeyPair,
    root: Optional[KeyPair],
    suite: CryptoSuite,
    security_level: SecurityLevel = SecurityLevel.SOFTWARE,
    domain: Optional[KeyPair] = None,
) -> KeyPair:
    """Issue a ClientCertificate for a vault identity, optionally in a domain.

    Raises
    ------
    DrmError
        ``ROOT_MISSING`` if no root key is configured
    """
    if root is None:
        raise DrmError(ErrorCode.ROOT_MISSING, "a root key is required to certify a client")
    sign_public = identity.require("sign_public")
    cert = ClientCertificate(
        client_public_key=sign_public,
        client_kem_key=identity.require("kem_public"),
        security_level=security_level,
        device_id=device_id_for(sign_public, suite),
        suite=suite.name,
        issuer_signature=b"",
        domain_id=domain.domain_id if domain is not None else None,
        domain_kem_key=domain.kem_public if domain is not None else None,
    )
    cert = sign_message(cert, root.require("sign_private"), suite)
    log_event(
        logger,
        logging.INFO,
        "client_certified",
        security_level=security_level,
        device=cert.device_id.hex()[:16],
        domain=domain is not None,
    )
    return dataclasses.replace(
        identity,
        role=KeyRole.CLIENT.value,
        client_certificate=cert,
        domain_kem_private=domain.kem_private if domain is not None else None,
        domain_id=domain.domain_id if domain is not None else None,
    )


def generate_client(
    suite: CryptoSuite,
    root: Optional[KeyPair],
    security_level: SecurityLevel = SecurityLevel.SOFTWARE,
    domain: Optional[KeyPair] = None,
) -> KeyPair:
    if root is None:
        raise DrmError(ErrorCode.ROOT_MISSING, "a root key is required to certify a client")
    return certify_client(generate_vault(suite), root, suite, security_level, domain)


def public_part(keypair: KeyPair) -> KeyPair:
    """Copy of ``keypair`` holding only public keys and certificates."""
    return dataclasses.replace(
        keypair,
        sign_private=None,
        kem_private=None,
        symmetric_key=None,
        domain_kem_private=None,
    )


def write_keypair(path: Union[str, Path], keypair: KeyPair) -> Path:
    """Write a KEYPAIR file readable by the owner only (mode 0600).

    Raises
    ------
    DrmError
        ``IO`` if the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as f:
            f.write(encode(keypair))
        os.chmod(path, 0o600)
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot write key file {path}: {e.strerror}") from e
    return path


def read_keypair(path: Union[str, Path], role: Optional[KeyRole] = None) -> KeyPair:
    """Load a KEYPAIR file, optionally insisting on its role.

    Raises
    ------
    DrmError
        ``IO`` if unreadable, ``MALFORMED`` if not a KEYPAIR message,
        ``CONFIG`` on a role mismatch
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot read key file {path}: {e.strerror}") from e
    keypair = decode(data, KeyPair)
    if role is not None and keypair.key_role is not role:
        raise DrmError(
            ErrorCode.CONFIG, f"{path} holds a {keypair.role} key, expected {role.value}"
        )
    return keypair

