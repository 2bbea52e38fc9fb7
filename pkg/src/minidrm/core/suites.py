"""Concrete crypto suites and the suite registry.

Two classical suites are always registered and differ in every asymmetric
primitive:

- ``x25519-ed25519``: AES-128-GCM, Ed25519, X25519 KEM, SHA-256
- ``p256-ecdsa``: AES-128-CCM, ECDSA P-256, P-256 ECDH KEM, SHA3-256

When ``oqs`` (liboqs-python) is importable a third suite,
``mlkem768-mldsa65``, pairs an X25519 + ML-KEM-768 hybrid KEM with ML-DSA-65
signatures.
"""

import hashlib
import secrets
from typing import Any, Callable, Dict, List, Tuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, ed25519, x25519
from cryptography.hazmat.primitives.ciphers import Cipher as _CipherContext
from cryptography.hazmat.primitives.ciphers import algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESCCM, AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from minidrm.core.crypto import (
    Aead,
    Cipher,
    CryptoSuite,
    HashFunction,
    Kem,
    Rng,
    SignatureScheme,
)
from minidrm.core.errors import DrmError, ErrorCode

try:  # pragma: no cover - optional dependency
    import oqs

    OQS_AVAILABLE = True
except ImportError:  # pragma: no cover - optional dependency
    OQS_AVAILABLE = False

DEFAULT_SUITE = "x25519-ed25519"
ALTERNATE_SUITE = "p256-ecdsa"
PQ_SUITE = "mlkem768-mldsa65"

_P256 = ec.SECP256R1()


# --------------------------------------------------------------------------
# symmetric
# --------------------------------------------------------------------------


class AesCtr(Cipher):
    """AES-128-CTR; the 96-bit nonce is followed by a 32-bit block counter."""

    name = "AES-128-CTR"

    def apply(self, key: bytes, nonce: bytes, data: bytes) -> bytes:
        self.validate(key, nonce)
        ctx = _CipherContext(algorithms.AES(key), modes.CTR(nonce + b"\x00\x00\x00\x00"))
        transform = ctx.encryptor()
        return transform.update(data) + transform.finalize()


class AesGcm(Aead):
    name = "AES-128-GCM"

    def seal(self, key: bytes, nonce: bytes, ad: bytes, plaintext: bytes) -> bytes:
        self.validate(key, nonce)
        return AESGCM(key).encrypt(nonce, plaintext, ad)

    def open(self, key: bytes, nonce: bytes, ad: bytes, ciphertext: bytes) -> bytes:
        try:
            self.validate(key, nonce)
            return AESGCM(key).decrypt(nonce, ciphertext, ad)
        except (InvalidTag, ValueError) as e:
            raise DrmError(ErrorCode.OPEN_FAILED, "authentication failed") from e


class AesCcm(Aead):
    name = "AES-128-CCM"

    def seal(self, key: bytes, nonce: bytes, ad: bytes, plaintext: bytes) -> bytes:
        self.validate(key, nonce)
        return AESCCM(key, tag_length=16).encrypt(nonce, plaintext, ad)

    def open(self, key: bytes, nonce: bytes, ad: bytes, ciphertext: bytes) -> bytes:
        try:
            self.validate(key, nonce)
            return AESCCM(key, tag_length=16).decrypt(nonce, ciphertext, ad)
        except (InvalidTag, ValueError) as e:
            raise DrmError(ErrorCode.OPEN_FAILED, "authentication failed") from e


# --------------------------------------------------------------------------
# signatures
# --------------------------------------------------------------------------


class Ed25519Signature(SignatureScheme):
    name = "Ed25519"

    def generate(self) -> Tuple[bytes, bytes]:
        private = ed25519.Ed25519PrivateKey.generate()
        return private.private_bytes_raw(), private.public_key().public_bytes_raw()

    def sign(self, private_key: bytes, payload: bytes) -> bytes:
        return ed25519.Ed25519PrivateKey.from_private_bytes(private_key).sign(payload)

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(signature, payload)
        except (InvalidSignature, ValueError):
            return False
        return True


class EcdsaP256Signature(SignatureScheme):
    name = "ECDSA-P256-SHA256"

    def generate(self) -> Tuple[bytes, bytes]:
        private = ec.generate_private_key(_P256)
        return _p256_private_bytes(private), _p256_public_bytes(private.public_key())

    def sign(self, private_key: bytes, payload: bytes) -> bytes:
        private = ec.derive_private_key(int.from_bytes(private_key, "big"), _P256)
        return private.sign(payload, ec.ECDSA(hashes.SHA256()))

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        try:
            public = ec.EllipticCurvePublicKey.from_encoded_point(_P256, public_key)
            public.verify(signature, payload, ec.ECDSA(hashes.SHA256()))
        except (InvalidSignature, ValueError):
            return False
        return True


def _p256_private_bytes(private: ec.EllipticCurvePrivateKey) -> bytes:
    return private.private_numbers().private_value.to_bytes(32, "big")


def _p256_public_bytes(public: ec.EllipticCurvePublicKey) -> bytes:
    return public.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


# --------------------------------------------------------------------------
# KEMs
# --------------------------------------------------------------------------


def _kem_secret(label: bytes, dh: bytes, ciphertext: bytes, public_key: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=label + ciphertext + public_key,
    ).derive(dh)


class X25519Kem(Kem):
    """Ephemeral-static X25519; the ciphertext is the ephemeral public key."""

    name = "X25519"

    def generate(self) -> Tuple[bytes, bytes]:
        private = x25519.X25519PrivateKey.generate()
        return private.private_bytes_raw(), private.public_key().public_bytes_raw()

    def encap(self, public_key: bytes) -> Tuple[bytes, bytes]:
        try:
            recipient = x25519.X25519PublicKey.from_public_bytes(public_key)
            ephemeral = x25519.X25519PrivateKey.generate()
            dh = ephemeral.exchange(recipient)
        except ValueError as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid X25519 public key") from e
        ciphertext = ephemeral.public_key().public_bytes_raw()
        return ciphertext, _kem_secret(b"minidrm/kem/x25519", dh, ciphertext, public_key)

    def decap(self, private_key: bytes, ciphertext: bytes) -> bytes:
        try:
            private = x25519.X25519PrivateKey.from_private_bytes(private_key)
            dh = private.exchange(x25519.X25519PublicKey.from_public_bytes(ciphertext))
        except ValueError as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid X25519 encapsulation") from e
        public_key = private.public_key().public_bytes_raw()
        return _kem_secret(b"minidrm/kem/x25519", dh, ciphertext, public_key)


class P256Kem(Kem):
    """Ephemeral-static ECDH on P-256 with uncompressed X9.62 points."""

    name = "P256-ECDH"

    def generate(self) -> Tuple[bytes, bytes]:
        private = ec.generate_private_key(_P256)
        return _p256_private_bytes(private), _p256_public_bytes(private.public_key())

    def encap(self, public_key: bytes) -> Tuple[bytes, bytes]:
        try:
            recipient = ec.EllipticCurvePublicKey.from_encoded_point(_P256, public_key)
            ephemeral = ec.generate_private_key(_P256)
            dh = ephemeral.exchange(ec.ECDH(), recipient)
        except ValueError as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid P-256 public key") from e
        ciphertext = _p256_public_bytes(ephemeral.public_key())
        return ciphertext, _kem_secret(b"minidrm/kem/p256", dh, ciphertext, public_key)

    def decap(self, private_key: bytes, ciphertext: bytes) -> bytes:
        try:
            private = ec.derive_private_key(int.from_bytes(private_key, "big"), _P256)
            peer = ec.EllipticCurvePublicKey.from_encoded_point(_P256, ciphertext)
            dh = private.exchange(ec.ECDH(), peer)
        except ValueError as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid P-256 encapsulation") from e
        public_key = _p256_public_bytes(private.public_key())
        return _kem_secret(b"minidrm/kem/p256", dh, ciphertext, public_key)


class HybridMlKemKem(Kem):
    """X25519 combined with ML-KEM-768; both secrets feed one HKDF.

    Public keys are ``x25519_public || mlkem_public``. Private keys also carry
    the ML-KEM public key (``x25519_private || mlkem_public || mlkem_private``)
    so decapsulation can bind the full recipient key into the HKDF info.
    """

    name = "X25519+ML-KEM-768"
    algorithm = "ML-KEM-768"
    pq_public_key_size = 1184

    def __init__(self) -> None:
        self._classical = X25519Kem()

    def generate(self) -> Tuple[bytes, bytes]:
        x_private, x_public = self._classical.generate()
        with oqs.KeyEncapsulation(self.algorithm) as kem:
            pq_public = kem.generate_keypair()
            pq_private = kem.export_secret_key()
        return x_private + pq_public + pq_private, x_public + pq_public

    def encap(self, public_key: bytes) -> Tuple[bytes, bytes]:
        x_ct, x_secret = self._classical.encap(public_key[:32])
        try:
            with oqs.KeyEncapsulation(self.algorithm) as kem:
                pq_ct, pq_secret = kem.encap_secret(public_key[32:])
        except Exception as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid ML-KEM public key") from e
        ciphertext = x_ct + pq_ct
        secret = _kem_secret(b"minidrm/kem/hybrid", x_secret + pq_secret, ciphertext, public_key)
        return ciphertext, secret

    def decap(self, private_key: bytes, ciphertext: bytes) -> bytes:
        split = 32 + self.pq_public_key_size
        x_private = private_key[:32]
        pq_public, pq_private = private_key[32:split], private_key[split:]
        x_secret = self._classical.decap(x_private, ciphertext[:32])
        try:
            with oqs.KeyEncapsulation(self.algorithm, secret_key=pq_private) as kem:
                pq_secret = kem.decap_secret(ciphertext[32:])
        except Exception as e:
            raise DrmError(ErrorCode.MALFORMED, "invalid ML-KEM encapsulation") from e
        x_public = x25519.X25519PrivateKey.from_private_bytes(x_private).public_key()
        public_key = x_public.public_bytes_raw() + pq_public
        return _kem_secret(b"minidrm/kem/hybrid", x_secret + pq_secret, ciphertext, public_key)


class MlDsaSignature(SignatureScheme):
    name = "ML-DSA-65"

    def generate(self) -> Tuple[bytes, bytes]:
        with oqs.Signature(self.name) as signer:
            public_key = signer.generate_keypair()
            private_key = signer.export_secret_key()
        return private_key, public_key

    def sign(self, private_key: bytes, payload: bytes) -> bytes:
        with oqs.Signature(self.name, secret_key=private_key) as signer:
            return bytes(signer.sign(payload))

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        try:
            with oqs.Signature(self.name) as verifier:
                return bool(verifier.verify(payload, signature, public_key))
        except Exception:
            return False


# --------------------------------------------------------------------------
# hashes and randomness
# --------------------------------------------------------------------------


class Sha256(HashFunction):
    name = "SHA-256"

    def digest(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    def new(self) -> Any:
        return hashlib.sha256()

    def algorithm(self) -> hashes.HashAlgorithm:
        return hashes.SHA256()


class Sha3_256(HashFunction):  # noqa: N801
    name = "SHA3-256"

    def digest(self, data: bytes) -> bytes:
        return hashlib.sha3_256(data).digest()

    def new(self) -> Any:
        return hashlib.sha3_256()

    def algorithm(self) -> hashes.HashAlgorithm:
        return hashes.SHA3_256()


class SecretsRng(Rng):
    """Operating-system CSPRNG via :mod:`secrets`."""

    def random_bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

_FACTORIES: Dict[str, Callable[[], CryptoSuite]] = {}
_INSTANCES: Dict[str, CryptoSuite] = {}


def register_suite(name: str, factory: Callable[[], CryptoSuite]) -> None:
    """Register a suite factory under ``name``, replacing any previous one."""
    _FACTORIES[name] = factory
    _INSTANCES.pop(name, None)


def get_suite(name: str) -> CryptoSuite:
    """Return the suite registered as ``name``.

    Raises
    ------
    DrmError
        ``CONFIG`` if no such suite is registered
    """
    if name not in _INSTANCES:
        factory = _FACTORIES.get(name)
        if factory is None:
            raise DrmError(
                ErrorCode.CONFIG,
                f"Unknown crypto suite '{name}'. Available: {', '.join(available_suites())}",
            )
        _INSTANCES[name] = factory()
    return _INSTANCES[name]


def available_suites() -> List[str]:
    return sorted(_FACTORIES)


register_suite(
    DEFAULT_SUITE,
    lambda: CryptoSuite(
        name=DEFAULT_SUITE,
        cipher=AesCtr(),
        aead=AesGcm(),
        sig=Ed25519Signature(),
        kem=X25519Kem(),
        hash=Sha256(),
        rng=SecretsRng(),
    ),
)
register_suite(
    ALTERNATE_SUITE,
    lambda: CryptoSuite(
        name=ALTERNATE_SUITE,
        cipher=AesCtr(),
        aead=AesCcm(),
        sig=EcdsaP256Signature(),
        kem=P256Kem(),
        hash=Sha3_256(),
        rng=SecretsRng(),
    ),
)
if OQS_AVAILABLE:  # pragma: no cover - optional dependency
    register_suite(
        PQ_SUITE,
        lambda: CryptoSuite(
            name=PQ_SUITE,
            cipher=AesCtr(),
            aead=AesGcm(),
            sig=MlDsaSignature(),
            kem=HybridMlKemKem(),
            hash=Sha256(),
            rng=SecretsRng(),
        ),
    )
