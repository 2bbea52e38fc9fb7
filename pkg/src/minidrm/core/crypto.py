"""Abstract cryptographic contracts.

This module defines the interfaces every crypto suite implements. Protocol
code only talks to these interfaces, so a whole suite (cipher, AEAD,
signature, KEM, hash and RNG) can be swapped by configuration.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Tuple

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF


class SymmetricPrimitive(ABC):
    """Common sizing rules of the 128-bit symmetric primitives."""

    name: str = "symmetric"
    key_size: int = 16
    nonce_size: int = 12

    def validate(self, key: bytes, nonce: bytes) -> None:
        """Validate key and nonce sizes.

        Raises
        ------
        ValueError
            If a size is wrong
        """
        if len(key) != self.key_size:
            raise ValueError(f"{self.name} key must be {self.key_size} bytes, got {len(key)}")
        if len(nonce) != self.nonce_size:
            raise ValueError(f"{self.name} nonce must be {self.nonce_size} bytes, got {len(nonce)}")


class Cipher(SymmetricPrimitive):
    """Unauthenticated stream transform.

    Only the plain-segment conformance fixture encrypts with it.
    """

    name = "cipher"

    @abstractmethod
    def apply(self, key: bytes, nonce: bytes, data: bytes) -> bytes:
        """Encrypt or decrypt ``data`` (the transform is its own inverse).

        Parameters
        ----------
        key : bytes
            Symmetric key of ``key_size`` bytes
        nonce : bytes
            Per-message nonce of ``nonce_size`` bytes
        data : bytes
            Input bytes

        Returns
        -------
        bytes
            Transformed bytes of the same length
        """
        pass


class Aead(SymmetricPrimitive):
    """Authenticated encryption with associated data."""

    name = "aead"

    @abstractmethod
    def seal(self, key: bytes, nonce: bytes, ad: bytes, plaintext: bytes) -> bytes:
        """Encrypt and authenticate ``plaintext`` bound to ``ad``.

        Returns
        -------
        bytes
            Ciphertext with the authentication tag appended
        """
        pass

    @abstractmethod
    def open(self, key: bytes, nonce: bytes, ad: bytes, ciphertext: bytes) -> bytes:
        """Authenticate and decrypt ``ciphertext``.

        Raises
        ------
        DrmError
            ``OPEN_FAILED`` if authentication fails for any reason
        """
        pass


class SignatureScheme(ABC):
    """Detached signature scheme over raw key bytes."""

    name: str = "sig"

    @abstractmethod
    def generate(self) -> Tuple[bytes, bytes]:
        """Generate a key pair.

        Returns
        -------
        tuple of bytes
            ``(private_key, public_key)``
        """
        pass

    @abstractmethod
    def sign(self, private_key: bytes, payload: bytes) -> bytes:
        """Sign ``payload``."""
        pass

    @abstractmethod
    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        """Return True only for a valid signature; never raises on bad input."""
        pass


class Kem(ABC):
    """Key encapsulation mechanism producing 32-byte shared secrets."""

    name: str = "kem"

    @abstractmethod
    def generate(self) -> Tuple[bytes, bytes]:
        """Generate a key pair as ``(private_key, public_key)``."""
        pass

    @abstractmethod
    def encap(self, public_key: bytes) -> Tuple[bytes, bytes]:
        """Encapsulate to ``public_key``.

        Returns
        -------
        tuple of bytes
            ``(ciphertext, shared_secret)``

        Raises
        ------
        DrmError
            ``MALFORMED`` if the public key is not a valid point/key
        """
        pass

    @abstractmethod
    def decap(self, private_key: bytes, ciphertext: bytes) -> bytes:
        """Recover the shared secret from ``ciphertext``.

        Raises
        ------
        DrmError
            ``MALFORMED`` if the ciphertext cannot be decapsulated
        """
        pass


class HashFunction(ABC):
    """Collision-resistant 32-byte digest."""

    name: str = "hash"
    digest_size: int = 32

    @abstractmethod
    def digest(self, data: bytes) -> bytes:
        """Hash ``data`` in one shot."""
        pass

    @abstractmethod
    def new(self) -> Any:
        """Return a fresh incremental hash object (``update``/``digest``)."""
        pass

    @abstractmethod
    def algorithm(self) -> hashes.HashAlgorithm:
        """Matching ``cryptography`` algorithm, used by HKDF."""
        pass


class Rng(ABC):
    """Cryptographic randomness; implementations must be thread-safe."""

    @abstractmethod
    def random_bytes(self, n: int) -> bytes:
        """Return ``n`` random bytes."""
        pass


@dataclass(frozen=True)
class CryptoSuite:
    """A complete, interchangeable set of primitives.

    Attributes
    ----------
    name : str
        Registry name selected by configuration
    cipher : Cipher
        Plain stream cipher (negative fixture only)
    aead : Aead
        Authenticated encryption for segments, licenses and stores
    sig : SignatureScheme
        Detached signatures (manifests, certificates, requests, licenses)
    kem : Kem
        Session-key and license-wrap encapsulation
    hash : HashFunction
        Digest for identifiers, key derivation and transcripts
    rng : Rng
        Randomness for keys, seeds, nonces and tokens
    """

    name: str
    cipher: Cipher
    aead: Aead
    sig: SignatureScheme
    kem: Kem
    hash: HashFunction
    rng: Rng

    def derive(self, secret: bytes, info: bytes, length: int = 16) -> bytes:
        """HKDF-expand ``secret`` into ``length`` bytes under label ``info``."""
        return HKDF(
            algorithm=self.hash.algorithm(),
            length=length,
            salt=None,
            info=info,
        ).derive(secret)

    def random_nonce(self) -> bytes:
        return self.rng.random_bytes(self.aead.nonce_size)
