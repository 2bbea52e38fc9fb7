"""Tests for core data models."""

import pytest

from minidrm.core.errors import DrmError, ErrorCode, exit_code_for, http_status_for
from minidrm.core.types import (
    ClientCertificate,
    ContentKey,
    KeyId,
    KeySeed,
    SecurityLevel,
)


class TestKeyId:
    """Test suite for KeyId."""

    def test_valid(self):
        kid = KeyId(b"\x01" * 16)
        assert bytes(kid) == b"\x01" * 16
        assert kid.hex() == "01" * 16

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="16 bytes"):
            KeyId(b"\x01" * 15)

    def test_not_bytes(self):
        with pytest.raises(TypeError):
            KeyId("0123456789abcdef")

    def test_hashable_and_equal(self):
        assert {KeyId(b"a" * 16), KeyId(b"a" * 16)} == {KeyId(b"a" * 16)}


class TestKeySeed:
    """Test suite for KeySeed."""

    def test_valid(self):
        assert KeySeed(b"\x00" * 30).seed == b"\x00" * 30

    @pytest.mark.parametrize("size", [0, 29, 31, 64])
    def test_wrong_length(self, size):
        with pytest.raises(DrmError) as info:
            KeySeed(b"\x00" * size)
        assert info.value.code is ErrorCode.SEED_LENGTH

    def test_repr_hides_seed(self):
        assert "\\x07" not in repr(KeySeed(b"\x07" * 30))


class TestContentKey:
    """Test suite for ContentKey."""

    def test_repr_hides_key(self):
        key = ContentKey(KeyId(b"k" * 16), b"\xab" * 16, period=2)
        assert "ab" * 4 not in repr(key)
        assert "\\xab" not in repr(key)

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="16 bytes"):
            ContentKey(KeyId(b"k" * 16), b"\x00" * 32)

    def test_negative_period(self):
        with pytest.raises(ValueError, match="non-negative"):
            ContentKey(KeyId(b"k" * 16), b"\x00" * 16, period=-1)


class TestSecurityLevel:
    """Test suite for SecurityLevel."""

    def test_ordering(self):
        assert SecurityLevel.DEV < SecurityLevel.SOFTWARE < SecurityLevel.HARDWARE

    def test_parse(self):
        assert SecurityLevel.parse("hardware") is SecurityLevel.HARDWARE
        assert SecurityLevel.parse("Software") is SecurityLevel.SOFTWARE
        assert SecurityLevel.parse(1) is SecurityLevel.DEV

    def test_parse_unknown(self):
        with pytest.raises(ValueError, match="Unknown security level"):
            SecurityLevel.parse("platinum")


class TestClientCertificate:
    """Field validation of the device certificate."""

    def _cert(self, **overrides):
        values = dict(
            client_public_key=b"p" * 32,
            client_kem_key=b"k" * 32,
            security_level=SecurityLevel.SOFTWARE,
            device_id=b"d" * 32,
            suite="x25519-ed25519",
            issuer_signature=b"s" * 64,
        )
        values.update(overrides)
        return ClientCertificate(**values)

    def test_device_id_length(self):
        with pytest.raises(ValueError, match="device_id"):
            self._cert(device_id=b"d" * 8)

    def test_domain_fields_together(self):
        with pytest.raises(ValueError, match="together"):
            self._cert(domain_id=b"x" * 16)
        cert = self._cert(domain_id=b"x" * 16, domain_kem_key=b"y" * 32)
        assert cert.domain_id == b"x" * 16


class TestErrorCodes:
    """Stable code mappings."""

    def test_message_defaults_to_name(self):
        err = DrmError(ErrorCode.REPLAY)
        assert err.message == "REPLAY"
        assert str(err) == "REPLAY: REPLAY"

    def test_http_status(self):
        assert http_status_for(ErrorCode.AUTH_FAILED) == 401
        assert http_status_for(ErrorCode.REPLAY) == 409
        assert http_status_for(ErrorCode.INTERNAL) == 500

    @pytest.mark.parametrize(
        "code, expected",
        [
            (ErrorCode.PLAYBACK_DENIED, 2),
            (ErrorCode.LEASE_LOST, 2),
            (ErrorCode.EXPIRED, 2),
            (ErrorCode.BAD_SIGNATURE, 3),
            (ErrorCode.SERVER_CERT_INVALID, 3),
            (ErrorCode.DEVICE_MISMATCH, 3),
            (ErrorCode.TRANSPORT, 4),
            (ErrorCode.CONFIG, 1),
        ],
    )
    def test_exit_codes(self, code, expected):
        assert exit_code_for(code) == expected

    def test_pickles(self):
        import pickle

        err = pickle.loads(pickle.dumps(DrmError(ErrorCode.IO, "disk")))
        assert err.code is ErrorCode.IO
        assert err.message == "disk"
