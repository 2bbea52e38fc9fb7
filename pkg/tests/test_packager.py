"""Tests for segmentation, packaging, manifests and the key registry."""

import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import generate_key_seed, generate_publisher, generate_transport
from minidrm.core.wire import encode
from minidrm.packager.manifest import (
    EncryptionScheme,
    decode_init_data,
    segment_ad,
    segment_nonce,
    verify_manifest,
)
from minidrm.packager.package import (
    MANIFEST_FILE,
    REGISTRY_FILE,
    PackageConfig,
    load_package,
    package,
    verify_segment_digest,
    write_package,
)
from minidrm.packager.registry import open_registry
from minidrm.packager.segmenter import segment_content


class TestSegmentContent:
    """Fixed-size segmentation."""

    def test_sizes(self):
        assert [len(s) for s in segment_content(b"0123456789", 4)] == [4, 4, 2]

    def test_exact_multiple(self):
        assert segment_content(b"abcdef", 3) == [b"abc", b"def"]

    def test_empty(self):
        assert segment_content(b"", 8) == []

    def test_file_object(self):
        assert segment_content(io.BytesIO(b"0123456789"), 4) == [b"0123", b"4567", b"89"]

    def test_bad_size(self):
        with pytest.raises(DrmError) as info:
            segment_content(b"abc", 0)
        assert info.value.code is ErrorCode.CONFIG

    @given(data=st.binary(max_size=2048), size=st.integers(min_value=1, max_value=300))
    def test_concatenation_restores_input(self, data, size):
        segments = segment_content(data, size)
        assert b"".join(segments) == data
        assert all(len(s) == size for s in segments[:-1])


class TestPackage:
    """End-to-end packaging of one content."""

    @pytest.fixture
    def keys(self, suite):
        return generate_publisher(suite), generate_transport(suite).symmetric_key

    @pytest.fixture
    def content(self):
        return bytes(i % 251 for i in range(10 * 1000 + 17))

    @pytest.fixture
    def output(self, suite, keys, content):
        config = PackageConfig("movie", 1000, 3, generate_key_seed(suite))
        return package(content, config, suite, keys[0].sign_private, keys[1])

    def test_layout(self, output):
        manifest = output.manifest
        assert len(manifest.segments) == 11
        assert len(manifest.key_ids) == 4
        assert [r.period for r in manifest.segments] == [i // 3 for i in range(11)]
        assert manifest.segments[5].uri == "seg/5.bin"

    def test_one_key_per_period(self, output):
        mapping = output.manifest.period_keys()
        for record in output.manifest.segments:
            assert record.key_id == mapping[record.period]
        assert len(set(output.manifest.key_ids)) == len(output.manifest.key_ids)

    def test_nonces_unique(self, output):
        nonces = [r.nonce for r in output.manifest.segments]
        assert len(set(nonces)) == len(nonces)
        assert output.manifest.segments[4].nonce == segment_nonce(1, 4)

    def test_segments_open_with_period_key(self, suite, output, content):
        keys = output.registry.by_key_id()
        plain = []
        for record in output.manifest.segments:
            key = keys[record.key_id]
            ad = segment_ad("movie", record.index, record.key_id)
            blob = output.segments[record.index]
            plain.append(suite.aead.open(key.key, record.nonce, ad, blob))
        assert b"".join(plain) == content

    def test_cross_period_key_fails(self, suite, output):
        keys = output.registry.by_key_id()
        record = output.manifest.segments[0]
        other = keys[output.manifest.period_keys()[1]]
        ad = segment_ad("movie", 0, record.key_id)
        with pytest.raises(DrmError) as info:
            suite.aead.open(other.key, record.nonce, ad, output.segments[0])
        assert info.value.code is ErrorCode.OPEN_FAILED

    def test_swapped_segment_fails(self, suite, output):
        keys = output.registry.by_key_id()
        record = output.manifest.segments[0]
        ad = segment_ad("movie", 0, record.key_id)
        with pytest.raises(DrmError):
            suite.aead.open(keys[record.key_id].key, record.nonce, ad, output.segments[1])

    def test_init_data(self, output):
        init = decode_init_data(output.manifest.init_data)
        assert init.content_id == "movie"
        assert init.key_ids == output.manifest.key_ids

    def test_manifest_verifies(self, suite, keys, output):
        manifest = verify_manifest(output.manifest_bytes, keys[0].sign_public, suite)
        assert manifest == output.manifest

    def test_manifest_foreign_key(self, suite, output):
        other = generate_publisher(suite)
        with pytest.raises(DrmError) as info:
            verify_manifest(output.manifest_bytes, other.sign_public, suite)
        assert info.value.code is ErrorCode.BAD_SIGNATURE

    def test_manifest_flips_rejected(self, suite, keys, output):
        data = output.manifest_bytes
        for pos in range(0, len(data), max(1, len(data) // 64)):
            mutated = bytearray(data)
            mutated[pos] ^= 0x01
            with pytest.raises(DrmError) as info:
                verify_manifest(bytes(mutated), keys[0].sign_public, suite)
            assert info.value.code in (ErrorCode.BAD_SIGNATURE, ErrorCode.MALFORMED)

    def test_fresh_key_ids_per_run(self, suite, keys, content):
        config = PackageConfig("m", 4000, 1, generate_key_seed(suite))
        a = package(content, config, suite, keys[0].sign_private, keys[1])
        b = package(content, config, suite, keys[0].sign_private, keys[1])
        assert a.manifest.key_ids != b.manifest.key_ids

    def test_manifest_is_canonical(self, output):
        assert encode(output.manifest) == output.manifest_bytes

    def test_segment_digest(self, suite, output):
        record = output.manifest.segments[2]
        verify_segment_digest(record, output.segments[2], suite)
        with pytest.raises(DrmError) as info:
            verify_segment_digest(record, output.segments[3], suite)
        assert info.value.code is ErrorCode.MALFORMED

    def test_plain_ctr_fixture(self, suite, keys, content):
        config = PackageConfig(
            "movie", 1000, 3, generate_key_seed(suite), scheme=EncryptionScheme.PLAIN_CTR
        )
        out = package(content, config, suite, keys[0].sign_private, keys[1])
        assert out.manifest.scheme is EncryptionScheme.PLAIN_CTR
        assert len(out.segments[0]) == 1000

    def test_unsigned_fixture(self, suite, keys, content):
        config = PackageConfig("movie", 1000, 3, generate_key_seed(suite), sign=False)
        out = package(content, config, suite, keys[0].sign_private, keys[1])
        assert out.manifest.publisher_signature == b""

    def test_empty_content(self, suite, keys):
        config = PackageConfig("empty", 1000, 3, generate_key_seed(suite))
        out = package(b"", config, suite, keys[0].sign_private, keys[1])
        assert out.manifest.segments == ()
        assert out.segments == []
        assert [pk.period for pk in out.manifest.key_ids_per_period] == [0]
        assert len(out.registry.entries) == 1


class TestPackageConfig:
    """Parameter validation."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(content_id="", segment_size=10, rotation_interval=1),
            dict(content_id="x", segment_size=0, rotation_interval=1),
            dict(content_id="x", segment_size=10, rotation_interval=0),
        ],
    )
    def test_invalid(self, suite, kwargs):
        with pytest.raises(DrmError) as info:
            PackageConfig(seed=generate_key_seed(suite), **kwargs)
        assert info.value.code is ErrorCode.CONFIG

    def test_seed_length(self):
        with pytest.raises(DrmError) as info:
            PackageConfig("x", 10, 1, b"\x00" * 16)
        assert info.value.code is ErrorCode.SEED_LENGTH


class TestRegistry:
    """Sealed key registry."""

    @pytest.fixture
    def output(self, suite):
        transport = generate_transport(suite).symmetric_key
        config = PackageConfig("movie", 100, 2, generate_key_seed(suite))
        out = package(b"x" * 500, config, suite, generate_publisher(suite).sign_private, transport)
        return out, transport

    def test_open(self, suite, output):
        out, transport = output
        registry = open_registry(out.registry.sealed_for_transport, transport, suite)
        assert registry.content_id == "movie"
        assert registry.entries == out.registry.entries

    def test_wrong_transport_key(self, suite, output):
        out, _ = output
        with pytest.raises(DrmError) as info:
            open_registry(out.registry.sealed_for_transport, b"\x00" * 16, suite)
        assert info.value.code is ErrorCode.OPEN_FAILED

    def test_no_plaintext_keys_in_transit(self, output):
        out, _ = output
        for key in out.registry.entries:
            assert key.key not in out.registry.sealed_for_transport

    def test_flip_rejected(self, suite, output):
        out, transport = output
        sealed = bytearray(out.registry.sealed_for_transport)
        sealed[-3] ^= 0x80
        with pytest.raises(DrmError):
            open_registry(bytes(sealed), transport, suite)


class TestPackageFiles:
    """Package directory on disk."""

    def test_write_and_load(self, suite, tmp_path):
        publisher = generate_publisher(suite)
        transport = generate_transport(suite).symmetric_key
        config = PackageConfig("movie", 100, 2, generate_key_seed(suite))
        out = package(b"y" * 450, config, suite, publisher.sign_private, transport)
        root = write_package(out, tmp_path / "movie")

        assert (root / MANIFEST_FILE).read_bytes() == out.manifest_bytes
        assert (root / REGISTRY_FILE).exists()
        loaded = load_package(root, publisher.sign_public, suite)
        assert loaded.manifest == out.manifest
        for record in loaded.manifest.segments:
            assert loaded.read_segment(record) == out.segments[record.index]
        assert loaded.read_registry() == out.registry.sealed_for_transport

    def test_load_missing(self, suite, tmp_path):
        with pytest.raises(DrmError) as info:
            load_package(tmp_path, None, suite)
        assert info.value.code is ErrorCode.IO

    def test_missing_segment(self, suite, tmp_path):
        config = PackageConfig("movie", 100, 2, generate_key_seed(suite))
        out = package(b"z" * 300, config, suite, generate_publisher(suite).sign_private, b"k" * 16)
        root = write_package(out, tmp_path / "movie")
        (root / "seg" / "1.bin").unlink()
        loaded = load_package(root, None, suite)
        with pytest.raises(DrmError) as info:
            loaded.read_segment(loaded.manifest.segments[1])
        assert info.value.code is ErrorCode.IO

