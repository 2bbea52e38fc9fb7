"""Tests for the high-level packaging and playback API."""

import stat

import pytest

from minidrm.api.highlevel import (
    load_or_create_seed,
    pack_file,
    play_content,
    resume_content,
)
from minidrm.cli.config import load_config
from minidrm.cli.main import build_server
from minidrm.client.offline import OfflineStore
from minidrm.client.transport import InProcessTransport
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import KeyRole, generate_transport, read_keypair
from minidrm.core.suites import ALTERNATE_SUITE, get_suite
from minidrm.core.types import KEY_SEED_SIZE
from minidrm.packager.package import load_package


def _code(call):
    with pytest.raises(DrmError) as info:
        call()
    return info.value.code


def _public(path, role):
    return read_keypair(path, role).sign_public


class TestSeedFile:
    def test_created_once(self, suite, tmp_path):
        path = tmp_path / "keys" / "movie.seed"
        seed = load_or_create_seed(path, suite)
        assert len(path.read_bytes()) == KEY_SEED_SIZE
        assert stat.S_IMODE(path.stat().st_mode) == 0o600
        assert load_or_create_seed(path, suite) == seed

    def test_wrong_length(self, suite, tmp_path):
        path = tmp_path / "short.seed"
        path.write_bytes(b"\x00" * 16)
        assert _code(lambda: load_or_create_seed(path, suite)) is ErrorCode.SEED_LENGTH


class TestPackFile:
    """Packaging from key files."""

    def test_package_written(self, suite, provisioned):
        publisher = _public(provisioned.public("publisher"), KeyRole.PUBLISHER)
        loaded = load_package(provisioned.package_dir, publisher, suite)
        assert loaded.manifest.content_id == provisioned.content_id
        assert len(loaded.manifest.segments) == 10
        assert len(loaded.manifest.key_ids) == 4

    def test_same_seed_file_reused(self, provisioned, tmp_path):
        seed = provisioned.key("movie").with_suffix(".seed")
        before = seed.read_bytes()
        pack_file(
            tmp_path / "movie.bin",
            tmp_path / "again",
            "again",
            provisioned.key("publisher"),
            provisioned.key("transport"),
            seed,
        )
        assert seed.read_bytes() == before

    def test_role_checked(self, provisioned, tmp_path):
        code = _code(
            lambda: pack_file(
                tmp_path / "movie.bin",
                tmp_path / "x",
                "x",
                provisioned.key("transport"),
                provisioned.key("transport"),
                tmp_path / "x.seed",
            )
        )
        assert code is ErrorCode.CONFIG

    def test_transport_key_from_other_suite(self, provisioned, tmp_path):
        other = generate_transport(get_suite(ALTERNATE_SUITE))
        code = _code(
            lambda: pack_file(
                tmp_path / "movie.bin",
                tmp_path / "x",
                "x",
                provisioned.key("publisher"),
                other,
                tmp_path / "x.seed",
            )
        )
        assert code is ErrorCode.CONFIG

    def test_missing_input(self, provisioned, tmp_path):
        code = _code(
            lambda: pack_file(
                tmp_path / "absent.bin",
                tmp_path / "x",
                "x",
                provisioned.key("publisher"),
                provisioned.key("transport"),
                tmp_path / "x.seed",
            )
        )
        assert code is ErrorCode.IO


class TestPlayback:
    """Licensing and playing a configured package in process."""

    @pytest.fixture
    def transport(self, provisioned):
        return InProcessTransport(build_server(load_config(provisioned.config_path)))

    def _play(self, provisioned, transport, token=None, store=None):
        return play_content(
            provisioned.package_dir,
            provisioned.key("client"),
            token or provisioned.token,
            transport,
            _public(provisioned.public("root"), KeyRole.ROOT),
            _public(provisioned.public("publisher"), KeyRole.PUBLISHER),
            offline_store=store,
        )

    def test_play(self, suite, provisioned, transport):
        result = self._play(provisioned, transport)
        assert result.content_id == provisioned.content_id
        assert result.delivered_bytes == len(provisioned.content)
        assert result.digest == suite.hash.digest(provisioned.content)
        assert result.mode == "RENTAL"
        assert not result.stored_offline
        counts = transport.fetch_metering("alice")["counts"][provisioned.content_id]
        assert counts["LICENSE_ISSUED"] == 1

    def test_bad_token(self, provisioned, transport):
        code = _code(lambda: self._play(provisioned, transport, token="stolen"))
        assert code is ErrorCode.AUTH_FAILED

    def test_store_and_resume(self, suite, provisioned, transport, tmp_path):
        store = OfflineStore(tmp_path / "hds")
        played = self._play(provisioned, transport, store=store)
        assert played.stored_offline

        publisher = _public(provisioned.public("publisher"), KeyRole.PUBLISHER)
        resumed = resume_content(
            provisioned.package_dir,
            provisioned.key("client"),
            publisher,
            store,
            content_id=provisioned.content_id,
        )
        assert resumed.digest == played.digest
        assert resumed.delivered_bytes == len(provisioned.content)

    def test_resume_without_record(self, provisioned, tmp_path):
        publisher = _public(provisioned.public("publisher"), KeyRole.PUBLISHER)
        code = _code(
            lambda: resume_content(
                provisioned.package_dir,
                provisioned.key("client"),
                publisher,
                OfflineStore(tmp_path / "empty"),
            )
        )
        assert code is ErrorCode.KEY_MISSING

    def test_resume_wrong_content(self, provisioned, tmp_path):
        publisher = _public(provisioned.public("publisher"), KeyRole.PUBLISHER)
        code = _code(
            lambda: resume_content(
                provisioned.package_dir,
                provisioned.key("client"),
                publisher,
                OfflineStore(tmp_path / "hds"),
                content_id="trailer",
            )
        )
        assert code is ErrorCode.CONFIG
