"""Tests for the command line, its configuration file and key provisioning."""

import json
import logging
import stat

import pytest

from minidrm.cli import main as cli_main
from minidrm.cli.config import (
    SERVER_CONFIG_ENV,
    ContentConfig,
    DeploymentConfig,
    load_config,
    parse_config,
)
from minidrm.cli.keygen import keygen, public_path
from minidrm.cli.main import build_server, main
from minidrm.client.transport import InProcessTransport
from minidrm.conformance.report import ConformanceReport
from minidrm.core.clock import ManualClock
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import KeyRole, generate_root, read_keypair
from minidrm.core.messages import LicenseMode
from minidrm.core.suites import ALTERNATE_SUITE, get_suite
from minidrm.core.types import SecurityLevel


def _code(call):
    with pytest.raises(DrmError) as info:
        call()
    return info.value.code


@pytest.fixture(autouse=True)
def _reset_log_handlers():
    yield
    logger = logging.getLogger("minidrm")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


class TestParseConfig:
    """Validation of the deployment configuration."""

    def test_defaults(self, tmp_path):
        config = parse_config({}, tmp_path)
        assert config.port == 8400
        assert config.version_floor == 2
        assert config.content == []

    def test_relative_paths_resolved(self, tmp_path):
        (tmp_path / "keys").mkdir()
        (tmp_path / "keys" / "server.key").write_bytes(b"x")
        config = parse_config({"server_identity": "keys/server.key"}, tmp_path)
        assert config.server_identity == tmp_path / "keys" / "server.key"

    @pytest.mark.parametrize(
        "data, fragment",
        [
            ({"suite": "rot13"}, "suite"),
            ({"port": 70000}, "port"),
            ({"replay_window": 0}, "replay_window"),
            ({"colour": "blue"}, "colour"),
            ({"content": [{"package_dir": "p", "mode": "forever"}]}, "mode"),
            ({"content": [{"package_dir": "p", "min_security_level": "max"}]}, "min_security"),
        ],
    )
    def test_invalid(self, tmp_path, data, fragment):
        with pytest.raises(DrmError) as info:
            parse_config(data, tmp_path)
        assert info.value.code is ErrorCode.CONFIG
        assert fragment in info.value.message

    def test_missing_files(self, tmp_path):
        with pytest.raises(DrmError, match="missing referenced files"):
            parse_config({"transport_key": "keys/transport.key"}, tmp_path)

    def test_require(self):
        assert _code(lambda: DeploymentConfig().require("root_key")) is ErrorCode.CONFIG

    def test_content_policy(self):
        entry = ContentConfig(package_dir="p", mode="LEASE", duration=90, max_concurrent=3)
        policy = entry.policy()
        assert entry.mode == "lease"
        assert policy.mode is LicenseMode.LEASE
        assert policy.max_concurrent == 3

    def test_harness_settings(self, tmp_path):
        config = parse_config(
            {"version_floor": 3, "replay_window": 30, "conformance": {"segment_size": 512}},
            tmp_path,
        )
        settings = config.harness_settings()
        assert settings.segment_size == 512
        assert settings.version_floor == 3
        assert settings.replay_window == 30


class TestLoadConfig:
    def test_from_environment(self, tmp_path, monkeypatch):
        path = tmp_path / "minidrm.json"
        path.write_text(json.dumps({"port": 9000}), encoding="utf-8")
        monkeypatch.setenv(SERVER_CONFIG_ENV, str(path))
        assert load_config().port == 9000

    def test_unset(self, monkeypatch):
        monkeypatch.delenv(SERVER_CONFIG_ENV, raising=False)
        assert _code(load_config) is ErrorCode.CONFIG

    @pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
    def test_bad_document(self, tmp_path, text):
        path = tmp_path / "minidrm.json"
        path.write_text(text, encoding="utf-8")
        assert _code(lambda: load_config(path)) is ErrorCode.CONFIG

    def test_unreadable(self, tmp_path):
        assert _code(lambda: load_config(tmp_path / "absent.json")) is ErrorCode.CONFIG


class TestKeygen:
    """Key file provisioning."""

    def test_root_with_public_file(self, suite, tmp_path):
        written = keygen("root", tmp_path / "root.key", suite)
        assert written == [tmp_path / "root.key", tmp_path / "root.key.pub"]
        assert stat.S_IMODE(written[0].stat().st_mode) == 0o600
        private = read_keypair(written[0], KeyRole.ROOT)
        public = read_keypair(written[1], KeyRole.ROOT)
        assert private.sign_private is not None
        assert public.sign_private is None
        assert public.sign_public == private.sign_public

    def test_public_path(self, tmp_path):
        assert public_path(tmp_path / "server.key") == tmp_path / "server.key.pub"

    def test_server_certificate_lifetime(self, suite, tmp_path):
        root = generate_root(suite)
        keygen(
            "server",
            tmp_path / "server.key",
            suite,
            root=root,
            lifetime_days=2,
            clock=ManualClock(start=1_000),
        )
        server = read_keypair(tmp_path / "server.key", KeyRole.SERVER)
        assert server.server_certificate.not_after == 1_000 + 2 * 24 * 3600
        public = read_keypair(tmp_path / "server.key.pub", KeyRole.SERVER)
        assert public.server_certificate == server.server_certificate
        assert public.kem_private is None

    @pytest.mark.parametrize("role", ["server", "client"])
    def test_root_required(self, suite, tmp_path, role):
        code = _code(lambda: keygen(role, tmp_path / "x.key", suite))
        assert code is ErrorCode.ROOT_MISSING

    def test_client_in_domain(self, suite, tmp_path):
        keygen("domain", tmp_path / "home.key", suite)
        domain = read_keypair(tmp_path / "home.key", KeyRole.DOMAIN)
        root = generate_root(suite)
        written = keygen("client", tmp_path / "tv.key", suite, root=root, domain=domain)
        assert len(written) == 1
        client = read_keypair(written[0], KeyRole.CLIENT)
        assert client.client_certificate.domain_id == domain.domain_id

    def test_transport_has_no_public_file(self, suite, tmp_path):
        assert len(keygen("transport", tmp_path / "t.key", suite)) == 1

    def test_unknown_role(self, suite, tmp_path):
        with pytest.raises(DrmError, match="Unknown role"):
            keygen("wizard", tmp_path / "x.key", suite)

    def test_invalid_lifetime(self, suite, tmp_path):
        with pytest.raises(ValueError):
            keygen("server", tmp_path / "x.key", suite, root=generate_root(suite), lifetime_days=0)

    def test_root_from_other_suite(self, suite, tmp_path):
        root = generate_root(get_suite(ALTERNATE_SUITE))
        code = _code(lambda: keygen("client", tmp_path / "x.key", suite, root=root))
        assert code is ErrorCode.CONFIG


class TestBuildServer:
    def test_registers_configured_content(self, provisioned):
        server = build_server(load_config(provisioned.config_path))
        assert server.registered_content() == (provisioned.content_id,)

    def test_wrong_role_for_root(self, provisioned):
        config = load_config(provisioned.config_path)
        config = config.model_copy(update={"root_key": provisioned.key("publisher")})
        assert _code(lambda: build_server(config)) is ErrorCode.CONFIG


class TestMain:
    """Commands and exit codes."""

    def test_no_command(self, capsys):
        assert main([]) == 1
        assert "commands" in capsys.readouterr().out

    def test_keygen(self, tmp_path, capsys):
        assert main(["keygen", "--role", "root", "--out", str(tmp_path / "root.key")]) == 0
        out = capsys.readouterr().out
        assert "root.key.pub" in out
        client = tmp_path / "client.key"
        args = ["--role", "client", "--out", str(client), "--root", str(tmp_path / "root.key")]
        assert main(["keygen", *args, "--level", "hardware"]) == 0
        certificate = read_keypair(client, KeyRole.CLIENT).client_certificate
        assert certificate.security_level == SecurityLevel.HARDWARE

    def test_keygen_bad_level(self, tmp_path, capsys):
        main(["keygen", "--role", "root", "--out", str(tmp_path / "root.key")])
        args = ["--role", "client", "--out", str(tmp_path / "c.key")]
        code = main(["keygen", *args, "--root", str(tmp_path / "root.key"), "--level", "max"])
        assert code == 1
        assert "CONFIG" in capsys.readouterr().err

    def test_bad_log_level(self):
        with pytest.raises(SystemExit):
            main(["--log-level", "chatty", "keygen", "--role", "root", "--out", "x"])

    def test_pack(self, provisioned, capsys):
        keys = provisioned.base / "keys"
        code = main(
            [
                "pack",
                "--in", str(provisioned.base / "movie.bin"),
                "--out", str(provisioned.base / "out" / "copy"),
                "--content-id", "copy",
                "--segment-size", "4096",
                "--seed-file", str(keys / "copy.seed"),
                "--sign-key", str(keys / "publisher.key"),
                "--transport-key", str(keys / "transport.key"),
            ]
        )  # fmt: skip
        assert code == 0
        assert "packaged copy: 3 segments, 1 keys" in capsys.readouterr().out

    def test_corrupt_key_file_is_a_verification_failure(self, provisioned, capsys):
        bad = provisioned.base / "keys" / "bad.key"
        bad.write_bytes(b"garbage")
        code = main(
            [
                "pack",
                "--in", str(provisioned.base / "movie.bin"),
                "--out", str(provisioned.base / "out" / "copy"),
                "--content-id", "copy",
                "--seed-file", str(provisioned.base / "keys" / "copy.seed"),
                "--sign-key", str(bad),
                "--transport-key", str(provisioned.key("transport")),
            ]
        )  # fmt: skip
        assert code == 3
        assert "MALFORMED" in capsys.readouterr().err

    def test_play_and_resume(self, provisioned, monkeypatch, capsys, tmp_path):
        server = build_server(load_config(provisioned.config_path))
        transport = InProcessTransport(server)
        monkeypatch.setattr(cli_main, "HttpLicenseTransport", lambda url: transport)
        store = tmp_path / "hds"
        code = main(
            [
                "play",
                "--manifest", str(provisioned.package_dir / "manifest.mdrm"),
                "--server", "http://license.invalid",
                "--identity", str(provisioned.key("client")),
                "--token", provisioned.token,
                "--root", str(provisioned.public("root")),
                "--publisher", str(provisioned.public("publisher")),
                "--offline-store", str(store),
            ]
        )  # fmt: skip
        assert code == 0
        out = capsys.readouterr().out
        assert f"{len(provisioned.content)} bytes" in out
        assert "stored for offline playback" in out

        code = main(
            [
                "resume",
                "--content-id", provisioned.content_id,
                "--package", str(provisioned.package_dir),
                "--identity", str(provisioned.key("client")),
                "--publisher", str(provisioned.public("publisher")),
                "--offline-store", str(store),
            ]
        )  # fmt: skip
        assert code == 0
        digest = out.split("digest=")[1].split()[0]
        assert f"digest={digest}" in capsys.readouterr().out

    def test_resume_without_license(self, provisioned, tmp_path, capsys):
        code = main(
            [
                "resume",
                "--content-id", provisioned.content_id,
                "--package", str(provisioned.package_dir),
                "--identity", str(provisioned.key("client")),
                "--publisher", str(provisioned.public("publisher")),
                "--offline-store", str(tmp_path / "empty"),
            ]
        )  # fmt: skip
        assert code == 1
        assert "KEY_MISSING" in capsys.readouterr().err

    @pytest.mark.slow
    def test_conform(self, tmp_path, capsys):
        config = {
            "conformance": {
                "content_size": 8192,
                "segment_size": 1024,
                "rotation_interval": 2,
                "extraction_calls": 50,
                "flip_positions": 8,
            }
        }
        config_path = tmp_path / "conform.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")
        report_path = tmp_path / "report.mdrm"
        csv_path = tmp_path / "report.csv"
        args = ["--config", str(config_path), "--out", str(report_path), "--csv", str(csv_path)]
        assert main(["conform", *args]) == 0
        report = ConformanceReport.from_bytes(report_path.read_bytes())
        assert report.passed
        assert csv_path.exists()
        assert "SP1" in capsys.readouterr().out

    @pytest.mark.slow
    def test_conform_negative_fixture_exits_zero(self, tmp_path):
        config_path = tmp_path / "conform.json"
        config_path.write_text(
            json.dumps({"conformance": {"content_size": 8192, "extraction_calls": 50}}),
            encoding="utf-8",
        )
        args = ["--config", str(config_path), "--out", str(tmp_path / "r.mdrm")]
        assert main(["conform", *args, "--fixture", "leaky_vault"]) == 0
        report = ConformanceReport.from_bytes((tmp_path / "r.mdrm").read_bytes())
        assert not report.passed
