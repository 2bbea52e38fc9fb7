"""
End-to-end workflow over a live HTTP license service.

Keys are provisioned, a file is packaged, the configured service is started
with uvicorn on a local port and a client licenses and plays the package
through ``HttpLicenseTransport``. The persistent license is then replayed
from the offline store after the service has stopped.
"""

import socket
import threading
import time

import pytest
import uvicorn

from minidrm.api.highlevel import play_content, resume_content
from minidrm.cli.config import load_config
from minidrm.cli.main import build_server
from minidrm.client.offline import OfflineStore
from minidrm.client.transport import HttpLicenseTransport
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import KeyRole, generate_root, read_keypair
from minidrm.server.app import create_app

pytestmark = pytest.mark.slow


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def live_url(provisioned):
    port = _free_port()
    server = build_server(load_config(provisioned.config_path))
    config = uvicorn.Config(create_app(server), host="127.0.0.1", port=port, log_level="warning")
    service = uvicorn.Server(config)
    thread = threading.Thread(target=service.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not service.started:
        if time.monotonic() > deadline:
            pytest.fail("license service did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    service.should_exit = True
    thread.join(timeout=10)


def _keys(provisioned):
    root = read_keypair(provisioned.public("root"), KeyRole.ROOT).sign_public
    publisher = read_keypair(provisioned.public("publisher"), KeyRole.PUBLISHER).sign_public
    return root, publisher


class TestLiveService:
    def test_health(self, live_url):
        transport = HttpLicenseTransport(live_url)
        assert transport.health()
        assert transport.session.get(f"{live_url}/healthz").json() == {
            "status": "ok",
            "content": 1,
        }

    def test_play_then_resume_offline(self, suite, provisioned, live_url, tmp_path):
        root, publisher = _keys(provisioned)
        transport = HttpLicenseTransport(live_url)
        store = OfflineStore(tmp_path / "hds")

        played = play_content(
            provisioned.package_dir,
            provisioned.key("client"),
            provisioned.token,
            transport,
            root,
            publisher,
            offline_store=store,
        )
        assert played.digest == suite.hash.digest(provisioned.content)
        assert played.stored_offline

        counts = transport.fetch_metering("alice")["counts"][provisioned.content_id]
        assert counts == {"LICENSE_ISSUED": 1, "PLAYBACK_START": 1, "PLAYBACK_STOP": 1}

        resumed = resume_content(
            provisioned.package_dir, provisioned.key("client"), publisher, store
        )
        assert resumed.digest == played.digest

    def test_rejection_crosses_the_wire(self, provisioned, live_url):
        root, publisher = _keys(provisioned)
        with pytest.raises(DrmError) as info:
            play_content(
                provisioned.package_dir,
                provisioned.key("client"),
                "stolen",
                HttpLicenseTransport(live_url),
                root,
                publisher,
            )
        assert info.value.code is ErrorCode.AUTH_FAILED

    def test_server_certificate_checked_against_root(self, suite, provisioned, live_url):
        _, publisher = _keys(provisioned)
        with pytest.raises(DrmError) as info:
            play_content(
                provisioned.package_dir,
                provisioned.key("client"),
                provisioned.token,
                HttpLicenseTransport(live_url),
                generate_root(suite).sign_public,
                publisher,
            )
        assert info.value.code is ErrorCode.SERVER_CERT_INVALID
