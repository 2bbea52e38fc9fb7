"""Shared fixtures."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from minidrm.api.highlevel import pack_file
from minidrm.cli.keygen import keygen
from minidrm.conformance.deployment import Deployment, DeploymentSettings, Fixture
from minidrm.core.clock import ManualClock
from minidrm.core.keys import KeyRole, read_keypair
from minidrm.core.suites import ALTERNATE_SUITE, DEFAULT_SUITE, get_suite

SMALL_SETTINGS = dict(
    content_size=8 * 1024,
    segment_size=1024,
    rotation_interval=2,
    extraction_calls=50,
    flip_positions=8,
)

CONTENT_ID = "movie"
ACCOUNT_TOKEN = "alice-token"


@pytest.fixture
def suite():
    return get_suite(DEFAULT_SUITE)


@pytest.fixture(params=[DEFAULT_SUITE, ALTERNATE_SUITE])
def any_suite(request):
    return get_suite(request.param)


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def small_settings():
    return DeploymentSettings(**SMALL_SETTINGS)


@pytest.fixture
def dep(small_settings):
    """Complete in-process deployment: three packaged contents and a server."""
    with Deployment(small_settings, Fixture.NONE, np.random.default_rng(0)) as deployment:
        yield deployment


@dataclass
class Provisioned:
    """Key files, one package and a deployment config under a temporary directory."""

    base: Path
    content: bytes
    package_dir: Path
    config_path: Path
    content_id: str = CONTENT_ID
    token: str = ACCOUNT_TOKEN

    def key(self, name: str) -> Path:
        return self.base / "keys" / f"{name}.key"

    def public(self, name: str) -> Path:
        return self.base / "keys" / f"{name}.key.pub"


@pytest.fixture
def provisioned(tmp_path, suite):
    keys = tmp_path / "keys"
    keygen("root", keys / "root.key", suite)
    root = read_keypair(keys / "root.key", KeyRole.ROOT)
    keygen("publisher", keys / "publisher.key", suite)
    keygen("transport", keys / "transport.key", suite)
    keygen("server", keys / "server.key", suite, root=root)
    keygen("client", keys / "client.key", suite, root=root)

    content = bytes(range(256)) * 40
    source = tmp_path / "movie.bin"
    source.write_bytes(content)
    package_dir = tmp_path / "out" / CONTENT_ID
    pack_file(
        source,
        package_dir,
        CONTENT_ID,
        keys / "publisher.key",
        keys / "transport.key",
        keys / "movie.seed",
        segment_size=1024,
        rotation_interval=3,
    )

    config = {
        "suite": suite.name,
        "server_identity": "keys/server.key",
        "root_key": "keys/root.key.pub",
        "transport_key": "keys/transport.key",
        "tokens": {ACCOUNT_TOKEN: "alice"},
        "content": [
            {"package_dir": "out/movie", "mode": "rental", "duration": 3600, "persistent": True}
        ],
    }
    config_path = tmp_path / "minidrm.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return Provisioned(tmp_path, content, package_dir, config_path)
