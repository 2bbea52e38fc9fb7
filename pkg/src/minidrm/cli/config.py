"""Deployment configuration file.

A single JSON document describes the license service: bind address, crypto
suite, key files, protocol settings, tokens and the content policy table.
An optional ``conformance`` section tunes the harness. Relative paths are
resolved against the directory holding the file.

Example::

    {
      "host": "127.0.0.1",
      "port": 8400,
      "suite": "x25519-ed25519",
      "server_identity": "keys/server.key",
      "root_key": "keys/root.pub",
      "transport_key": "keys/transport.key",
      "tokens": {"alice-token": "alice"},
      "content": [
        {"package_dir": "out/movie", "mode": "rental", "duration": 3600}
      ]
    }
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from minidrm.conformance.deployment import DeploymentSettings
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.messages import LicenseMode
from minidrm.core.suites import DEFAULT_SUITE, available_suites
from minidrm.core.types import SecurityLevel
from minidrm.server.policy import ContentPolicy

SERVER_CONFIG_ENV = "MINIDRM_SERVER_CONFIG"


class ContentConfig(BaseModel):
    """One row of the content policy table."""

    model_config = ConfigDict(extra="forbid")

    package_dir: Path
    mode: str = "rental"
    duration: int = Field(default=3600, gt=0)
    max_concurrent: int = Field(default=1, ge=0)
    min_security_level: str = "software"
    persistent: bool = False
    domain: bool = False

    @field_validator("mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value.upper() not in LicenseMode.__members__:
            raise ValueError(f"unknown license mode '{value}'")
        return value.lower()

    @field_validator("min_security_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        SecurityLevel.parse(value)
        return value.lower()

    def policy(self) -> ContentPolicy:
        return ContentPolicy(
            mode=LicenseMode[self.mode.upper()],
            duration=self.duration,
            max_concurrent=self.max_concurrent,
            min_security_level=SecurityLevel.parse(self.min_security_level),
            persistent=self.persistent,
            domain=self.domain,
        )


class ConformanceConfig(BaseModel):
    """Harness settings; every field maps onto ``DeploymentSettings``."""

    model_config = ConfigDict(extra="forbid")

    content_size: int = Field(default=24 * 1024, gt=0)
    segment_size: int = Field(default=2048, gt=0)
    rotation_interval: int = Field(default=4, gt=0)
    rental_duration: int = Field(default=3600, gt=0)
    lease_duration: int = Field(default=120, gt=0)
    lease_capacity: int = Field(default=2, gt=0)
    extraction_calls: int = Field(default=10_000, gt=0)
    flip_positions: int = Field(default=48, gt=0)


class DeploymentConfig(BaseModel):
    """Validated deployment configuration.

    Attributes:
        host: Bind address of the license service
        port: Bind port
        suite: Crypto suite name
        server_identity: Server KEYPAIR file (with its certificate)
        root_key: Root KEYPAIR file; only the public key is used
        transport_key: Packager/server transport KEYPAIR file
        replay_window: Seconds a seed is remembered
        lease_duration: Seconds a lease slot lives without renewal
        version_floor: Lowest protocol version answered
        rate_limit: Requests per second per device, or null for no limit
        tokens: Auth token to account map
        content: Content policy table
        conformance: Harness settings
    """

    model_config = ConfigDict(extra="forbid")

    host: str = "127.0.0.1"
    port: int = Field(default=8400, ge=0, le=65535)
    suite: str = DEFAULT_SUITE
    server_identity: Optional[Path] = None
    root_key: Optional[Path] = None
    transport_key: Optional[Path] = None
    replay_window: int = Field(default=600, gt=0)
    lease_duration: int = Field(default=120, gt=0)
    version_floor: int = Field(default=2, ge=1)
    rate_limit: Optional[float] = Field(default=20.0, gt=0)
    tokens: Dict[str, str] = Field(default_factory=dict)
    content: List[ContentConfig] = Field(default_factory=list)
    conformance: ConformanceConfig = Field(default_factory=ConformanceConfig)

    @field_validator("suite")
    @classmethod
    def _known_suite(cls, value: str) -> str:
        if value not in available_suites():
            raise ValueError(f"unknown crypto suite '{value}'")
        return value

    def referenced_files(self) -> List[Path]:
        paths = [self.server_identity, self.root_key, self.transport_key]
        return [p for p in paths if p is not None] + [c.package_dir for c in self.content]

    def require(self, name: str) -> Path:
        """Path of a key file the caller needs.

        Raises
        ------
        DrmError
            ``CONFIG`` if the configuration does not name it
        """
        value = getattr(self, name)
        if value is None:
            raise DrmError(ErrorCode.CONFIG, f"configuration does not set {name}")
        return Path(value)

    def harness_settings(self) -> DeploymentSettings:
        return DeploymentSettings(
            suite=self.suite,
            replay_window=self.replay_window,
            version_floor=self.version_floor,
            **self.conformance.model_dump(),
        )


def _resolve(config: DeploymentConfig, base_dir: Path) -> DeploymentConfig:
    def absolute(path: Optional[Path]) -> Optional[Path]:
        if path is None:
            return None
        return path if path.is_absolute() else base_dir / path

    content = [
        c.model_copy(update={"package_dir": absolute(c.package_dir)}) for c in config.content
    ]
    return config.model_copy(
        update={
            "server_identity": absolute(config.server_identity),
            "root_key": absolute(config.root_key),
            "transport_key": absolute(config.transport_key),
            "content": content,
        }
    )


def parse_config(data: Dict[str, Any], base_dir: Union[str, Path]) -> DeploymentConfig:
    """Validate a configuration mapping and check every referenced file exists.

    Raises
    ------
    DrmError
        ``CONFIG`` on any validation failure or missing file
    """
    try:
        config = DeploymentConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise DrmError(ErrorCode.CONFIG, f"invalid configuration: {problems}") from None
    config = _resolve(config, Path(base_dir))
    missing = [str(p) for p in config.referenced_files() if not p.exists()]
    if missing:
        raise DrmError(ErrorCode.CONFIG, f"missing referenced files: {', '.join(missing)}")
    return config


def load_config(path: Optional[Union[str, Path]] = None) -> DeploymentConfig:
    """Load a configuration file, falling back to ``MINIDRM_SERVER_CONFIG``.

    Raises
    ------
    DrmError
        ``CONFIG`` if no path is given, the file is unreadable or invalid
    """
    if path is None:
        path = os.environ.get(SERVER_CONFIG_ENV)
    if not path:
        raise DrmError(
            ErrorCode.CONFIG, f"no configuration file given and {SERVER_CONFIG_ENV} unset"
        )
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DrmError(ErrorCode.CONFIG, f"cannot read configuration {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise DrmError(ErrorCode.CONFIG, f"configuration {path} is not JSON: {e.msg}") from e
    if not isinstance(data, dict):
        raise DrmError(ErrorCode.CONFIG, f"configuration {path} must be a JSON object")
    return parse_config(data, path.parent)
