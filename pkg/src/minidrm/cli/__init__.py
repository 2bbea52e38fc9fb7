"""Command line, deployment configuration and key provisioning."""

from minidrm.cli.config import DeploymentConfig, load_config, parse_config
from minidrm.cli.keygen import keygen

__all__ = ["DeploymentConfig", "keygen", "load_config", "parse_config"]
