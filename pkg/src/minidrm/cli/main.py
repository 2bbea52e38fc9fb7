"""``minidrm`` command line.

Subcommands::

    minidrm keygen  --role <role> --out <file> [--root <file>] [--domain <file>]
    minidrm pack    --in <file> --out <dir> --content-id <id> --seed-file <path>
                    --sign-key <file> --transport-key <file>
    minidrm serve   [--config <file>]
    minidrm play    --manifest <path> --server <url> --identity <file> --token <s>
                    --root <file> --publisher <file> [--offline-store [DIR]]
    minidrm resume  --content-id <id> --package <dir> --identity <file>
                    --publisher <file> [--offline-store DIR]
    minidrm conform [--config <file>] [--fixture <name>] [--seed <n>] --out <report>

Exit codes: 0 success, 2 playback denied or ended, 3 a verification failure,
4 transport error, 1 anything else.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional

from minidrm import __version__
from minidrm.api.highlevel import pack_file, play_content, resume_content
from minidrm.cli.config import DeploymentConfig, load_config
from minidrm.cli.keygen import keygen
from minidrm.client.offline import OfflineStore
from minidrm.client.transport import HttpLicenseTransport
from minidrm.conformance.deployment import DeploymentSettings, Fixture
from minidrm.conformance.harness import run_suite
from minidrm.core.clock import Clock
from minidrm.core.errors import DrmError, ErrorCode, exit_code_for
from minidrm.core.keys import KeyRole, read_keypair
from minidrm.core.logs import configure_logging, log_event
from minidrm.core.suites import DEFAULT_SUITE, available_suites, get_suite
from minidrm.core.types import SecurityLevel
from minidrm.packager.package import load_package
from minidrm.server.service import LicenseServer

logger = logging.getLogger(__name__)


def _public_key(path: str, role: KeyRole) -> bytes:
    return read_keypair(path, role).require("sign_public")


def build_server(config: DeploymentConfig, clock: Optional[Clock] = None) -> LicenseServer:
    """Create a license server with every configured package registered.

    Raises
    ------
    DrmError
        ``CONFIG`` if a key file is not configured or holds the wrong role,
        ``OPEN_FAILED`` if a sealed registry does not open
    """
    suite = get_suite(config.suite)
    identity = read_keypair(config.require("server_identity"), KeyRole.SERVER)
    root_key = read_keypair(config.require("root_key"), KeyRole.ROOT).require("sign_public")
    server = LicenseServer(
        identity,
        suite,
        root_key,
        clock=clock,
        auth=config.tokens,
        replay_window=config.replay_window,
        version_floor=config.version_floor,
        lease_duration=config.lease_duration,
        rate_limit=config.rate_limit,
    )
    if config.content:
        transport_key = read_keypair(
            config.require("transport_key"), KeyRole.TRANSPORT
        ).require("symmetric_key")
        for entry in config.content:
            sealed = load_package(entry.package_dir, None, suite).read_registry()
            server.add_sealed_content(sealed, transport_key, entry.policy())
    return server


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def command_keygen(args: argparse.Namespace) -> int:
    suite = get_suite(args.suite)
    root = read_keypair(args.root, KeyRole.ROOT) if args.root else None
    domain = read_keypair(args.domain, KeyRole.DOMAIN) if args.domain else None
    try:
        level = SecurityLevel.parse(args.level)
    except ValueError as e:
        raise DrmError(ErrorCode.CONFIG, str(e)) from None
    written = keygen(
        args.role,
        args.out,
        suite,
        root=root,
        domain=domain,
        security_level=level,
        lifetime_days=args.lifetime_days,
    )
    for path in written:
        print(path)
    return 0


def command_pack(args: argparse.Namespace) -> int:
    output = pack_file(
        args.input,
        args.out,
        args.content_id,
        args.sign_key,
        args.transport_key,
        args.seed_file,
        segment_size=args.segment_size,
        rotation_interval=args.rotation,
    )
    print(
        f"packaged {output.manifest.content_id}: {len(output.segments)} segments, "
        f"{len(output.manifest.key_ids)} keys -> {args.out}"
    )
    return 0


def command_serve(args: argparse.Namespace) -> int:
    from minidrm.server.app import serve

    config = load_config(args.config)
    server = build_server(config)
    serve(server, host=args.host or config.host, port=args.port or config.port)
    return 0


def _store(value: Optional[str]) -> Optional[OfflineStore]:
    if value is None:
        return None
    return OfflineStore(value or None)


def command_play(args: argparse.Namespace) -> int:
    package_dir = Path(args.manifest).parent
    result = play_content(
        package_dir,
        args.identity,
        args.token,
        HttpLicenseTransport(args.server),
        _public_key(args.root, KeyRole.ROOT),
        _public_key(args.publisher, KeyRole.PUBLISHER),
        offline_store=_store(args.offline_store),
    )
    print(f"{result.content_id}: {result.delivered_bytes} bytes  digest={result.hexdigest}")
    if result.stored_offline:
        print("license stored for offline playback")
    return 0


def command_resume(args: argparse.Namespace) -> int:
    result = resume_content(
        args.package,
        args.identity,
        _public_key(args.publisher, KeyRole.PUBLISHER),
        OfflineStore(args.offline_store),
        content_id=args.content_id,
    )
    print(f"{result.content_id}: {result.delivered_bytes} bytes  digest={result.hexdigest}")
    return 0


def command_conform(args: argparse.Namespace) -> int:
    if args.config:
        settings = load_config(args.config).harness_settings()
    else:
        settings = DeploymentSettings(suite=args.suite)
    fixture = Fixture.parse(args.fixture)
    report = run_suite(settings, fixture, seed=args.seed)
    try:
        Path(args.out).write_bytes(report.to_bytes())
        if args.csv:
            report.export_csv(args.csv)
    except OSError as e:
        raise DrmError(ErrorCode.IO, f"cannot write report: {e.strerror}") from e
    print(report.to_table())
    # a negative fixture is expected to fail its target property
    if fixture is Fixture.NONE and not report.passed:
        return 1
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minidrm",
        description="Desk-scale DRM pipeline: packager, license server, client and vault.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default=None, help="Log level (default: $MINIDRM_LOG_LEVEL or INFO)"
    )
    subparsers = parser.add_subparsers(title="commands", dest="command", metavar="")
    suites = available_suites()

    p = subparsers.add_parser("keygen", help="Generate a key file")
    p.set_defaults(func=command_keygen)
    p.add_argument("--role", required=True, choices=[r.value for r in KeyRole])
    p.add_argument("--out", required=True, help="Key file to write")
    p.add_argument("--suite", default=DEFAULT_SUITE, choices=suites)
    p.add_argument("--root", help="Root key file (server and client roles)")
    p.add_argument("--domain", help="Domain key file the client joins")
    p.add_argument("--level", default="software", help="Client security level")
    p.add_argument("--lifetime-days", type=int, default=365, help="Server certificate lifetime")

    p = subparsers.add_parser("pack", help="Package a file")
    p.set_defaults(func=command_pack)
    p.add_argument("--in", dest="input", required=True, help="Content file")
    p.add_argument("--out", required=True, help="Package directory")
    p.add_argument("--content-id", required=True)
    p.add_argument("--segment-size", type=int, default=64 * 1024)
    p.add_argument("--rotation", type=int, default=4, help="Segments per crypto-period")
    p.add_argument("--seed-file", required=True, help="Raw 30-byte key seed; created if absent")
    p.add_argument("--sign-key", required=True, help="Publisher key file")
    p.add_argument("--transport-key", required=True, help="Transport key file")

    p = subparsers.add_parser("serve", help="Run the license server")
    p.set_defaults(func=command_serve)
    p.add_argument("--config", help="Deployment config (default: $MINIDRM_SERVER_CONFIG)")
    p.add_argument("--host", default=None, help="Override the configured bind address")
    p.add_argument("--port", type=int, default=None, help="Override the configured port")

    p = subparsers.add_parser("play", help="License and play a package")
    p.set_defaults(func=command_play)
    p.add_argument("--manifest", required=True, help="manifest.mdrm inside a package")
    p.add_argument("--server", required=True, help="License server URL")
    p.add_argument("--identity", required=True, help="Client key file")
    p.add_argument("--token", required=True, help="Account token")
    p.add_argument("--root", required=True, help="Root public key file")
    p.add_argument("--publisher", required=True, help="Publisher public key file")
    p.add_argument(
        "--offline-store",
        nargs="?",
        const="",
        default=None,
        help="Keep a persistent license (default dir: $MINIDRM_HDS_DIR)",
    )

    p = subparsers.add_parser("resume", help="Play from a stored offline license")
    p.set_defaults(func=command_resume)
    p.add_argument("--content-id", required=True)
    p.add_argument("--package", required=True, help="Package directory")
    p.add_argument("--identity", required=True, help="Client key file")
    p.add_argument("--publisher", required=True, help="Publisher public key file")
    p.add_argument("--offline-store", default=None, help="Store dir (default: $MINIDRM_HDS_DIR)")

    p = subparsers.add_parser("conform", help="Run the conformance suite")
    p.set_defaults(func=command_conform)
    p.add_argument("--config", help="Deployment config with an optional conformance section")
    p.add_argument("--suite", default=DEFAULT_SUITE, choices=suites, help="Suite without --config")
    p.add_argument("--fixture", default=Fixture.NONE.value, choices=[f.value for f in Fixture])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Report file (REPORT wire message)")
    p.add_argument("--csv", help="Also export the verdict table as CSV")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1
    try:
        configure_logging(args.log_level)
    except ValueError as e:
        parser.error(str(e))
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except DrmError as e:
        log_event(logger, logging.DEBUG, "command_failed", command=args.command, code=e.code)
        print(f"minidrm {args.command}: {e.code.name}: {e.message}", file=sys.stderr)
        return exit_code_for(e.code)


if __name__ == "__main__":
    sys.exit(main())
