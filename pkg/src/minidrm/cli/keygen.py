"""Key and identity provisioning for ``minidrm keygen``."""

import logging
from pathlib import Path
from typing import List, Optional, Union

from minidrm.core.clock import Clock, SystemClock
from minidrm.core.crypto import CryptoSuite
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import (
    KeyPair,
    KeyRole,
    generate_client,
    generate_domain,
    generate_publisher,
    generate_root,
    generate_server,
    generate_transport,
    generate_vault,
    public_part,
    write_keypair,
)
from minidrm.core.logs import log_event
from minidrm.core.types import SecurityLevel

logger = logging.getLogger(__name__)

DEFAULT_SERVER_LIFETIME_DAYS = 365
PUBLIC_SUFFIX = ".pub"

# Roles whose public half is handed to other parties.
PUBLISHED_ROLES = frozenset({KeyRole.ROOT, KeyRole.PUBLISHER, KeyRole.SERVER})


def public_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + PUBLIC_SUFFIX)


def keygen(
    role: Union[str, KeyRole],
    out: Union[str, Path],
    suite: CryptoSuite,
    root: Optional[KeyPair] = None,
    domain: Optional[KeyPair] = None,
    security_level: SecurityLevel = SecurityLevel.SOFTWARE,
    lifetime_days: int = DEFAULT_SERVER_LIFETIME_DAYS,
    clock: Optional[Clock] = None,
) -> List[Path]:
    """Generate one identity and write its key file(s).

    Root, publisher and server identities also get a ``<out>.pub`` file with
    the private halves removed, for distribution to clients and packagers.

    Parameters
    ----------
    role : str or KeyRole
        One of root, publisher, server, client, vault, transport, domain
    out : str or Path
        Key file to write
    suite : CryptoSuite
        Suite the keys belong to
    root : KeyPair, optional
        Root identity; required for server and client
    domain : KeyPair, optional
        Domain the client joins
    security_level : SecurityLevel, default SOFTWARE
        Level certified for a client
    lifetime_days : int, default 365
        Validity of a server certificate
    clock : Clock, optional
        Time source for the server certificate (default: system clock)

    Returns
    -------
    list of Path
        Files written

    Raises
    ------
    DrmError
        ``ROOT_MISSING`` for server or client without a root, ``CONFIG`` for
        an unknown role or a root from another suite, ``IO`` if a file
        cannot be written
    """
    try:
        role = KeyRole(role)
    except ValueError:
        names = ", ".join(r.value for r in KeyRole)
        raise DrmError(ErrorCode.CONFIG, f"Unknown role '{role}'. Available: {names}") from None
    if lifetime_days < 1:
        raise ValueError(f"lifetime_days must be >= 1, got {lifetime_days}")
    for issuer in (root, domain):
        if issuer is not None and issuer.suite != suite.name:
            raise DrmError(
                ErrorCode.CONFIG, f"{issuer.role} key is for suite {issuer.suite}, not {suite.name}"
            )

    if role is KeyRole.ROOT:
        keypair = generate_root(suite)
    elif role is KeyRole.PUBLISHER:
        keypair = generate_publisher(suite)
    elif role is KeyRole.SERVER:
        now = (clock or SystemClock()).now()
        keypair = generate_server(suite, root, now + lifetime_days * 24 * 3600)
    elif role is KeyRole.CLIENT:
        keypair = generate_client(suite, root, security_level, domain)
    elif role is KeyRole.VAULT:
        keypair = generate_vault(suite)
    elif role is KeyRole.TRANSPORT:
        keypair = generate_transport(suite)
    else:
        keypair = generate_domain(suite)

    written = [write_keypair(out, keypair)]
    if role in PUBLISHED_ROLES:
        written.append(write_keypair(public_path(out), public_part(keypair)))
    log_event(logger, logging.INFO, "keygen", role=role.value, suite=suite.name, files=len(written))
    return written
