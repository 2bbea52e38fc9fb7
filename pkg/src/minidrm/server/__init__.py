"""License server: authentication, anti-replay, policy, leases and metering."""

from minidrm.server.ledger import ReplayLedger
from minidrm.server.lease import LeaseSlot, LeaseTable
from minidrm.server.metering import MeteringLog
from minidrm.server.policy import ContentPolicy
from minidrm.server.ratelimit import RateLimiter
from minidrm.server.service import LicenseServer, TokenAuthenticator

__all__ = [
    "ContentPolicy",
    "LeaseSlot",
    "LeaseTable",
    "LicenseServer",
    "MeteringLog",
    "RateLimiter",
    "ReplayLedger",
    "TokenAuthenticator",
]
