"""Error codes and the single exception type raised across minidrm.

Every failure that can cross a module or wire boundary is a ``DrmError``
carrying an ``ErrorCode``. The integer values are the codes written into the
ERROR wire envelope, so they must never be renumbered.
"""

from enum import IntEnum
from typing import Any, Optional, Tuple


class ErrorCode(IntEnum):
    """Stable wire error codes."""

    # license request pipeline
    MALFORMED = 1
    BAD_CERT = 2
    BAD_SIGNATURE = 3
    AUTH_FAILED = 4
    REPLAY = 5
    VERSION_ROLLBACK = 6
    LEVEL_TOO_LOW = 7
    UNKNOWN_KEYID = 8
    LEASE_EXHAUSTED = 9
    LEASE_NOT_HELD = 10
    RATE_LIMITED = 11

    # packaging
    SEED_LENGTH = 20
    CONFIG = 21

    # client
    SERVER_CERT_INVALID = 30
    SESSION_MISMATCH = 31
    POLICY_UNSATISFIABLE = 32
    PLAYBACK_DENIED = 33
    LEASE_LOST = 34
    NOT_PERSISTENT = 35
    DEVICE_MISMATCH = 36
    EXPIRED = 37

    # vault
    OPEN_FAILED = 40
    ALREADY_INSTALLED = 41
    KEY_EXPIRED = 42
    KEY_MISSING = 43
    INVALID_HANDLE = 44

    # harness / process
    HARNESS_SETUP = 50
    IO = 60
    ROOT_MISSING = 61
    BIND_FAILED = 62
    TRANSPORT = 63
    INTERNAL = 99


class DrmError(Exception):
    """Failure with a stable error code.

    Parameters
    ----------
    code : ErrorCode
        Wire error code
    message : str, optional
        Human readable detail (never contains key material)
    """

    def __init__(self, code: ErrorCode, message: Optional[str] = None):
        self.code = ErrorCode(code)
        self.message = message or self.code.name
        super().__init__(f"{self.code.name}: {self.message}")

    def __reduce__(self) -> Tuple[Any, ...]:
        return (self.__class__, (self.code, self.message))


# HTTP status used by the license service for each code.
HTTP_STATUS = {
    ErrorCode.MALFORMED: 400,
    ErrorCode.BAD_CERT: 403,
    ErrorCode.BAD_SIGNATURE: 403,
    ErrorCode.AUTH_FAILED: 401,
    ErrorCode.REPLAY: 409,
    ErrorCode.VERSION_ROLLBACK: 426,
    ErrorCode.LEVEL_TOO_LOW: 403,
    ErrorCode.UNKNOWN_KEYID: 404,
    ErrorCode.LEASE_EXHAUSTED: 409,
    ErrorCode.LEASE_NOT_HELD: 409,
    ErrorCode.RATE_LIMITED: 429,
}


def http_status_for(code: ErrorCode) -> int:
    """Return the HTTP status the service answers with for ``code``."""
    return HTTP_STATUS.get(code, 500)


# Process exit status of the ``minidrm`` command for each code; 1 otherwise.
EXIT_CODES = {
    ErrorCode.PLAYBACK_DENIED: 2,
    ErrorCode.LEASE_LOST: 2,
    ErrorCode.EXPIRED: 2,
    ErrorCode.MALFORMED: 3,
    ErrorCode.BAD_CERT: 3,
    ErrorCode.BAD_SIGNATURE: 3,
    ErrorCode.SERVER_CERT_INVALID: 3,
    ErrorCode.SESSION_MISMATCH: 3,
    ErrorCode.DEVICE_MISMATCH: 3,
    ErrorCode.OPEN_FAILED: 3,
    ErrorCode.TRANSPORT: 4,
}


def exit_code_for(code: ErrorCode) -> int:
    return EXIT_CODES.get(code, 1)
