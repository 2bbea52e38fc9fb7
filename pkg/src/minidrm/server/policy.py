"""Per-content license policy held by the server."""

from dataclasses import dataclass

from minidrm.core.messages import LicenseMode, LicensePolicy
from minidrm.core.types import SecurityLevel


@dataclass(frozen=True)
class ContentPolicy:
    """Server-side rules for one content.

    Attributes:
        mode: RENTAL, LEASE or PERSISTENT
        duration: License lifetime in seconds, counted from the client's time reference
        max_concurrent: Lease slot capacity per account (LEASE only; 0 admits nobody)
        min_security_level: Lowest client level that may receive the keys
        persistent: Whether the license may be stored for offline playback
        domain: Wrap keys to the requesting device's domain instead of the device
    """

    mode: LicenseMode = LicenseMode.RENTAL
    duration: int = 3600
    max_concurrent: int = 1
    min_security_level: SecurityLevel = SecurityLevel.SOFTWARE
    persistent: bool = False
    domain: bool = False

    def __post_init__(self) -> None:
        """Validate policy parameters."""
        if self.duration <= 0:
            raise ValueError(f"Policy duration must be positive, got {self.duration}")
        if self.max_concurrent < 0:
            raise ValueError(f"max_concurrent must be non-negative, got {self.max_concurrent}")
        if self.mode is LicenseMode.LEASE and self.persistent:
            raise ValueError("Lease licenses cannot be persistent")

    def issue(self, client_time: int) -> LicensePolicy:
        """Wire policy for a license requested at ``client_time``."""
        return LicensePolicy(
            mode=self.mode,
            expiry=client_time + self.duration,
            persistent=self.persistent,
            min_security_level=self.min_security_level,
            max_concurrent=self.max_concurrent,
        )
