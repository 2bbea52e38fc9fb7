"""Transports carrying wire messages between a client and the license server."""

import logging
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.messages import ErrorEnvelope, LeaseAction
from minidrm.core.types import ServerCertificate
from minidrm.core.wire import decode

if TYPE_CHECKING:
    from minidrm.server.service import LicenseServer

logger = logging.getLogger(__name__)


class LicenseTransport(ABC):
    """Request/response channel to a license server.

    Implementations raise ``DrmError`` carrying the server's error code, or
    ``TRANSPORT`` when the server cannot be reached.
    """

    @abstractmethod
    def acquire(self, spc_bytes: bytes) -> bytes:
        """Send an SPC; return the CKC."""
        pass

    @abstractmethod
    def renew_lease(self, request_bytes: bytes) -> bytes:
        pass

    @abstractmethod
    def release_lease(self, request_bytes: bytes) -> bytes:
        pass

    @abstractmethod
    def report_metering(self, report_bytes: bytes) -> None:
        pass

    @abstractmethod
    def fetch_metering(self, account: str) -> Dict[str, Any]:
        pass

    @abstractmethod
    def fetch_server_certificate(self) -> ServerCertificate:
        """Certificate the server presents; callers verify it against the root."""
        pass


class InProcessTransport(LicenseTransport):
    """Direct calls into a ``LicenseServer`` living in the same process.

    Parameters
    ----------
    server : LicenseServer
        Server to call
    capture : bool, default False
        Keep every request and response in ``captured`` (transport
        inspection by the conformance harness)
    """

    def __init__(self, server: "LicenseServer", capture: bool = False):
        self.server = server
        self.capture = capture
        self.captured: List[bytes] = []

    def _record(self, *messages: bytes) -> None:
        if self.capture:
            self.captured.extend(messages)

    def acquire(self, spc_bytes: bytes) -> bytes:
        self._record(spc_bytes)
        ckc = self.server.handle_license_request(spc_bytes)
        self._record(ckc)
        return ckc

    def _lease(self, request_bytes: bytes, action: LeaseAction) -> bytes:
        self._record(request_bytes)
        answer = self.server.handle_lease_request(request_bytes, action)
        self._record(answer)
        return answer

    def renew_lease(self, request_bytes: bytes) -> bytes:
        return self._lease(request_bytes, LeaseAction.RENEW)

    def release_lease(self, request_bytes: bytes) -> bytes:
        return self._lease(request_bytes, LeaseAction.RELEASE)

    def report_metering(self, report_bytes: bytes) -> None:
        self._record(report_bytes)
        self.server.handle_metering(report_bytes)

    def fetch_metering(self, account: str) -> Dict[str, Any]:
        return {"account": account, "counts": self.server.metering_counts(account)}

    def fetch_server_certificate(self) -> ServerCertificate:
        return self.server.certificate


class HttpLicenseTransport(LicenseTransport):
    """HTTP client for the license service.

    Only idempotent GETs are retried; a retried license POST would be a
    replay and is refused by the server.

    Parameters
    ----------
    base_url : str
        Service root, e.g. ``http://127.0.0.1:8400``
    timeout : int, optional
        Request timeout in seconds (default: 30)

    Examples
    --------
    >>> transport = HttpLicenseTransport("http://127.0.0.1:8400")
    >>> transport.health()
    True
    """

    def __init__(self, base_url: str, timeout: int = 30):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = self._create_session()

    def _create_session(self) -> requests.Session:
        """Create HTTP session with retry logic.

        Returns
        -------
        requests.Session
            Configured session with automatic retries
        """
        session = requests.Session()
        retry = Retry(
            total=3,
            backoff_factor=1,
            status_forcelist=[429, 500, 502, 503, 504],
            allowed_methods=["GET"],
        )
        adapter = HTTPAdapter(max_retries=retry)
        session.mount("http://", adapter)
        session.mount("https://", adapter)
        return session

    def _url(self, path: str) -> str:
        return f"{self.base_url}{path}"

    @staticmethod
    def _raise_for_envelope(response: requests.Response) -> None:
        if response.ok:
            return
        try:
            envelope = decode(response.content, ErrorEnvelope)
        except DrmError:
            raise DrmError(
                ErrorCode.TRANSPORT, f"server answered HTTP {response.status_code}"
            ) from None
        try:
            code = ErrorCode(envelope.code)
        except ValueError:
            code = ErrorCode.INTERNAL
        raise DrmError(code, envelope.message)

    def _post(self, path: str, body: bytes) -> bytes:
        try:
            response = self.session.post(
                self._url(path),
                data=body,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise DrmError(ErrorCode.TRANSPORT, f"cannot reach {self.base_url}: {e}") from e
        self._raise_for_envelope(response)
        return response.content

    def _get(self, path: str) -> requests.Response:
        try:
            response = self.session.get(self._url(path), timeout=self.timeout)
        except requests.RequestException as e:
            raise DrmError(ErrorCode.TRANSPORT, f"cannot reach {self.base_url}: {e}") from e
        self._raise_for_envelope(response)
        return response

    def acquire(self, spc_bytes: bytes) -> bytes:
        return self._post("/v1/license", spc_bytes)

    def renew_lease(self, request_bytes: bytes) -> bytes:
        return self._post("/v1/lease/renew", request_bytes)

    def release_lease(self, request_bytes: bytes) -> bytes:
        return self._post("/v1/lease/release", request_bytes)

    def report_metering(self, report_bytes: bytes) -> None:
        self._post("/v1/metering", report_bytes)

    def fetch_metering(self, account: str) -> Dict[str, Any]:
        data: Dict[str, Any] = self._get(f"/v1/metering/{account}").json()
        return data

    def fetch_server_certificate(self) -> ServerCertificate:
        return decode(self._get("/v1/certificate").content, ServerCertificate)

    def health(self, timeout: Optional[int] = None) -> bool:
        try:
            response = self.session.get(self._url("/healthz"), timeout=timeout or self.timeout)
        except requests.RequestException:
            return False
        return response.status_code == 200
