"""Attack simulations run against a live deployment.

Each attack returns an ``AttackOutcome``. ``detail`` strings only carry
facts that do not depend on fresh randomness (error code names, counts), so
two runs with the same harness seed produce identical evidence.
"""

import dataclasses
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, List, Optional, Sequence, Set, Union

import numpy as np

from minidrm.client.session import PlaybackSession, SessionState
from minidrm.conformance.deployment import AUTH_TOKEN, ClientDevice, Deployment
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import generate_publisher, sign_message
from minidrm.core.logs import transcript_digest
from minidrm.core.messages import PROTOCOL_VERSIONS
from minidrm.core.wire import decode, encode
from minidrm.packager.manifest import SignedManifest


class Outcome(str, Enum):
    """Result of one attack or structural check."""

    BLOCKED = "blocked"
    SUCCEEDED = "succeeded"
    HELD = "held"
    VIOLATED = "violated"

    @property
    def ok(self) -> bool:
        return self in (Outcome.BLOCKED, Outcome.HELD)


@dataclass(frozen=True)
class AttackOutcome:
    """Evidence of one attack or check.

    Attributes:
        attack: Attack or check name
        outcome: What happened
        detail: Deterministic description (codes, counts)
    """

    attack: str
    outcome: Outcome
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome.ok

    @property
    def digest(self) -> str:
        return transcript_digest(
            self.attack.encode(), self.outcome.value.encode(), self.detail.encode()
        )


def blocked_if(attack: str, condition: bool, detail: str = "") -> AttackOutcome:
    return AttackOutcome(attack, Outcome.BLOCKED if condition else Outcome.SUCCEEDED, detail)


def held_if(check: str, condition: bool, detail: str = "") -> AttackOutcome:
    return AttackOutcome(check, Outcome.HELD if condition else Outcome.VIOLATED, detail)


def flip_byte(data: bytes, position: int, mask: int = 0x01) -> bytes:
    """Copy of ``data`` with one byte XORed by a non-zero ``mask``."""
    if not 1 <= mask <= 0xFF:
        raise ValueError(f"mask must be between 1 and 255, got {mask}")
    out = bytearray(data)
    out[position] ^= mask
    return bytes(out)


def sample_positions(rng: np.random.Generator, length: int, count: int) -> List[int]:
    """Distinct sorted byte positions drawn from ``rng``."""
    count = min(count, length)
    return sorted(int(p) for p in rng.choice(length, size=count, replace=False))


def error_code(call: Callable[[], Any]) -> Optional[ErrorCode]:
    """Run ``call``; return the DrmError code it raised, or None on success."""
    try:
        call()
    except DrmError as e:
        return e.code
    return None


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


def attack_manifest_swap(dep: Deployment) -> AttackOutcome:
    """Substitute attacker manifests in transit.

    Three substitutions are tried: every segment URI redirected with the
    original signature kept, the same manifest re-signed by an attacker key,
    and single-byte mutations of the genuine manifest. Blocked iff the
    client rejects every one before fetching a segment.
    """
    device = dep.new_client()
    genuine = dep.rental.loaded.manifest_bytes
    manifest = decode(genuine, SignedManifest)
    redirected = dataclasses.replace(
        manifest,
        segments=tuple(
            dataclasses.replace(r, uri=f"https://attacker.invalid/{r.uri}")
            for r in manifest.segments
        ),
    )
    attacker = generate_publisher(dep.suite)
    candidates = {
        "redirected": encode(redirected),
        "attacker_signed": encode(
            sign_message(redirected, attacker.require("sign_private"), dep.suite)
        ),
    }
    codes = []
    accepted = 0
    for label, data in candidates.items():
        code = error_code(lambda data=data: device.cdm.load_manifest(data))
        codes.append(f"{label}={code.name if code else 'accepted'}")
        accepted += code is None

    positions = sample_positions(dep.rng, len(genuine), dep.settings.flip_positions)
    mutated_accepted = 0
    for position in positions:
        mutated = flip_byte(genuine, position)
        if error_code(lambda: device.cdm.load_manifest(mutated)) is None:
            mutated_accepted += 1
    detail = f"{', '.join(codes)}; mutations accepted {mutated_accepted}/{len(positions)}"
    return blocked_if("manifest_swap", accepted == 0 and mutated_accepted == 0, detail)


# --------------------------------------------------------------------------
# license exchange
# --------------------------------------------------------------------------


def attack_license_replay(dep: Deployment) -> AttackOutcome:
    """Resubmit a captured SPC after it was answered.

    Blocked iff the server answers the duplicate with REPLAY.
    """
    device = dep.new_client()
    session = dep.open_session(device, dep.rental)
    spc_bytes = encode(device.cdm.create_license_request(session, AUTH_TOKEN))
    ckc = dep.transport.acquire(spc_bytes)
    device.cdm.process_license_response(ckc, session)
    code = error_code(lambda: dep.transport.acquire(spc_bytes))
    return blocked_if(
        "license_replay", code is ErrorCode.REPLAY, code.name if code else "duplicate answered"
    )


def session_key_freshness(dep: Deployment) -> AttackOutcome:
    """Two requests for the same content must not share seed or encapsulation."""
    device = dep.new_client()
    session = dep.open_session(device, dep.rental)
    first = device.cdm.create_license_request(session, AUTH_TOKEN)
    second = device.cdm.create_license_request(session, AUTH_TOKEN)
    fresh = (
        first.anti_replay_seed != second.anti_replay_seed
        and first.session_key_encap != second.session_key_encap
    )
    return held_if("session_key_freshness", fresh, "distinct" if fresh else "reused")


def attack_ckc_tamper(dep: Deployment) -> AttackOutcome:
    """Flip single bytes of fresh CKCs and splice a CKC into another session.

    Blocked iff every altered response is refused with BAD_SIGNATURE or
    SESSION_MISMATCH.
    """
    refused = {ErrorCode.BAD_SIGNATURE, ErrorCode.SESSION_MISMATCH}
    device = dep.new_client()
    session = dep.open_session(device, dep.rental)

    sample = dep.transport.acquire(encode(device.cdm.create_license_request(session, AUTH_TOKEN)))
    positions = sample_positions(dep.rng, len(sample), dep.settings.flip_positions)
    escaped = 0
    for position in positions:
        spc = device.cdm.create_license_request(session, AUTH_TOKEN)
        ckc = dep.transport.acquire(encode(spc))
        mutated = flip_byte(ckc, position % len(ckc))
        code = error_code(lambda: device.cdm.process_license_response(mutated, session))
        escaped += code not in refused

    other = dep.new_client()
    other_session = dep.open_session(other, dep.rental)
    foreign = dep.transport.acquire(
        encode(other.cdm.create_license_request(other_session, AUTH_TOKEN))
    )
    device.cdm.create_license_request(session, AUTH_TOKEN)
    splice = error_code(lambda: device.cdm.process_license_response(foreign, session))
    splice_name = splice.name if splice else "installed"
    return blocked_if(
        "ckc_tamper",
        escaped == 0 and splice is ErrorCode.SESSION_MISMATCH,
        f"flips escaped {escaped}/{len(positions)}; splice={splice_name}",
    )


def attack_downgrade(dep: Deployment) -> AttackOutcome:
    """Offer only protocol versions below the server floor.

    Blocked iff the server answers VERSION_ROLLBACK.
    """
    old = tuple(v for v in PROTOCOL_VERSIONS if v < dep.settings.version_floor)
    device = dep.new_client(supported_versions=old)
    session = dep.open_session(device, dep.rental)
    code = error_code(lambda: device.cdm.acquire_license(session, AUTH_TOKEN))
    detail = code.name if code else f"licensed at version {session.receipt.protocol_version}"
    return blocked_if("downgrade", code is ErrorCode.VERSION_ROLLBACK, detail)


def attack_lease_overflow(dep: Deployment) -> AttackOutcome:
    """Hold one more concurrent lease than the account capacity allows.

    Blocked iff the extra device gets LEASE_EXHAUSTED while the others hold
    their slots.
    """
    capacity = dep.settings.lease_capacity
    devices = [dep.new_client() for _ in range(capacity + 1)]
    granted = 0
    last: Optional[ErrorCode] = None
    for device in devices:
        session = dep.open_session(device, dep.lease)
        last = error_code(lambda: device.cdm.acquire_license(session, AUTH_TOKEN))
        granted += last is None
    return blocked_if(
        "lease_overflow",
        granted == capacity and last is ErrorCode.LEASE_EXHAUSTED,
        f"granted {granted} of capacity {capacity}; extra={last.name if last else 'granted'}",
    )


# --------------------------------------------------------------------------
# vault
# --------------------------------------------------------------------------


def attack_expired_playback(dep: Deployment) -> AttackOutcome:
    """Decrypt with a rental key after expiry, before and after disposal.

    Blocked iff the vault refuses both attempts.
    """
    device = dep.new_client()
    session = dep.licensed_session(device, dep.rental)
    assert session.receipt is not None
    record = session.manifest.segments[0]
    blob = dep.rental.loaded.read_segment(record)
    dep.clock.set(session.receipt.expiry)
    now = dep.clock.now()

    def decrypt() -> int:
        return device.vault.decrypt_segment_to_sink(
            blob, record, session.content_id, session.manifest.scheme,
            device.vault.create_sink("expired"), now,
        )

    before = error_code(decrypt)
    device.vault.dispose_expired(now)
    after = error_code(decrypt)
    detail = f"before disposal={_name(before)}; after disposal={_name(after)}"
    return blocked_if("expired_playback", before is not None and after is not None, detail)


def _name(code: Optional[ErrorCode]) -> str:
    return code.name if code is not None else "decrypted"


def _walk(value: Any, seen: Set[int]) -> Iterator[Union[bytes, str]]:
    """Every bytes and str reachable from ``value``, plus reprs of opaque objects."""
    if value is None or isinstance(value, (bool, int, float, Enum)):
        return
    if isinstance(value, (bytes, bytearray, memoryview)):
        yield bytes(value)
        return
    if isinstance(value, str):
        yield value
        return
    if id(value) in seen:
        return
    seen.add(id(value))
    if isinstance(value, BaseException):
        yield str(value)
        yield from _walk(value.args, seen)
        yield from _walk(getattr(value, "message", None), seen)
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        yield repr(value)
        for f in dataclasses.fields(value):
            yield from _walk(getattr(value, f.name), seen)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(k, seen)
            yield from _walk(v, seen)
    elif isinstance(value, (list, tuple, set, frozenset)):
        for element in value:
            yield from _walk(element, seen)
    elif not callable(value):
        yield repr(value)


def count_canary_hits(values: Iterable[Any], canaries: Sequence[bytes]) -> int:
    """Occurrences of any canary, raw or hex, in the values and their fields."""
    needles_hex = [c.hex() for c in canaries]
    hits = 0
    seen: Set[int] = set()
    for value in values:
        for blob in _walk(value, seen):
            if isinstance(blob, bytes):
                hits += sum(c in blob for c in canaries)
            else:
                lowered = blob.lower()
                hits += sum(h in lowered for h in needles_hex)
    return hits


def scan_files(root: Path, canaries: Sequence[bytes]) -> int:
    """Canary occurrences in every file under ``root``."""
    blobs = [p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()]
    return count_canary_hits(blobs, canaries)


def attack_key_extraction(dep: Deployment, calls: Optional[int] = None) -> AttackOutcome:
    """Drive randomized public client and vault calls and scan for keys.

    Every return value, every raised error, the captured logs and the
    offline store files are searched for the deployment's content keys.
    Blocked iff there is no hit.
    """
    calls = calls or dep.settings.extraction_calls
    device = dep.new_client()
    cdm, vault = device.cdm, device.vault
    sink = vault.create_sink("extraction")
    sessions: List[PlaybackSession] = []
    observed: List[Any] = []

    def new_session() -> PlaybackSession:
        content = dep.contents[int(dep.rng.integers(0, len(dep.contents)))]
        session = dep.open_session(device, content)
        sessions.append(session)
        return session

    def pick() -> PlaybackSession:
        if not sessions:
            return new_session()
        return sessions[int(dep.rng.integers(0, len(sessions)))]

    def licensed() -> Optional[PlaybackSession]:
        live = [s for s in sessions if s.state is SessionState.LICENSED]
        return live[int(dep.rng.integers(0, len(live)))] if live else None

    def op_acquire() -> Any:
        session = new_session()
        cdm.acquire_license(session, AUTH_TOKEN)
        return session

    def op_request() -> Any:
        return cdm.create_license_request(pick(), AUTH_TOKEN)

    def op_play() -> Any:
        session = licensed() or pick()
        count = len(session.manifest.segments)
        start = int(dep.rng.integers(0, max(count, 1)))
        return cdm.play(session, sink, range(start, min(count, start + 3)))

    def op_bad_response() -> Any:
        return cdm.process_license_response(dep.random_bytes(64), pick())

    def op_store() -> Any:
        session = licensed() or pick()
        cdm.store_offline(session)
        return cdm.offline_store.get(session.content_id) if cdm.offline_store else None

    def op_resume() -> Any:
        return cdm.resume_offline(dep.offline.loaded.manifest, dep.offline.loaded.read_segment)

    def op_renew() -> Any:
        return cdm.renew_lease(licensed() or pick())

    def op_inspect() -> Any:
        return (vault.installed_key_ids(), vault.attest(dep.random_bytes(16)), sink.digest, sink)

    def op_grant() -> Any:
        grant = vault.open_playback(vault.installed_key_ids(), dep.clock.now())
        vault.close_playback(grant)
        return grant

    def op_tick() -> Any:
        dep.clock.advance(int(dep.rng.integers(0, 6)))
        return vault.dispose_expired(dep.clock.now())

    def op_stop() -> Any:
        session = pick()
        cdm.stop(session)
        return session

    operations = [
        op_acquire, op_request, op_play, op_bad_response, op_store, op_resume,
        op_renew, op_inspect, op_grant, op_tick, op_stop,
    ]
    for _ in range(calls):
        operation = operations[int(dep.rng.integers(0, len(operations)))]
        try:
            observed.append(operation())
        except (DrmError, ValueError) as e:
            observed.append(e)

    canaries = dep.key_canaries
    hits = count_canary_hits(observed, canaries)
    hits += count_canary_hits(dep.logs.lines, canaries)
    if cdm.offline_store is not None:
        hits += scan_files(cdm.offline_store.store_dir, canaries)
    return blocked_if("key_extraction", hits == 0, f"{calls} calls, {hits} canary hits")


def licensed_device(dep: Deployment) -> ClientDevice:
    """A fresh device holding a rental license (used by several checks)."""
    device = dep.new_client()
    dep.licensed_session(device, dep.rental)
    return device
