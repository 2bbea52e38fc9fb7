"""Checks backing each of the 21 security properties.

A check takes a fresh ``Deployment`` and returns the evidence it gathered;
the property passes when every outcome is BLOCKED or HELD. Properties
without a check are reported as not claimed, with the note explaining why.
"""

import dataclasses
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from minidrm.conformance.attacks import (
    AttackOutcome,
    attack_ckc_tamper,
    attack_downgrade,
    attack_expired_playback,
    attack_key_extraction,
    attack_lease_overflow,
    attack_license_replay,
    attack_manifest_swap,
    blocked_if,
    count_canary_hits,
    error_code,
    flip_byte,
    held_if,
    scan_files,
    session_key_freshness,
)
from minidrm.conformance.deployment import (
    AUTH_TOKEN,
    ClientDevice,
    Deployment,
    Fixture,
    PackagedContent,
)
from minidrm.conformance.report import PROPERTY_TITLES
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.keys import derive_content_key, generate_root, generate_server, sign_message
from minidrm.core.messages import Ckc
from minidrm.core.suites import ALTERNATE_SUITE, DEFAULT_SUITE
from minidrm.core.types import KeySeed
from minidrm.core.wire import decode, encode
from minidrm.packager.registry import open_registry
from minidrm.packager.segmenter import segment_content

PropertyCheck = Callable[[Deployment], List[AttackOutcome]]

APPROVED_AEADS = frozenset({"AES-128-GCM", "AES-128-CCM"})
APPROVED_SIGNATURES = frozenset({"Ed25519", "ECDSA-P256-SHA256", "ML-DSA-65"})
APPROVED_KEMS = frozenset({"X25519", "P256-ECDH", "X25519+ML-KEM-768"})
MIN_DIGEST_SIZE = 32
MIN_KEY_SIZE = 16
PLAINTEXT_WINDOW = 32
PLAINTEXT_STRIDE = 256


@dataclass(frozen=True)
class PropertySpec:
    """One security property and how it is checked.

    Attributes:
        sp_id: Property number
        check: Evidence-gathering function, or None when not claimed
        note: Scope note shown under the report table
    """

    sp_id: int
    check: Optional[PropertyCheck]
    note: Optional[str] = None

    @property
    def title(self) -> str:
        return PROPERTY_TITLES[self.sp_id]

    @property
    def claimed(self) -> bool:
        return self.check is not None


def _play_all(dep: Deployment, content: PackagedContent) -> Tuple[bool, str]:
    """License and play ``content`` end to end; compare the sink to the input."""
    device = dep.new_client()
    session = dep.licensed_session(device, content)
    sink = device.vault.create_sink("conformance")
    delivered = device.cdm.play(session, sink)
    expected = dep.suite.hash.digest(content.plaintext)
    exact = sink.digest == expected and delivered == len(content.plaintext)
    return exact, f"{delivered} of {len(content.plaintext)} bytes, digest match {exact}"


def _licensed(dep: Deployment, content: PackagedContent) -> Tuple[ClientDevice, int]:
    device = dep.new_client()
    dep.licensed_session(device, content)
    return device, dep.clock.now()


# --------------------------------------------------------------------------
# key management
# --------------------------------------------------------------------------


def check_key_generation(dep: Deployment) -> List[AttackOutcome]:
    """Keys rederive from their seed and no two keys or KeyIds repeat."""
    rederived = 0
    total = 0
    key_ids = []
    for content in dep.contents:
        registry = open_registry(content.loaded.read_registry(), dep.transport_key, dep.suite)
        for entry in registry.entries:
            total += 1
            key_ids.append(entry.key_id)
            again = derive_content_key(content.seed, entry.key_id, dep.suite, entry.period)
            rederived += again.key == entry.key
    keys = dep.key_canaries
    unique = len(set(keys)) == len(keys) and len(set(key_ids)) == len(key_ids)
    short = error_code(lambda: KeySeed(dep.random_bytes(16)))
    return [
        held_if("seed_derivation", rederived == total, f"{rederived}/{total} keys rederived"),
        held_if("key_uniqueness", unique, f"{len(keys)} keys"),
        blocked_if("short_seed", short is ErrorCode.SEED_LENGTH, _name(short)),
    ]


def check_registry_transit(dep: Deployment) -> List[AttackOutcome]:
    """The packager to server registry is sealed and tamper-evident."""
    sealed = dep.rental.loaded.read_registry()
    hits = count_canary_hits([sealed], dep.key_canaries)
    wrong_key = error_code(lambda: open_registry(sealed, dep.random_bytes(16), dep.suite))
    position = int(dep.rng.integers(len(sealed) - 16, len(sealed)))
    damaged = flip_byte(sealed, position)
    tampered = error_code(lambda: open_registry(damaged, dep.transport_key, dep.suite))
    return [
        held_if("registry_scan", hits == 0, f"{hits} canary hits"),
        blocked_if("registry_wrong_key", wrong_key is ErrorCode.OPEN_FAILED, _name(wrong_key)),
        blocked_if("registry_tamper", tampered is ErrorCode.OPEN_FAILED, _name(tampered)),
    ]


def check_license_transit(dep: Deployment) -> List[AttackOutcome]:
    """Licenses are authenticated and no key crosses the wire in the clear."""
    tamper = attack_ckc_tamper(dep)
    captured = list(dep.transport.captured)
    hits = count_canary_hits(captured, dep.key_canaries)
    scan = held_if(
        "license_transit_scan", hits == 0, f"{len(captured)} messages, {hits} canary hits"
    )
    return [tamper, scan]


def check_key_database(dep: Deployment) -> List[AttackOutcome]:
    """No key rests unsealed in any file the deployment wrote."""
    device = dep.new_client()
    session = dep.licensed_session(device, dep.offline)
    device.cdm.store_offline(session)
    hits = scan_files(dep.workdir, dep.key_canaries)
    return [held_if("disk_scan", hits == 0, f"{hits} canary hits")]


def check_key_storage(dep: Deployment) -> List[AttackOutcome]:
    return [attack_key_extraction(dep)]


def check_key_disposal(dep: Deployment) -> List[AttackOutcome]:
    return [attack_expired_playback(dep)]


def check_algorithms(dep: Deployment) -> List[AttackOutcome]:
    """The suite only uses approved primitives and its AEAD rejects tampering."""
    suite = dep.suite
    approved = (
        suite.aead.name in APPROVED_AEADS
        and suite.sig.name in APPROVED_SIGNATURES
        and suite.kem.name in APPROVED_KEMS
        and suite.hash.digest_size >= MIN_DIGEST_SIZE
        and suite.aead.key_size >= MIN_KEY_SIZE
    )
    audit = held_if(
        "algorithm_audit",
        approved,
        f"{suite.aead.name}, {suite.sig.name}, {suite.kem.name}, {suite.hash.name}",
    )

    key = dep.random_bytes(suite.aead.key_size)
    nonce = dep.random_bytes(suite.aead.nonce_size)
    sealed = suite.aead.seal(key, nonce, b"ad", dep.random_bytes(64))
    position = int(dep.rng.integers(0, len(sealed)))
    flipped = error_code(lambda: suite.aead.open(key, nonce, b"ad", flip_byte(sealed, position)))
    wrong_ad = error_code(lambda: suite.aead.open(key, nonce, b"other", sealed))
    tamper = blocked_if(
        "aead_tamper",
        flipped is ErrorCode.OPEN_FAILED and wrong_ad is ErrorCode.OPEN_FAILED,
        f"flip={_name(flipped)}, ad={_name(wrong_ad)}",
    )
    return [audit, tamper]


def check_rekeying(dep: Deployment) -> List[AttackOutcome]:
    """Every segment decrypts under its own period key and under no other.

    Success means the sink received exactly the original segment, so a
    cipher without authentication is judged on its output too.
    """
    content = dep.rental
    device, now = _licensed(dep, content)
    manifest = content.loaded.manifest
    plain = segment_content(content.plaintext, dep.settings.segment_size)
    period_keys = manifest.period_keys()

    same_ok = cross_ok = same_total = cross_total = 0
    for record in manifest.segments:
        blob = content.loaded.read_segment(record)
        expected = dep.suite.hash.digest(plain[record.index])
        for period, key_id in period_keys.items():
            sink = device.vault.create_sink("rekeying")
            trial = dataclasses.replace(record, key_id=key_id)
            try:
                device.vault.decrypt_segment_to_sink(
                    blob, trial, content.content_id, manifest.scheme, sink, now
                )
                decrypted = sink.digest == expected
            except DrmError:
                decrypted = False
            if period == record.period:
                same_total += 1
                same_ok += decrypted
            else:
                cross_total += 1
                cross_ok += decrypted
    distinct = len(set(period_keys.values())) == len(period_keys)
    return [
        held_if(
            "cross_period_grid",
            distinct and same_ok == same_total and cross_ok == 0,
            f"{len(period_keys)} periods; same-period {same_ok}/{same_total}, "
            f"cross-period {cross_ok}/{cross_total}",
        )
    ]


def check_session_keys(dep: Deployment) -> List[AttackOutcome]:
    return [attack_license_replay(dep), session_key_freshness(dep)]


def check_public_keys(dep: Deployment) -> List[AttackOutcome]:
    """Version floor, server certificate expiry and client certificate chain."""
    downgrade = attack_downgrade(dep)

    expired = generate_server(dep.suite, dep.root, dep.clock.now())
    device = dep.new_client(server_identity=expired)
    session = dep.open_session(device, dep.rental)
    stale = error_code(lambda: device.cdm.create_license_request(session, AUTH_TOKEN))

    foreign = dep.new_client(root=generate_root(dep.suite))
    foreign_session = dep.open_session(foreign, dep.rental)
    uncertified = error_code(lambda: foreign.cdm.acquire_license(foreign_session, AUTH_TOKEN))
    return [
        downgrade,
        blocked_if(
            "expired_server_certificate",
            stale is ErrorCode.SERVER_CERT_INVALID,
            _name(stale),
        ),
        blocked_if(
            "foreign_client_certificate", uncertified is ErrorCode.BAD_CERT, _name(uncertified)
        ),
    ]


# --------------------------------------------------------------------------
# content
# --------------------------------------------------------------------------


def check_packaged_storage(dep: Deployment) -> List[AttackOutcome]:
    """No window of the source content appears in any packaged file."""
    hits = 0
    windows = 0
    for content in dep.contents:
        files = [p.read_bytes() for p in sorted(content.loaded.root.rglob("*")) if p.is_file()]
        last = max(len(content.plaintext) - PLAINTEXT_WINDOW, 0)
        for offset in range(0, last + 1, PLAINTEXT_STRIDE):
            window = content.plaintext[offset : offset + PLAINTEXT_WINDOW]
            windows += 1
            hits += sum(window in blob for blob in files)
    return [held_if("plaintext_window_scan", hits == 0, f"{windows} windows, {hits} hits")]


def check_packaged_transit(dep: Deployment) -> List[AttackOutcome]:
    """A modified or substituted segment never reaches the sink."""
    content = dep.rental
    device, now = _licensed(dep, content)
    manifest = content.loaded.manifest
    record = manifest.segments[0]
    blob = content.loaded.read_segment(record)

    def feed(data: bytes) -> Optional[ErrorCode]:
        sink = device.vault.create_sink("transit")
        return error_code(
            lambda: device.vault.decrypt_segment_to_sink(
                data, record, content.content_id, manifest.scheme, sink, now
            )
        )

    flipped = feed(flip_byte(blob, int(dep.rng.integers(0, len(blob)))))
    outcomes = [blocked_if("segment_flip", flipped is ErrorCode.OPEN_FAILED, _name(flipped))]
    if len(manifest.segments) > 1:
        other = content.loaded.read_segment(manifest.segments[1])
        swapped = feed(other)
        outcomes.append(
            blocked_if("segment_swap", swapped is ErrorCode.OPEN_FAILED, _name(swapped))
        )
    return outcomes


def check_video_path(dep: Deployment) -> List[AttackOutcome]:
    """Plaintext only reaches the sink, which exposes a count and a digest."""
    exact, detail = _play_all(dep, dep.rental)
    sink = dep.new_client().vault.create_sink("check")
    public = sorted(a for a in dir(sink) if not a.startswith("_"))
    narrow = public == ["digest", "received_bytes", "sink_id"]
    return [
        held_if("sink_delivery", exact, detail),
        held_if("sink_surface", narrow, ", ".join(public)),
    ]


def check_manifest(dep: Deployment) -> List[AttackOutcome]:
    return [attack_manifest_swap(dep)]


# --------------------------------------------------------------------------
# authentication
# --------------------------------------------------------------------------


def check_user_authentication(dep: Deployment) -> List[AttackOutcome]:
    device = dep.new_client()
    session = dep.open_session(device, dep.rental)
    code = error_code(lambda: device.cdm.acquire_license(session, "not-a-token"))
    return [
        blocked_if("invalid_token", code is ErrorCode.AUTH_FAILED, _name(code)),
        attack_lease_overflow(dep),
    ]


def check_server_authentication(dep: Deployment) -> List[AttackOutcome]:
    """Clients refuse servers outside the root and responses they did not sign."""
    rogue_root = generate_root(dep.suite)
    rogue = generate_server(dep.suite, rogue_root, dep.clock.now() + 3600)
    device = dep.new_client(server_identity=rogue)
    session = dep.open_session(device, dep.rental)
    chain = error_code(lambda: device.cdm.create_license_request(session, AUTH_TOKEN))

    device = dep.new_client()
    session = dep.open_session(device, dep.rental)
    genuine = dep.transport.acquire(encode(device.cdm.create_license_request(session, AUTH_TOKEN)))
    forged = encode(sign_message(decode(genuine, Ckc), rogue.require("sign_private"), dep.suite))
    resigned = error_code(lambda: device.cdm.process_license_response(forged, session))
    return [
        blocked_if(
            "rogue_server_certificate", chain is ErrorCode.SERVER_CERT_INVALID, _name(chain)
        ),
        blocked_if("false_server_response", resigned is ErrorCode.BAD_SIGNATURE, _name(resigned)),
    ]


def check_suite_swap(dep: Deployment) -> List[AttackOutcome]:
    """The whole pipeline runs unchanged under a suite with another KEM and signature."""
    other = ALTERNATE_SUITE if dep.suite.name != ALTERNATE_SUITE else DEFAULT_SUITE
    settings = dataclasses.replace(dep.settings, suite=other)
    with Deployment(settings, Fixture.NONE, dep.rng, workdir=dep.workdir / "suite-swap") as alt:
        differs = (
            alt.suite.kem.name != dep.suite.kem.name and alt.suite.sig.name != dep.suite.sig.name
        )
        exact, detail = _play_all(alt, alt.rental)
    return [
        held_if("suite_primitives_differ", differs, f"{dep.suite.name} -> {other}"),
        held_if("suite_swap_playback", exact, detail),
    ]


def _name(code: Optional[ErrorCode]) -> str:
    return code.name if code is not None else "accepted"


PROPERTIES: Dict[int, PropertySpec] = {
    spec.sp_id: spec
    for spec in (
        PropertySpec(1, check_key_generation),
        PropertySpec(2, check_registry_transit),
        PropertySpec(3, check_license_transit),
        PropertySpec(4, check_key_database),
        PropertySpec(5, check_key_storage),
        PropertySpec(6, check_key_disposal),
        PropertySpec(7, check_algorithms),
        PropertySpec(8, check_rekeying),
        PropertySpec(9, check_session_keys),
        PropertySpec(10, check_public_keys),
        PropertySpec(
            11,
            None,
            "source content is held by the content owner before packaging, "
            "outside this deployment",
        ),
        PropertySpec(12, check_packaged_storage),
        PropertySpec(
            13,
            None,
            "source content reaches the packager outside this deployment",
        ),
        PropertySpec(14, check_packaged_transit),
        PropertySpec(15, check_video_path),
        PropertySpec(16, check_manifest),
        PropertySpec(17, check_user_authentication),
        PropertySpec(18, check_server_authentication),
        PropertySpec(
            19,
            None,
            "per-account rate limiting only; volumetric denial of service is out of scope",
        ),
        PropertySpec(
            20,
            None,
            "the vault is modelled as an in-process boundary only; side channels and "
            "fault injection are not covered",
        ),
        PropertySpec(21, check_suite_swap),
    )
}
