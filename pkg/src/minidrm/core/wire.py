"""Canonical wire codec.

Every message is ``MAGIC ‖ version u16 ‖ type-tag u16 ‖ body``. A body is a
sequence of ``tag u16 ‖ length u32 ‖ value`` fields with strictly ascending
tags. Signatures are always carried in the field with tag ``SIGNATURE_TAG``,
the highest tag any message uses, so the signed payload of a message is the
prefix of its body that precedes the signature field.

Messages are frozen dataclasses deriving from ``WireMessage`` whose fields
are declared with ``wire(...)``. Encoding walks the fields in tag order, so
the byte form does not depend on declaration or construction order.
"""

import struct
from dataclasses import MISSING, dataclass, field, fields
from enum import Enum, IntEnum
from typing import Any, ClassVar, Dict, Iterator, List, Optional, Tuple, Type, TypeVar

from minidrm.core.errors import DrmError, ErrorCode

__all__ = [
    "MAGIC",
    "WIRE_VERSION",
    "SIGNATURE_TAG",
    "Kind",
    "MessageType",
    "WireSpec",
    "WireMessage",
    "wire",
    "item",
    "encode",
    "encode_body",
    "decode",
    "decode_any",
    "decode_body",
    "split_envelope",
    "split_signed",
    "signed_payload",
    "iter_fields",
    "signature_field",
]

MAGIC = b"MDRM"
WIRE_VERSION = 1
SIGNATURE_TAG = 255

_HEADER = struct.Struct(">4sHH")
_FIELD = struct.Struct(">HI")
_ITEM = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_U16 = struct.Struct(">H")

M = TypeVar("M", bound="WireMessage")


class Kind(str, Enum):
    """Value kinds a field may hold."""

    BYTES = "bytes"
    STR = "str"
    UINT = "uint"  # u64 big-endian
    U16 = "u16"
    BOOL = "bool"
    ENUM = "enum"  # u16 big-endian
    MESSAGE = "message"
    LIST = "list"


class MessageType(IntEnum):
    """Envelope type tags."""

    MANIFEST = 1
    INIT_DATA = 2
    SEGMENT_BINDING = 3
    KEY_REGISTRY = 4
    SEALED_REGISTRY = 5
    SPC = 6
    CKC = 7
    LICENSE_BODY = 8
    CLIENT_CERT = 10
    SERVER_CERT = 11
    KEYPAIR = 12
    ERROR = 13
    LEASE_REQUEST = 14
    LEASE_RENEWAL = 15
    LEASE_RELEASED = 16
    METERING_REPORT = 17
    ATTESTATION = 18
    OFFLINE_RECORD = 19
    REPORT = 20
    CKC_BINDING = 21
    PERSISTENT_CONTEXT = 22


@dataclass(frozen=True)
class WireSpec:
    """Field layout: tag, value kind and, where needed, the value type.

    ``of`` is the nested message class (MESSAGE), the enum class (ENUM) or a
    bytes wrapper with ``__bytes__`` (BYTES). ``element`` describes list items.
    """

    tag: int
    kind: Kind
    of: Optional[type] = None
    element: Optional["WireSpec"] = None


def wire(
    tag: int,
    kind: Kind,
    *,
    of: Optional[type] = None,
    element: Optional[WireSpec] = None,
    optional: bool = False,
    secret: bool = False,
) -> Any:
    """Declare a dataclass field carried on the wire under ``tag``.

    ``secret`` fields are left out of ``repr``.
    """
    if not 1 <= tag <= SIGNATURE_TAG:
        raise ValueError(f"Field tag must be between 1 and {SIGNATURE_TAG}, got {tag}")
    spec = WireSpec(tag=tag, kind=kind, of=of, element=element)
    if optional:
        return field(default=None, repr=not secret, metadata={"wire": spec})
    return field(repr=not secret, metadata={"wire": spec})


def item(kind: Kind, of: Optional[type] = None) -> WireSpec:
    """Describe the items of a LIST field."""
    return WireSpec(tag=0, kind=kind, of=of)


_REGISTRY: Dict[int, Type["WireMessage"]] = {}


class WireMessage:
    """Base class for every wire structure.

    Subclasses set ``TYPE_TAG`` when they can travel as a top-level message;
    nested-only structures leave it as ``None``. List fields are normalised to
    tuples so decoded values compare equal to the originals.
    """

    TYPE_TAG: ClassVar[Optional[MessageType]] = None

    def __init_subclass__(cls, **kwargs: Any) -> None:
        super().__init_subclass__(**kwargs)
        tag = cls.__dict__.get("TYPE_TAG")
        if tag is not None:
            _REGISTRY[int(tag)] = cls

    def __post_init__(self) -> None:
        for f in fields(self):  # type: ignore[arg-type]
            spec = f.metadata.get("wire")
            value = getattr(self, f.name)
            if spec is not None and spec.kind is Kind.LIST and isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))


def _specs(cls: type) -> List[Tuple[str, WireSpec]]:
    out = []
    for f in fields(cls):
        spec = f.metadata.get("wire")
        if spec is not None:
            out.append((f.name, spec))
    out.sort(key=lambda pair: pair[1].tag)
    return out


def signature_field(cls: type) -> str:
    """Name of the field holding the detached signature of ``cls``."""
    for name, spec in _specs(cls):
        if spec.tag == SIGNATURE_TAG:
            return name
    raise TypeError(f"{cls.__name__} carries no signature field")


def _required(cls: type) -> Dict[str, bool]:
    return {
        f.name: f.default is MISSING and f.default_factory is MISSING  # type: ignore[misc]
        for f in fields(cls)
    }


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------


def _encode_value(spec: WireSpec, value: Any) -> bytes:
    kind = spec.kind
    if kind is Kind.BYTES:
        return bytes(value)
    if kind is Kind.STR:
        if not isinstance(value, str):
            raise TypeError(f"Expected str, got {type(value).__name__}")
        return value.encode("utf-8")
    if kind is Kind.UINT:
        return _U64.pack(int(value))
    if kind is Kind.U16:
        return _U16.pack(int(value))
    if kind is Kind.BOOL:
        return b"\x01" if value else b"\x00"
    if kind is Kind.ENUM:
        return _U16.pack(int(value))
    if kind is Kind.MESSAGE:
        return encode_body(value)
    if kind is Kind.LIST:
        assert spec.element is not None
        parts = []
        for element in value:
            raw = _encode_value(spec.element, element)
            parts.append(_ITEM.pack(len(raw)) + raw)
        return b"".join(parts)
    raise TypeError(f"Unsupported kind {kind}")


def encode_body(message: "WireMessage", *, exclude_signature: bool = False) -> bytes:
    """Encode the TLV body of ``message``.

    Optional fields holding ``None`` are omitted. With ``exclude_signature``
    the signature field is left out, yielding the signed payload.
    """
    parts = []
    for name, spec in _specs(type(message)):
        if exclude_signature and spec.tag == SIGNATURE_TAG:
            continue
        value = getattr(message, name)
        if value is None:
            continue
        raw = _encode_value(spec, value)
        parts.append(_FIELD.pack(spec.tag, len(raw)) + raw)
    return b"".join(parts)


def signed_payload(message: "WireMessage") -> bytes:
    """Bytes covered by the detached signature of ``message``."""
    return encode_body(message, exclude_signature=True)


def encode(message: "WireMessage") -> bytes:
    """Canonical encoding of a top-level message, envelope included."""
    tag = type(message).TYPE_TAG
    if tag is None:
        raise TypeError(f"{type(message).__name__} cannot be sent as a top-level message")
    return _HEADER.pack(MAGIC, WIRE_VERSION, int(tag)) + encode_body(message)


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------


def _malformed(message: str) -> DrmError:
    return DrmError(ErrorCode.MALFORMED, message)


def iter_fields(body: bytes) -> Iterator[Tuple[int, int, bytes]]:
    """Walk the TLV framing of ``body``.

    Yields ``(offset, tag, value)``. Only framing is checked here: lengths
    stay in bounds and tags strictly ascend.
    """
    view = memoryview(body)
    offset = 0
    last_tag = 0
    while offset < len(body):
        if len(body) - offset < _FIELD.size:
            raise _malformed("truncated field header")
        tag, length = _FIELD.unpack_from(view, offset)
        start = offset + _FIELD.size
        end = start + length
        if end > len(body):
            raise _malformed(f"field {tag} overruns body")
        if tag <= last_tag:
            raise _malformed("field tags not strictly ascending")
        yield offset, tag, bytes(view[start:end])
        last_tag = tag
        offset = end


def _decode_value(spec: WireSpec, raw: bytes) -> Any:
    kind = spec.kind
    if kind is Kind.BYTES:
        return spec.of(raw) if spec.of is not None else raw
    if kind is Kind.STR:
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise _malformed("invalid utf-8 string") from e
    if kind is Kind.UINT:
        if len(raw) != _U64.size:
            raise _malformed("uint field must be 8 bytes")
        return _U64.unpack(raw)[0]
    if kind in (Kind.U16, Kind.ENUM):
        if len(raw) != _U16.size:
            raise _malformed("u16 field must be 2 bytes")
        value = _U16.unpack(raw)[0]
        if kind is Kind.ENUM:
            assert spec.of is not None
            try:
                return spec.of(value)
            except ValueError as e:
                raise _malformed(f"unknown {spec.of.__name__} value {value}") from e
        return value
    if kind is Kind.BOOL:
        if raw not in (b"\x00", b"\x01"):
            raise _malformed("bool field must be 0 or 1")
        return raw == b"\x01"
    if kind is Kind.MESSAGE:
        assert spec.of is not None
        return decode_body(spec.of, raw)
    if kind is Kind.LIST:
        assert spec.element is not None
        items = []
        offset = 0
        while offset < len(raw):
            if len(raw) - offset < _ITEM.size:
                raise _malformed("truncated list item")
            (length,) = _ITEM.unpack_from(raw, offset)
            start = offset + _ITEM.size
            end = start + length
            if end > len(raw):
                raise _malformed("list item overruns field")
            items.append(_decode_value(spec.element, raw[start:end]))
            offset = end
        return tuple(items)
    raise _malformed(f"unsupported kind {kind}")


def decode_body(cls: Type[M], body: bytes) -> M:
    """Decode a TLV body into ``cls``; any violation is ``MALFORMED``."""
    specs = {spec.tag: (name, spec) for name, spec in _specs(cls)}
    values: Dict[str, Any] = {}
    for _, tag, raw in iter_fields(body):
        if tag not in specs:
            raise _malformed(f"unknown field tag {tag} for {cls.__name__}")
        name, spec = specs[tag]
        values[name] = _decode_value(spec, raw)
    for name, required in _required(cls).items():
        if required and name not in values:
            raise _malformed(f"missing field {name} in {cls.__name__}")
    try:
        return cls(**values)
    except DrmError as e:
        raise _malformed(f"invalid {cls.__name__}: {e.message}") from e
    except (ValueError, TypeError) as e:
        raise _malformed(f"invalid {cls.__name__}: {e}") from e


def split_envelope(data: bytes) -> Tuple[MessageType, bytes]:
    """Check magic and version; return the type tag and raw body."""
    if len(data) < _HEADER.size:
        raise _malformed("message shorter than envelope header")
    magic, version, tag = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise _malformed("bad magic")
    if version != WIRE_VERSION:
        raise _malformed(f"unsupported wire version {version}")
    try:
        message_type = MessageType(tag)
    except ValueError as e:
        raise _malformed(f"unknown message type {tag}") from e
    return message_type, bytes(data[_HEADER.size :])


def decode(data: bytes, cls: Type[M]) -> M:
    """Decode a top-level message that must be of type ``cls``."""
    message_type, body = split_envelope(data)
    if cls.TYPE_TAG is None or message_type != cls.TYPE_TAG:
        raise _malformed(f"expected {cls.__name__}, got {message_type.name}")
    return decode_body(cls, body)


def decode_any(data: bytes) -> "WireMessage":
    """Decode any registered top-level message."""
    message_type, body = split_envelope(data)
    cls = _REGISTRY.get(int(message_type))
    if cls is None:
        raise _malformed(f"no structure registered for {message_type.name}")
    return decode_body(cls, body)


def split_signed(data: bytes, cls: Type["WireMessage"]) -> Tuple[bytes, bytes]:
    """Separate signed payload and signature without interpreting fields.

    Only the envelope and the TLV framing are examined. Returns
    ``(payload, signature)`` where ``payload`` is the body prefix preceding
    the signature field.
    """
    message_type, body = split_envelope(data)
    if cls.TYPE_TAG is None or message_type != cls.TYPE_TAG:
        raise _malformed(f"expected {cls.__name__}, got {message_type.name}")
    last: Optional[Tuple[int, int, bytes]] = None
    for entry in iter_fields(body):
        last = entry
    if last is None or last[1] != SIGNATURE_TAG:
        raise _malformed("signature field missing")
    offset, _, signature = last
    return body[:offset], signature
