"""Canonical byte encoding for authorization messages and the domain-separated hash.

Every field, the tag included, is written as a 4-byte big-endian length
followed by the raw bytes.  Integers are 8-byte big-endian, chain ids and
asset descriptors are UTF-8 strings.  Because the tag is length-prefixed the
same way, ``hash_domain(tag, payload)`` and the digest of an encoded message
whose first field is that tag are the same computation.

All roles (relay, ledger verifier, party clients) go through this module.
"""

from __future__ import annotations

import contextlib
import enum
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

DIGEST_SIZE = 32
MAX_FIELD_LEN = 1 << 16

PROTOCOL_TAGS = (
    "hfipay:bind",
    "hfipay:bind-key",
    "hfipay:bind-attest",
    "hfipay:claim",
    "hfipay:cross-claim",
    "hfipay:refund",
)
# Implementation-local labels; never part of a replay-sensitive message.
INTERNAL_TAGS = (
    "hfipay:derive",
    "hfipay:id-com",
    "hfipay:root",
    "hfipay:sim-addr",
    "hfipay:publics",
)
_KNOWN_TAGS = frozenset(PROTOCOL_TAGS + INTERNAL_TAGS)


class CodecError(ValueError):
    pass


class UnknownTag(CodecError):
    pass


class WrongFieldOrder(CodecError):
    pass


class WrongFieldCount(CodecError):
    pass


class OversizeField(CodecError):
    pass


class TagMismatch(CodecError):
    pass


class TruncatedInput(CodecError):
    pass


class TrailingBytes(CodecError):
    pass


# --------------------------------------------------------------------------
# hash backends


def _keccak256(data: bytes) -> bytes:
    try:
        from Crypto.Hash import keccak  # type: ignore[import-not-found]
    except ImportError:
        try:
            from eth_hash.auto import keccak as eth_keccak  # type: ignore[import-not-found]
        except ImportError as exc:
            raise RuntimeError("keccak256 backend needs pycryptodome or eth-hash") from exc
        return eth_keccak(data)
    return keccak.new(digest_bits=256, data=data).digest()


_BACKENDS: dict[str, Callable[[bytes], bytes]] = {
    "sha256": lambda data: hashlib.sha256(data).digest(),
    "sha3-256": lambda data: hashlib.sha3_256(data).digest(),
    "keccak256": _keccak256,
}
_active_backend = "sha256"


def register_hash_backend(name: str, fn: Callable[[bytes], bytes]) -> None:
    """Add a 256-bit hash under ``name`` so it can be selected later."""
    _BACKENDS[name] = fn


def set_hash_backend(name: str) -> None:
    global _active_backend
    if name not in _BACKENDS:
        raise KeyError(f"unknown hash backend {name!r}")
    _active_backend = name


def get_hash_backend() -> str:
    return _active_backend


@contextlib.contextmanager
def use_hash_backend(name: str) -> Iterator[None]:
    previous = _active_backend
    set_hash_backend(name)
    try:
        yield
    finally:
        set_hash_backend(previous)


def digest(data: bytes) -> bytes:
    """Untagged H over raw bytes (used for commitments such as h_ref = H(sig))."""
    out = _BACKENDS[_active_backend](data)
    if len(out) != DIGEST_SIZE:
        raise CodecError(f"hash backend {_active_backend!r} returned {len(out)} bytes")
    return out


# --------------------------------------------------------------------------
# primitives


def length_prefixed(value: bytes) -> bytes:
    if len(value) > MAX_FIELD_LEN:
        raise OversizeField(f"field of {len(value)} bytes exceeds {MAX_FIELD_LEN}")
    return struct.pack(">I", len(value)) + value


def u64(n: int) -> bytes:
    if not 0 <= n < 1 << 64:
        raise CodecError(f"integer {n} does not fit in 64 bits")
    return struct.pack(">Q", n)


def read_u64(raw: bytes) -> int:
    if len(raw) != 8:
        raise CodecError("integer fields are exactly 8 bytes")
    return struct.unpack(">Q", raw)[0]


@dataclass(frozen=True)
class DomainTag:
    label: str

    def __post_init__(self) -> None:
        if self.label not in _KNOWN_TAGS:
            raise UnknownTag(self.label)

    @property
    def raw(self) -> bytes:
        return self.label.encode("ascii")

    def encoded(self) -> bytes:
        return length_prefixed(self.raw)


BIND = DomainTag("hfipay:bind")
BIND_KEY = DomainTag("hfipay:bind-key")
BIND_ATTEST = DomainTag("hfipay:bind-attest")
CLAIM = DomainTag("hfipay:claim")
CROSS_CLAIM = DomainTag("hfipay:cross-claim")
REFUND = DomainTag("hfipay:refund")
DERIVE = DomainTag("hfipay:derive")
ID_COM = DomainTag("hfipay:id-com")
ROOT = DomainTag("hfipay:root")
SIM_ADDR = DomainTag("hfipay:sim-addr")
PUBLICS = DomainTag("hfipay:publics")


def hash_domain(tag: DomainTag | str, payload: bytes) -> bytes:
    if isinstance(tag, str):
        tag = DomainTag(tag)
    return digest(tag.encoded() + payload)


# --------------------------------------------------------------------------
# authorization messages


@dataclass(frozen=True)
class Field:
    name: str
    value: bytes

    def encode(self) -> bytes:
        return length_prefixed(self.value)


class MessageKind(enum.Enum):
    CLAIM = "claim"
    CROSS_CLAIM = "cross-claim"
    REFUND = "refund"

    @property
    def tag(self) -> DomainTag:
        return _KIND_TAG[self]

    @property
    def field_names(self) -> tuple[str, ...]:
        return FIELD_ORDER[self]


_KIND_TAG = {
    MessageKind.CLAIM: CLAIM,
    MessageKind.CROSS_CLAIM: CROSS_CLAIM,
    MessageKind.REFUND: REFUND,
}

FIELD_ORDER: dict[MessageKind, tuple[str, ...]] = {
    MessageKind.CLAIM: (
        "tag", "d_dep", "c", "a", "e", "intent_id", "rho", "v", "beta", "t_exp", "n",
    ),
    MessageKind.CROSS_CLAIM: (
        "tag", "d_dep", "c_s", "a", "e", "c_d", "intent_id", "rho", "v", "beta_cd", "t_exp", "n",
    ),
    MessageKind.REFUND: (
        "tag", "d_dep", "c", "a", "intent_id", "rho", "v", "gamma_a", "t_exp",
    ),
}

INT_FIELDS = frozenset({"e", "v", "t_exp", "n"})
TEXT_FIELDS = frozenset({"c", "a", "c_s", "c_d"})


def encode_auth_message(kind: MessageKind, fields: Sequence[Field]) -> bytes:
    expected = kind.field_names
    if len(fields) != len(expected):
        raise WrongFieldCount(f"{kind.value} takes {len(expected)} fields, got {len(fields)}")
    for position, (got, want) in enumerate(zip(fields, expected)):
        if got.name != want:
            raise WrongFieldOrder(f"{kind.value} field {position} must be {want!r}, got {got.name!r}")
    if fields[0].value != kind.tag.raw:
        raise TagMismatch(f"{kind.value} message must carry tag {kind.tag.label!r}")
    return b"".join(f.encode() for f in fields)


def decode_auth_message(kind: MessageKind, data: bytes) -> list[Field]:
    out: list[Field] = []
    offset = 0
    for name in kind.field_names:
        if offset + 4 > len(data):
            raise TruncatedInput(f"missing length prefix for {name!r}")
        (size,) = struct.unpack_from(">I", data, offset)
        offset += 4
        if size > MAX_FIELD_LEN:
            raise OversizeField(f"declared length {size} for {name!r}")
        if offset + size > len(data):
            raise TruncatedInput(f"field {name!r} declares {size} bytes")
        out.append(Field(name, bytes(data[offset:offset + size])))
        offset += size
    if offset != len(data):
        raise TrailingBytes(f"{len(data) - offset} bytes after last field")
    if out[0].value != kind.tag.raw:
        raise TagMismatch(f"decoded tag {out[0].value!r} is not {kind.tag.label!r}")
    return out


def field_bytes(name: str, value: object) -> bytes:
    """Serialize a typed value the way the named field expects."""
    if name in INT_FIELDS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise CodecError(f"{name} must be an int")
        return u64(value)
    if name in TEXT_FIELDS:
        if not isinstance(value, str):
            raise CodecError(f"{name} must be a str")
        return value.encode("utf-8")
    if not isinstance(value, (bytes, bytearray)):
        raise CodecError(f"{name} must be bytes")
    return bytes(value)


def field_value(name: str, raw: bytes) -> object:
    if name in INT_FIELDS:
        return read_u64(raw)
    if name in TEXT_FIELDS:
        return raw.decode("utf-8")
    return raw


def fields_for(kind: MessageKind, values: Mapping[str, object]) -> list[Field]:
    """Build the ordered field list from typed values; the tag is filled in."""
    names = kind.field_names[1:]
    missing = [n for n in names if n not in values]
    extra = [n for n in values if n not in names]
    if missing or extra:
        raise WrongFieldCount(f"{kind.value}: missing {missing}, unexpected {extra}")
    return [Field("tag", kind.tag.raw)] + [Field(n, field_bytes(n, values[n])) for n in names]


def auth_message(kind: MessageKind, **values: object) -> bytes:
    return encode_auth_message(kind, fields_for(kind, values))


def message_digest(message: bytes) -> bytes:
    return digest(message)


# --------------------------------------------------------------------------
# conformance vectors


@dataclass(frozen=True)
class Vector:
    kind: MessageKind
    fields: tuple[Field, ...]
    encoded_hex: str
    digest_hex: str

    def values(self) -> dict[str, object]:
        return {f.name: field_value(f.name, f.value) for f in self.fields[1:]}

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "fields": [{"name": f.name, "hex": f.value.hex()} for f in self.fields],
                "encoded_hex": self.encoded_hex,
                "digest_hex": self.digest_hex,
            },
            sort_keys=True,
        )


def make_vector(kind: MessageKind, values: Mapping[str, object]) -> Vector:
    fields = fields_for(kind, values)
    encoded = encode_auth_message(kind, fields)
    return Vector(kind, tuple(fields), encoded.hex(), message_digest(encoded).hex())


def parse_vector(line: str) -> Vector:
    obj = json.loads(line)
    fields = tuple(Field(f["name"], bytes.fromhex(f["hex"])) for f in obj["fields"])
    return Vector(MessageKind(obj["kind"]), fields, obj["encoded_hex"], obj["digest_hex"])


def load_vectors(path: str | Path) -> list[Vector]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [parse_vector(line) for line in lines if line.strip()]


def write_vectors(path: str | Path, vectors: Iterable[Vector]) -> None:
    Path(path).write_text("".join(v.to_json() + "\n" for v in vectors), encoding="utf-8")


def check_vector(vector: Vector) -> bool:
    encoded = encode_auth_message(vector.kind, vector.fields)
    return encoded.hex() == vector.encoded_hex and message_digest(encoded).hex() == vector.digest_hex


def default_vectors_path() -> Path:
    return Path(__file__).with_name("data") / "conformance_vectors.jsonl"
