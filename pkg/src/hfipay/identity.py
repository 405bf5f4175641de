"""Deterministic recipient identity: root, commitment, epoch handles.

Root recovery is a stand-in for a passphrase-gated discovery service: a
salted PBKDF2 over the normalized identifier.  Nothing here is ever written
into a public structure; ``repr`` of the secret-bearing types is redacted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from . import codec

CTX_BIND = b"hfipay:bind-ctx"
DOMAIN_ID = b"hfipay:id-v1"
DEFAULT_EPOCH_LEN = 7 * 24 * 3600
DEFAULT_ITERATIONS = 1 << 14


@dataclass(frozen=True)
class IdentityRoot:
    rev: bytes = field(repr=False)
    salt: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.rev) != 32 or len(self.salt) != 32:
            raise ValueError("identity root parts are 32 bytes each")


@dataclass(frozen=True)
class EpochBinding:
    epoch: int
    handle: bytes = field(repr=False)
    key_commitment: bytes


def recover_root(identifier: str, passphrase: str, iterations: int = DEFAULT_ITERATIONS) -> IdentityRoot:
    """Re-derive the same root on any device from identifier plus passphrase.

    A wrong passphrase does not fail; it silently yields a different identity.
    """
    salt = codec.ROOT.encoded() + codec.length_prefixed(identifier.encode("utf-8"))
    material = hashlib.pbkdf2_hmac("sha256", passphrase.encode("utf-8"), salt, iterations, dklen=64)
    return IdentityRoot(rev=material[:32], salt=material[32:])


def random_root(rng) -> IdentityRoot:
    """Fresh root from any source exposing ``randbytes`` (random.Random or a seeded stream)."""
    return IdentityRoot(rev=rng.randbytes(32), salt=rng.randbytes(32))


def derive_commitment(root: IdentityRoot, domain_id: bytes = DOMAIN_ID) -> bytes:
    return codec.hash_domain(codec.ID_COM, root.rev + root.salt + codec.length_prefixed(domain_id))


def epoch_of(time: int, epoch_len: int = DEFAULT_EPOCH_LEN) -> int:
    if epoch_len <= 0:
        raise ValueError("epoch_len must be positive")
    return time // epoch_len


def derive_handle(root: IdentityRoot, epoch: int) -> bytes:
    return codec.hash_domain(codec.DERIVE, root.rev + CTX_BIND + codec.u64(epoch))


def key_commitment(handle: bytes) -> bytes:
    return codec.hash_domain(codec.BIND_KEY, handle)


def derive_epoch_binding(root: IdentityRoot, epoch: int) -> EpochBinding:
    handle = derive_handle(root, epoch)
    return EpochBinding(epoch=epoch, handle=handle, key_commitment=key_commitment(handle))


def blind_binding(handle: bytes, intent_id: bytes) -> bytes:
    """rho for one intent: the bind-tagged hash of the epoch handle and the intent id."""
    return codec.hash_domain(codec.BIND, handle + intent_id)
