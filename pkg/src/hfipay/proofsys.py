"""Quote and claim relations, a mock proof backend, attestations and refund authorizations.

The backend checks each relation in the clear and then emits a keyed MAC over
``relation-id || canonical publics``.  Only the holder of the backend key can
produce a verifying proof, and the proof carries no function of the witness,
which is all protocol-level tests need from a succinct argument.  A real
SNARK can replace :class:`MockProofBackend` behind :class:`ProofBackend`.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from . import codec
from .codec import MessageKind
from .identity import DOMAIN_ID, IdentityRoot, blind_binding, derive_commitment, derive_handle, key_commitment

ATTESTATION_FRESHNESS = 600


class Relation(enum.IntEnum):
    QUOTE = 1
    CLAIM = 2
    CROSS_CLAIM = 3


class RelationUnsatisfied(Exception):
    def __init__(self, relation: Relation, clause: str, detail: str = "") -> None:
        self.relation = relation
        self.clause = clause
        super().__init__(f"{relation.name} clause {clause} unsatisfied{': ' + detail if detail else ''}")


class NoControlEvidence(Exception):
    pass


class StaleEvidence(Exception):
    pass


# --------------------------------------------------------------------------
# keyed authenticators


def _mac(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()


class SigningKey:
    """Mock signature credential: an HMAC key with a derived 20-byte address.

    Verification needs the key, so whoever verifies (the ledger's policy
    registry, a sender checking an issuer) is handed the same object.
    """

    def __init__(self, secret: bytes) -> None:
        if len(secret) < 16:
            raise ValueError("signing secret too short")
        self._secret = secret
        self.address = hashlib.sha256(b"hfipay-sim-account" + hashlib.sha256(secret).digest()).digest()[:20]

    @classmethod
    def generate(cls, rng) -> "SigningKey":
        return cls(rng.randbytes(32))

    def sign(self, message: bytes) -> bytes:
        return _mac(self._secret, message)

    def verify(self, message: bytes, sig: bytes) -> bool:
        return hmac.compare_digest(self.sign(message), sig)

    def __repr__(self) -> str:
        return f"SigningKey(address={self.address.hex()})"


# --------------------------------------------------------------------------
# public inputs and proofs


@dataclass(frozen=True)
class QuotePublicInputs:
    rho: bytes
    key_commitment: bytes
    intent_id: bytes

    def canonical(self) -> bytes:
        return b"".join(codec.length_prefixed(x) for x in (self.rho, self.key_commitment, self.intent_id))


@dataclass(frozen=True)
class ClaimPublicInputs:
    """Public tuple of a claim.  For a cross claim ``chain`` is the source
    chain and ``dest_chain`` is set."""

    id_com: bytes
    rho: bytes
    asset: str
    epoch: int
    intent_id: bytes
    amount: int
    dest: bytes
    expiry: int
    nonce: int
    dep_tag: bytes
    chain: str
    dest_chain: Optional[str] = None

    @property
    def kind(self) -> MessageKind:
        return MessageKind.CLAIM if self.dest_chain is None else MessageKind.CROSS_CLAIM

    @property
    def relation(self) -> Relation:
        return Relation.CLAIM if self.dest_chain is None else Relation.CROSS_CLAIM

    def message(self) -> bytes:
        if self.dest_chain is None:
            return codec.auth_message(
                MessageKind.CLAIM, d_dep=self.dep_tag, c=self.chain, a=self.asset, e=self.epoch,
                intent_id=self.intent_id, rho=self.rho, v=self.amount, beta=self.dest,
                t_exp=self.expiry, n=self.nonce,
            )
        return codec.auth_message(
            MessageKind.CROSS_CLAIM, d_dep=self.dep_tag, c_s=self.chain, a=self.asset, e=self.epoch,
            c_d=self.dest_chain, intent_id=self.intent_id, rho=self.rho, v=self.amount,
            beta_cd=self.dest, t_exp=self.expiry, n=self.nonce,
        )

    def canonical(self) -> bytes:
        return codec.length_prefixed(self.id_com) + self.message()

    def replace(self, **changes) -> "ClaimPublicInputs":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Proof:
    relation: Relation
    publics_hash: bytes
    authenticator: bytes

    def to_bytes(self) -> bytes:
        return bytes([self.relation]) + self.publics_hash + self.authenticator

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Proof":
        if len(raw) != 65:
            raise ValueError("serialized proof is 65 bytes")
        return cls(Relation(raw[0]), raw[1:33], raw[33:])


@dataclass(frozen=True)
class ClaimWitness:
    root: IdentityRoot = field(repr=False)
    handle: bytes = field(repr=False)
    domain_id: bytes = DOMAIN_ID
    # digest the identity authorizes; None means "whatever the publics encode"
    authorized_digest: Optional[bytes] = None


@dataclass(frozen=True)
class WitnessRecord:
    relation: Relation
    intent_id: bytes
    rho: bytes
    epoch: Optional[int]
    handle_hash: bytes


class ProofBackend(Protocol):
    def prove_quote(self, handle: bytes, publics: QuotePublicInputs) -> Proof: ...
    def verify_quote(self, proof: Proof, publics: QuotePublicInputs) -> bool: ...
    def prove_claim(self, witness: ClaimWitness, publics: ClaimPublicInputs) -> Proof: ...
    def verify_claim(self, proof: Proof, publics: ClaimPublicInputs) -> bool: ...


def _publics_hash(relation: Relation, canonical: bytes) -> bytes:
    return codec.hash_domain(codec.PUBLICS, bytes([relation]) + canonical)


class MockProofBackend:
    def __init__(self, key: bytes, record_witnesses: bool = False) -> None:
        self._key = key
        self.record_witnesses = record_witnesses
        self.witness_log: list[WitnessRecord] = []

    def _emit(self, relation: Relation, canonical: bytes) -> Proof:
        ph = _publics_hash(relation, canonical)
        return Proof(relation, ph, _mac(self._key, bytes([relation]) + ph))

    def _check(self, proof: Proof, relation: Relation, canonical: bytes) -> bool:
        if proof.relation != relation:
            return False
        ph = _publics_hash(relation, canonical)
        if not hmac.compare_digest(ph, proof.publics_hash):
            return False
        return hmac.compare_digest(_mac(self._key, bytes([relation]) + ph), proof.authenticator)

    def _record(self, relation, intent_id, rho, epoch, handle) -> None:
        if self.record_witnesses:
            self.witness_log.append(
                WitnessRecord(relation, intent_id, rho, epoch, hashlib.sha256(handle).digest())
            )

    def prove_quote(self, handle: bytes, publics: QuotePublicInputs) -> Proof:
        if key_commitment(handle) != publics.key_commitment:
            raise RelationUnsatisfied(Relation.QUOTE, "1", "K does not open to the handle")
        if blind_binding(handle, publics.intent_id) != publics.rho:
            raise RelationUnsatisfied(Relation.QUOTE, "2", "rho does not open to the handle")
        self._record(Relation.QUOTE, publics.intent_id, publics.rho, None, handle)
        return self._emit(Relation.QUOTE, publics.canonical())

    def verify_quote(self, proof: Proof, publics: QuotePublicInputs) -> bool:
        return self._check(proof, Relation.QUOTE, publics.canonical())

    def prove_claim(self, witness: ClaimWitness, publics: ClaimPublicInputs) -> Proof:
        relation = publics.relation
        if derive_commitment(witness.root, witness.domain_id) != publics.id_com:
            raise RelationUnsatisfied(relation, "a", "id_com does not open to the root")
        if derive_handle(witness.root, publics.epoch) != witness.handle:
            raise RelationUnsatisfied(relation, "b", "handle is not the root's handle for this epoch")
        if blind_binding(witness.handle, publics.intent_id) != publics.rho:
            raise RelationUnsatisfied(relation, "c", "rho is not bound to the handle")
        message = publics.message()
        if witness.authorized_digest is not None and witness.authorized_digest != codec.message_digest(message):
            raise RelationUnsatisfied(relation, "d", "authorized message differs from the publics")
        self._record(relation, publics.intent_id, publics.rho, publics.epoch, witness.handle)
        return self._emit(relation, publics.canonical())

    def verify_claim(self, proof: Proof, publics: ClaimPublicInputs) -> bool:
        return self._check(proof, publics.relation, publics.canonical())


# --------------------------------------------------------------------------
# binding attestations


def attestation_message(normalized_id: str, key_commitment: bytes, epoch: int, valid_until: int) -> bytes:
    return codec.BIND_ATTEST.encoded() + b"".join(
        codec.length_prefixed(x)
        for x in (normalized_id.encode("utf-8"), key_commitment, codec.u64(epoch), codec.u64(valid_until))
    )


@dataclass(frozen=True)
class Attestation:
    normalized_id: str
    key_commitment: bytes
    epoch: int
    valid_until: int
    issuer_sig: bytes

    def message(self) -> bytes:
        return attestation_message(self.normalized_id, self.key_commitment, self.epoch, self.valid_until)


@dataclass(frozen=True)
class ControlEvidence:
    normalized_id: str
    challenge_id: bytes
    code: str


@dataclass
class _Challenge:
    normalized_id: str
    code: str
    sent_at: int


class BindingIssuer:
    """Attests identifier -> binding-key commitment after its own OTP loop.

    ``deliver(normalized_id, challenge_id, code)`` is the issuer's own channel
    to the identifier (its email sender); the relay is never asked.
    """

    def __init__(self, key: SigningKey, rng, deliver: Callable[[str, bytes, str], None],
                 freshness: int = ATTESTATION_FRESHNESS) -> None:
        self.key = key
        self._rng = rng
        self._deliver = deliver
        self.freshness = freshness
        self._challenges: dict[bytes, _Challenge] = {}

    def start_challenge(self, normalized_id: str, now: int) -> bytes:
        challenge_id = self._rng.randbytes(16)
        code = f"{self._rng.randrange(10**6):06d}"
        self._challenges[challenge_id] = _Challenge(normalized_id, code, now)
        self._deliver(normalized_id, challenge_id, code)
        return challenge_id

    def issue_attestation(self, normalized_id: str, key_commitment: bytes, epoch: int, valid_until: int,
                          evidence: Optional[ControlEvidence], now: int) -> Attestation:
        if evidence is None:
            raise NoControlEvidence(f"no proof of control for {normalized_id!r}")
        challenge = self._challenges.get(evidence.challenge_id)
        if (
            challenge is None
            or challenge.normalized_id != normalized_id
            or evidence.normalized_id != normalized_id
            or not hmac.compare_digest(challenge.code, evidence.code)
        ):
            raise NoControlEvidence(f"evidence does not answer an issuer challenge for {normalized_id!r}")
        del self._challenges[evidence.challenge_id]
        if now - challenge.sent_at > self.freshness:
            raise StaleEvidence(f"challenge answered {now - challenge.sent_at}s after it was sent")
        sig = self.key.sign(attestation_message(normalized_id, key_commitment, epoch, valid_until))
        return Attestation(normalized_id, key_commitment, epoch, valid_until, sig)


def verify_attestation(att: Attestation, expected: tuple[str, bytes, int, int], now: int,
                       issuer_key: SigningKey) -> bool:
    normalized_id, key_commitment, epoch, valid_until = expected
    if (att.normalized_id, att.key_commitment, att.epoch, att.valid_until) != (
        normalized_id, key_commitment, epoch, valid_until
    ):
        return False
    if now > att.valid_until:
        return False
    return issuer_key.verify(att.message(), att.issuer_sig)


# --------------------------------------------------------------------------
# refund authorization


@dataclass(frozen=True)
class RefundAuthorization:
    message: bytes
    sig: bytes
    commitment: bytes


def sign_refund(sender_key: SigningKey, refund_message: bytes) -> RefundAuthorization:
    sig = sender_key.sign(refund_message)
    return RefundAuthorization(refund_message, sig, codec.digest(sig))


def verify_refund(sig: bytes, policy_key: Optional[SigningKey], rebuilt_message: bytes,
                  stored_commitment: Optional[bytes]) -> bool:
    if policy_key is None or stored_commitment is None:
        return False
    if not hmac.compare_digest(codec.digest(sig), stored_commitment):
        return False
    return policy_key.verify(rebuilt_message, sig)
