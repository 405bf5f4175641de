"""Relay / directory service.

Holds the private identifier directory and intent table, issues quotes,
registers intents on-chain, gates notifications, and relays claim and refund
transactions.  It never custodies funds: every value movement goes through a
ledger transaction that verifies on its own.

Misbehaviour used by the attack harness is switched on through
:class:`Malice` so every attack is a reproducible configuration.
"""

from __future__ import annotations

import enum
import secrets
import threading
import unicodedata
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional, Union

from . import codec
from .codec import MessageKind
from .identity import EpochBinding, blind_binding, key_commitment
from .ledger import SETTLED, IntentMeta, IntentStatus, Ledger, NotFound, Receipt
from .proofsys import (
    Attestation,
    ClaimPublicInputs,
    Proof,
    ProofBackend,
    QuotePublicInputs,
    Relation,
    RelationUnsatisfied,
    SigningKey,
    verify_attestation,
)

MUTATION_TARGETS = ("rho", "asset", "amount", "epoch", "expiry", "refund_dest", "alpha")
REGISTRATION_TARGETS = ("rho", "asset", "amount", "epoch", "expiry", "refund_dest", "refund_commitment")


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    VERIFIED = "verified"


class RelayError(Exception):
    pass


class UnknownIdentifier(RelayError):
    pass


class UnknownIntent(RelayError):
    pass


class RateLimited(RelayError):
    pass


class Unauthenticated(RelayError):
    pass


class InvalidAttestation(RelayError):
    pass


class AlreadyEnrolled(RelayError):
    pass


class NotFunded(RelayError):
    pass


class Censored(RelayError):
    pass


def normalize(identifier: str) -> str:
    """Trim, NFC-normalize, lowercase.  One possible Norm(); deployments may differ."""
    return unicodedata.normalize("NFC", identifier.strip()).lower()


@dataclass
class EpochRecord:
    epoch: int
    handle: bytes = field(repr=False)
    key_commitment: bytes
    attestation: Optional[Attestation]
    added_at: int
    retired_at: Optional[int] = None


@dataclass
class DirectoryEntry:
    normalized_id: str
    id_com: bytes
    epochs: list[EpochRecord]
    mode: Mode
    enrolled_at: int
    rotated_at: Optional[int] = None

    @property
    def current(self) -> EpochRecord:
        return self.epochs[-1]

    def epoch(self, e: int) -> Optional[EpochRecord]:
        for rec in self.epochs:
            if rec.epoch == e:
                return rec
        return None


@dataclass(frozen=True)
class QuoteRequest:
    identifier: str
    asset: str
    amount: int
    chain: str
    refund_dest: Optional[bytes]
    expiry: int


@dataclass(frozen=True)
class Quote:
    intent_id: bytes
    alpha: bytes
    rho: bytes
    asset: str
    amount: int
    chain: str
    epoch: int
    refund_dest: Optional[bytes]
    expiry: int
    quote_expiry: int
    key_commitment: Optional[bytes] = None
    binding_validity: Optional[int] = None
    attestation: Optional[Attestation] = None
    quote_proof: Optional[Proof] = None

    def to_json(self) -> dict:
        out = {
            "intent_id": self.intent_id.hex(),
            "alpha": self.alpha.hex(),
            "rho": self.rho.hex(),
            "asset": self.asset,
            "amount": self.amount,
            "chain": self.chain,
            "epoch": self.epoch,
            "refund_dest": self.refund_dest.hex() if self.refund_dest else None,
            "expiry": self.expiry,
            "quote_expiry": self.quote_expiry,
        }
        if self.key_commitment is not None:
            att = self.attestation
            out.update({
                "key_commitment": self.key_commitment.hex(),
                "binding_validity": self.binding_validity,
                "attestation": None if att is None else {
                    "normalized_id": att.normalized_id,
                    "key_commitment": att.key_commitment.hex(),
                    "epoch": att.epoch,
                    "valid_until": att.valid_until,
                    "issuer_sig": att.issuer_sig.hex(),
                },
                "quote_proof": None if self.quote_proof is None else self.quote_proof.to_bytes().hex(),
            })
        return out


@dataclass
class PrivateIntentRecord:
    identifier: str
    intent_id: bytes
    rho: bytes
    asset: str
    amount: int
    chain: str
    epoch: int
    refund_dest: Optional[bytes]
    expiry: int
    created_at: int
    status: Optional[IntentStatus] = None
    registered: bool = False
    notified: bool = False
    fee_paid: bool = False
    escrow_sig: Optional[bytes] = field(default=None, repr=False)


@dataclass(frozen=True)
class Notification:
    identifier: str
    intent_id: bytes
    chain: str
    epoch: int


@dataclass
class Malice:
    substitute_handle: Optional[bytes] = None   # accomplice handle used for rho
    forge_rho: bool = False                      # rho with no handle behind it
    mutate_quote: Optional[str] = None           # one of MUTATION_TARGETS
    mutate_registration: Optional[str] = None    # one of REGISTRATION_TARGETS
    censor: bool = False
    over_notify: bool = False


@dataclass
class RelayConfig:
    rate_limit: int = 10
    rate_window: int = 60
    quote_ttl: int = 15 * 60
    gc_ttl: int = 24 * 3600
    retention: int = 30 * 24 * 3600
    malice: Malice = field(default_factory=Malice)


def _mutate_bytes(raw: bytes) -> bytes:
    return bytes([raw[0] ^ 0x01]) + raw[1:]


class Relay:
    def __init__(
        self,
        ledgers: Union[Ledger, dict[str, Ledger]],
        prover: ProofBackend,
        issuer_key: Optional[SigningKey] = None,
        rng=None,
        config: Optional[RelayConfig] = None,
    ) -> None:
        if isinstance(ledgers, Ledger):
            ledgers = {ledgers.chain: ledgers}
        self.ledgers = ledgers
        self.clock = next(iter(ledgers.values())).clock
        self.prover = prover
        self.issuer_key = issuer_key
        self.rng = rng
        self.config = config or RelayConfig()
        self.directory: dict[str, DirectoryEntry] = {}
        self.intents: dict[bytes, PrivateIntentRecord] = {}
        self.outbox: list[Notification] = []
        self._tokens: dict[str, str] = {}
        self._quote_times: dict[str, deque] = defaultdict(deque)
        self._lock = threading.RLock()

    @property
    def now(self) -> int:
        return self.clock.now

    def _random(self, n: int) -> bytes:
        return secrets.token_bytes(n) if self.rng is None else self.rng.randbytes(n)

    def _ledger(self, chain: str) -> Ledger:
        try:
            return self.ledgers[chain]
        except KeyError:
            raise RelayError(f"relay does not serve chain {chain!r}") from None

    def _record(self, intent_id: bytes) -> PrivateIntentRecord:
        try:
            return self.intents[intent_id]
        except KeyError:
            raise UnknownIntent(intent_id.hex()) from None

    def _entry(self, identifier: str) -> DirectoryEntry:
        try:
            return self.directory[normalize(identifier)]
        except KeyError:
            raise UnknownIdentifier(normalize(identifier)) from None

    # senders ----------------------------------------------------------------

    def register_sender(self, name: str) -> str:
        token = self._random(16).hex()
        self._tokens[token] = name
        return token

    def _authenticate(self, token: Optional[str]) -> str:
        if token is None or token not in self._tokens:
            raise Unauthenticated("unknown sender token")
        return self._tokens[token]

    def _rate_check(self, sender: str) -> None:
        window = self._quote_times[sender]
        while window and window[0] <= self.now - self.config.rate_window:
            window.popleft()
        if len(window) >= self.config.rate_limit:
            raise RateLimited(f"{sender} exceeded {self.config.rate_limit} quotes per {self.config.rate_window}s")
        window.append(self.now)

    # directory --------------------------------------------------------------

    def _attestation_ok(self, normalized_id: str, binding: EpochBinding, att: Optional[Attestation]) -> bool:
        if att is None or self.issuer_key is None:
            return False
        expected = (normalized_id, binding.key_commitment, binding.epoch, att.valid_until)
        return verify_attestation(att, expected, self.now, self.issuer_key)

    def enroll(self, identifier: str, id_com: bytes, binding: EpochBinding, mode: Mode = Mode.BASELINE,
               attestation: Optional[Attestation] = None) -> DirectoryEntry:
        mode = Mode(mode)
        norm = normalize(identifier)
        with self._lock:
            if norm in self.directory:
                raise AlreadyEnrolled(norm)
            if mode is Mode.VERIFIED and not self._attestation_ok(norm, binding, attestation):
                raise InvalidAttestation(f"attestation for {norm!r} is missing, stale or over another key")
            entry = DirectoryEntry(
                normalized_id=norm, id_com=id_com, mode=mode, enrolled_at=self.now,
                epochs=[EpochRecord(binding.epoch, binding.handle, binding.key_commitment,
                                    attestation if mode is Mode.VERIFIED else None, self.now)],
            )
            self.directory[norm] = entry
            return entry

    def rotate_epoch(self, identifier: str, binding: EpochBinding,
                     attestation: Optional[Attestation] = None) -> DirectoryEntry:
        with self._lock:
            entry = self._entry(identifier)
            if entry.epoch(binding.epoch) is not None:
                raise ValueError(f"epoch {binding.epoch} already present")
            if entry.mode is Mode.VERIFIED and not self._attestation_ok(entry.normalized_id, binding, attestation):
                raise InvalidAttestation("rotation needs a valid attestation for the new key commitment")
            entry.current.retired_at = self.now
            entry.epochs.append(EpochRecord(binding.epoch, binding.handle, binding.key_commitment,
                                            attestation if entry.mode is Mode.VERIFIED else None, self.now))
            entry.rotated_at = self.now
            return entry

    def _intent_status(self, rec: PrivateIntentRecord) -> Optional[IntentStatus]:
        try:
            return self._ledger(rec.chain).status_of(rec.intent_id)
        except NotFound:
            return None

    def purge_settled(self, identifier: str, retention: Optional[int] = None) -> list[int]:
        """Delete retired epoch handles whose intents all settled at least ``retention`` ago.

        An epoch with any pending intent is kept.  Intent records of purged
        epochs are dropped as well.
        """
        retention = self.config.retention if retention is None else retention
        with self._lock:
            entry = self._entry(identifier)
            purged: list[int] = []
            for rec in entry.epochs[:-1]:
                tied = [r for r in self.intents.values()
                        if r.identifier == entry.normalized_id and r.epoch == rec.epoch]
                statuses = [self._intent_status(r) for r in tied]
                if any(s not in SETTLED for s in statuses):
                    continue
                last = max(
                    [self._ledger(r.chain).read_intent(r.intent_id).settled_at or 0 for r in tied]
                    + [rec.retired_at or 0]
                )
                if self.now - last < retention:
                    continue
                purged.append(rec.epoch)
                for r in tied:
                    del self.intents[r.intent_id]
            entry.epochs = [rec for rec in entry.epochs if rec.epoch not in purged]
            return purged

    # quotes -----------------------------------------------------------------

    def create_quote(self, token: Optional[str], request: QuoteRequest) -> Quote:
        sender = self._authenticate(token)
        with self._lock:
            self._rate_check(sender)
            entry = self._entry(request.identifier)
            ledger = self._ledger(request.chain)
            cur = entry.current
            malice = self.config.malice

            intent_id = self._random(32)
            alpha = ledger.derive_address(intent_id)
            handle = malice.substitute_handle or cur.handle
            rho = self._random(32) if malice.forge_rho else blind_binding(handle, intent_id)

            fields = {
                "rho": rho, "asset": request.asset, "amount": request.amount, "epoch": cur.epoch,
                "expiry": request.expiry, "refund_dest": request.refund_dest, "alpha": alpha,
            }
            key = attestation = proof = validity = None
            if entry.mode is Mode.VERIFIED:
                key, attestation = cur.key_commitment, cur.attestation
                validity = attestation.valid_until if attestation else None
                proof = self._quote_proof(handle, rho, key, intent_id)
            target = malice.mutate_quote
            if target is not None:
                fields[target] = self._mutated(target, fields[target])

            quote = Quote(
                intent_id=intent_id, alpha=fields["alpha"], rho=fields["rho"], asset=fields["asset"],
                amount=fields["amount"], chain=request.chain, epoch=fields["epoch"],
                refund_dest=fields["refund_dest"], expiry=fields["expiry"],
                quote_expiry=self.now + self.config.quote_ttl, key_commitment=key,
                binding_validity=validity, attestation=attestation, quote_proof=proof,
            )
            self.intents[intent_id] = PrivateIntentRecord(
                identifier=entry.normalized_id, intent_id=intent_id, rho=quote.rho, asset=quote.asset,
                amount=quote.amount, chain=quote.chain, epoch=quote.epoch, refund_dest=quote.refund_dest,
                expiry=quote.expiry, created_at=self.now,
            )
            return quote

    def _quote_proof(self, handle: bytes, rho: bytes, key: bytes, intent_id: bytes) -> Proof:
        try:
            return self.prover.prove_quote(handle, QuotePublicInputs(rho, key, intent_id))
        except RelationUnsatisfied:
            pass
        # A dishonest relay hands over the best proof it can make: one for its own key, or noise.
        try:
            return self.prover.prove_quote(handle, QuotePublicInputs(rho, key_commitment(handle), intent_id))
        except RelationUnsatisfied:
            return Proof(Relation.QUOTE, self._random(32), self._random(32))

    def _mutated(self, name: str, value):
        if name in ("rho", "alpha", "refund_dest", "refund_commitment"):
            return _mutate_bytes(value) if value else self._random(20)
        if name == "asset":
            return value + "-alt"
        return value + 1

    # registration, notification, gc ----------------------------------------

    def register_and_confirm(self, intent_id: bytes, refund_commitment: Optional[bytes] = None,
                             escrow_sig: Optional[bytes] = None) -> Receipt:
        with self._lock:
            rec = self._record(intent_id)
            fields = {
                "rho": rec.rho, "asset": rec.asset, "amount": rec.amount, "epoch": rec.epoch,
                "expiry": rec.expiry, "refund_dest": rec.refund_dest, "refund_commitment": refund_commitment,
            }
            target = self.config.malice.mutate_registration
            if target is not None:
                fields[target] = self._mutated(target, fields[target])
            receipt = self._ledger(rec.chain).register_intent(IntentMeta(intent_id=intent_id, **fields))
            rec.registered = True
            rec.status = IntentStatus.CREATED
            rec.escrow_sig = escrow_sig
            return receipt

    def pay_notification_fee(self, intent_id: bytes) -> None:
        self._record(intent_id).fee_paid = True

    def notify(self, intent_id: bytes) -> Notification:
        with self._lock:
            rec = self._record(intent_id)
            ledger = self._ledger(rec.chain)
            funded = rec.registered and ledger.is_confirmed(intent_id, IntentStatus.FUNDED)
            if not (funded or rec.fee_paid or self.config.malice.over_notify):
                raise NotFunded("recipient is notified only after confirmed funding or a paid fee")
            note = Notification(rec.identifier, intent_id, rec.chain, rec.epoch)
            rec.notified = True
            self.outbox.append(note)
            return note

    def notifications_for(self, identifier: str) -> list[Notification]:
        norm = normalize(identifier)
        return [n for n in self.outbox if n.identifier == norm]

    def gc_unfunded(self, now: Optional[int] = None) -> int:
        now = self.now if now is None else now
        with self._lock:
            stale = [
                r.intent_id for r in self.intents.values()
                if now - r.created_at > self.config.gc_ttl
                and self._intent_status(r) in (None, IntentStatus.CREATED)
            ]
            for intent_id in stale:
                del self.intents[intent_id]
            return len(stale)

    def sync(self, intent_id: bytes) -> Optional[IntentStatus]:
        """Mirror the on-chain status once it reaches the configured confirmation depth."""
        rec = self._record(intent_id)
        status = self._intent_status(rec)
        if status is not None and self._ledger(rec.chain).is_confirmed(intent_id, status):
            rec.status = status
        return rec.status

    # relaying ---------------------------------------------------------------

    def claim_message(self, intent_id: bytes, dest: bytes, nonce: int) -> bytes:
        rec = self._record(intent_id)
        return codec.auth_message(
            MessageKind.CLAIM, d_dep=self._ledger(rec.chain).d_dep, c=rec.chain, a=rec.asset, e=rec.epoch,
            intent_id=rec.intent_id, rho=rec.rho, v=rec.amount, beta=dest, t_exp=rec.expiry, n=nonce,
        )

    def cross_claim_message(self, intent_id: bytes, dest_chain: str, dest: bytes, nonce: int) -> bytes:
        rec = self._record(intent_id)
        return codec.auth_message(
            MessageKind.CROSS_CLAIM, d_dep=self._ledger(rec.chain).d_dep, c_s=rec.chain, a=rec.asset, e=rec.epoch,
            c_d=dest_chain, intent_id=rec.intent_id, rho=rec.rho, v=rec.amount, beta_cd=dest, t_exp=rec.expiry,
            n=nonce,
        )

    def refund_message(self, intent_id: bytes) -> bytes:
        rec = self._record(intent_id)
        return codec.auth_message(
            MessageKind.REFUND, d_dep=self._ledger(rec.chain).d_dep, c=rec.chain, a=rec.asset,
            intent_id=rec.intent_id, rho=rec.rho, v=rec.amount, gamma_a=rec.refund_dest or b"",
            t_exp=rec.expiry,
        )

    def submit_claim_for(self, intent_id: bytes, publics: ClaimPublicInputs, proof: Proof) -> Receipt:
        if self.config.malice.censor:
            raise Censored("relay dropped the claim")
        rec = self._record(intent_id)
        return self._ledger(rec.chain).claim(intent_id, publics, proof)

    def submit_refund_for(self, intent_id: bytes, sig: Optional[bytes] = None) -> Receipt:
        if self.config.malice.censor:
            raise Censored("relay dropped the refund")
        rec = self._record(intent_id)
        return self._ledger(rec.chain).refund(intent_id, sig if sig is not None else rec.escrow_sig)

    # compromise -------------------------------------------------------------

    def dump_compromise(self) -> dict:
        """Everything an attacker who breaches the relay database would read, secrets included."""
        return {
            "directory": {
                norm: {
                    "id_com": e.id_com.hex(),
                    "mode": e.mode.value,
                    "epochs": [
                        {"epoch": r.epoch, "handle": r.handle.hex(), "key_commitment": r.key_commitment.hex()}
                        for r in e.epochs
                    ],
                }
                for norm, e in self.directory.items()
            },
            "intents": [
                {
                    "identifier": r.identifier,
                    "intent_id": r.intent_id.hex(),
                    "rho": r.rho.hex(),
                    "asset": r.asset,
                    "amount": r.amount,
                    "chain": r.chain,
                    "epoch": r.epoch,
                    "expiry": r.expiry,
                    "created_at": r.created_at,
                }
                for r in self.intents.values()
            ],
        }
