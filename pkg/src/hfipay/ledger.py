"""Simulated single-chain ledger: balances, intent registry, claim and refund.

Time is a logical clock shared with the harness.  ``EXPIRED`` is never stored;
it is the derived state of a funded intent whose expiry has passed.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from . import codec
from .codec import MessageKind
from .proofsys import ClaimPublicInputs, Proof, ProofBackend, SigningKey, verify_refund


class IntentStatus(str, enum.Enum):
    CREATED = "CREATED"
    FUNDED = "FUNDED"
    CLAIMED = "CLAIMED"
    EXPIRED = "EXPIRED"
    REFUNDED = "REFUNDED"


ALLOWED_TRANSITIONS = frozenset({
    (IntentStatus.CREATED, IntentStatus.FUNDED),
    (IntentStatus.FUNDED, IntentStatus.CLAIMED),
    (IntentStatus.FUNDED, IntentStatus.EXPIRED),
    (IntentStatus.EXPIRED, IntentStatus.REFUNDED),
})
SETTLED = frozenset({IntentStatus.CLAIMED, IntentStatus.REFUNDED})


class LedgerError(Exception):
    pass


class DuplicateIntent(LedgerError):
    pass


class NotFound(LedgerError):
    pass


class AssetMismatch(LedgerError):
    pass


class InsufficientSenderBalance(LedgerError):
    pass


class AlreadySettled(LedgerError):
    pass


class TupleMismatch(LedgerError):
    pass


class ProofInvalid(LedgerError):
    pass


class NonceReused(LedgerError):
    pass


class Expired(LedgerError):
    pass


class WrongStatus(LedgerError):
    pass


class NotExpired(LedgerError):
    pass


class NoRefundPath(LedgerError):
    pass


class BadAuthorization(LedgerError):
    pass


class Clock:
    def __init__(self, now: int = 0) -> None:
        self.now = now

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("logical time only moves forward")
        self.now += seconds
        return self.now


def derive_address(chain: str, intent_id: bytes, d_dep: bytes) -> bytes:
    """Deterministic 20-byte deposit address, a stand-in for CREATE2 / PDA derivation."""
    payload = codec.length_prefixed(d_dep) + codec.length_prefixed(chain.encode("utf-8")) + intent_id
    return codec.hash_domain(codec.SIM_ADDR, payload)[:20]


@dataclass
class IntentMeta:
    intent_id: bytes
    rho: bytes
    asset: str
    amount: int
    epoch: int
    expiry: int
    refund_dest: Optional[bytes] = None
    refund_commitment: Optional[bytes] = None
    status: IntentStatus = IntentStatus.CREATED
    funded_balance: int = 0
    created_at: Optional[int] = None
    funded_at: Optional[int] = None
    settled_at: Optional[int] = None

    def committed_tuple(self) -> tuple:
        """The fields a sender must see on-chain before funding."""
        return (self.rho, self.asset, self.amount, self.epoch, self.expiry,
                self.refund_dest, self.refund_commitment)


@dataclass(frozen=True)
class ObserverRecord:
    chain: str
    intent_id: bytes
    alpha: bytes
    rho: bytes
    asset: str
    amount: int
    epoch: int
    timestamp: int
    event: str
    logs: tuple[tuple[str, str], ...] = ()

    def to_json(self) -> dict:
        return {
            "chain": self.chain,
            "intent_id": self.intent_id.hex(),
            "alpha": self.alpha.hex(),
            "rho": self.rho.hex(),
            "asset": self.asset,
            "amount": self.amount,
            "epoch": self.epoch,
            "timestamp": self.timestamp,
            "event": self.event,
            "logs": dict(self.logs),
        }


@dataclass(frozen=True)
class Receipt:
    tx: str
    intent_id: bytes
    status: IntentStatus
    block: int
    amount: int = 0
    to: Optional[bytes] = None


class NonceLedger:
    """(id_com, nonce) pairs accepted by a deployment; share it across that deployment's chains."""

    def __init__(self) -> None:
        self.used: set[tuple[bytes, int]] = set()

    def seen(self, id_com: bytes, nonce: int) -> bool:
        return (id_com, nonce) in self.used

    def consume(self, id_com: bytes, nonce: int) -> None:
        if (id_com, nonce) in self.used:
            raise NonceReused(f"nonce {nonce} already used for this identity commitment")
        self.used.add((id_com, nonce))


def _writer(method):
    @functools.wraps(method)
    def wrapped(self, *args, **kwargs):
        with self._lock:
            return method(self, *args, **kwargs)
    return wrapped


class Ledger:
    def __init__(
        self,
        chain: str,
        d_dep: bytes,
        verifier: ProofBackend,
        clock: Optional[Clock] = None,
        nonces: Optional[NonceLedger] = None,
        address_deriver: Callable[[str, bytes, bytes], bytes] = derive_address,
        confirmation_depth: int = 0,
    ) -> None:
        self.chain = chain
        self.d_dep = d_dep
        self.verifier = verifier
        self.clock = clock or Clock()
        self.nonces = nonces or NonceLedger()
        self.address_deriver = address_deriver
        self.confirmation_depth = confirmation_depth
        self.height = 0
        self.balances: dict[str, dict[bytes, int]] = defaultdict(lambda: defaultdict(int))
        self.minted: dict[str, int] = defaultdict(int)
        self.policies: dict[bytes, SigningKey] = {}
        self.fund_calls = 0
        self._intents: dict[bytes, IntentMeta] = {}
        self._alpha: dict[bytes, bytes] = {}
        self._blocks: dict[bytes, dict[IntentStatus, int]] = {}
        self._events: list[ObserverRecord] = []
        self._lock = threading.RLock()

    @property
    def now(self) -> int:
        return self.clock.now

    # accounts ---------------------------------------------------------------

    @_writer
    def mint(self, asset: str, address: bytes, amount: int) -> None:
        if amount < 0:
            raise ValueError("negative mint")
        self.balances[asset][address] += amount
        self.minted[asset] += amount

    @_writer
    def burn(self, asset: str, address: bytes, amount: int) -> None:
        if self.balances[asset][address] < amount:
            raise InsufficientSenderBalance(f"cannot burn {amount} {asset}")
        self.balances[asset][address] -= amount
        self.minted[asset] -= amount

    @_writer
    def transfer(self, asset: str, src: bytes, dst: bytes, amount: int) -> None:
        if amount <= 0:
            raise ValueError("transfer amount must be positive")
        if self.balances[asset][src] < amount:
            raise InsufficientSenderBalance(f"{src.hex()} holds less than {amount} {asset}")
        self.balances[asset][src] -= amount
        self.balances[asset][dst] += amount

    def balance(self, address: bytes, asset: str) -> int:
        return self.balances[asset].get(address, 0)

    def register_policy(self, key: SigningKey) -> bytes:
        """Publish the authorization policy that guards ``key.address`` (used for refunds)."""
        self.policies[key.address] = key
        return key.address

    def derive_address(self, intent_id: bytes) -> bytes:
        return self.address_deriver(self.chain, intent_id, self.d_dep)

    # blocks -----------------------------------------------------------------

    def set_confirmation_depth(self, depth: int) -> None:
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.confirmation_depth = depth

    @_writer
    def advance_blocks(self, n: int = 1) -> int:
        self.height += n
        return self.height

    def confirmations(self, intent_id: bytes, status: IntentStatus) -> Optional[int]:
        block = self._blocks.get(intent_id, {}).get(status)
        return None if block is None else self.height - block

    def is_confirmed(self, intent_id: bytes, status: IntentStatus) -> bool:
        depth = self.confirmations(intent_id, status)
        return depth is not None and depth >= self.confirmation_depth

    # intents ----------------------------------------------------------------

    def _get(self, intent_id: bytes) -> IntentMeta:
        try:
            return self._intents[intent_id]
        except KeyError:
            raise NotFound(intent_id.hex()) from None

    def _derived_status(self, meta: IntentMeta) -> IntentStatus:
        if meta.status is IntentStatus.FUNDED and self.now > meta.expiry:
            return IntentStatus.EXPIRED
        return meta.status

    def status_of(self, intent_id: bytes) -> IntentStatus:
        return self._derived_status(self._get(intent_id))

    def stored_status(self, intent_id: bytes) -> IntentStatus:
        """The recorded status, without the derived EXPIRED phase."""
        return self._get(intent_id).status

    def read_intent(self, intent_id: bytes) -> IntentMeta:
        meta = self._get(intent_id)
        return dataclasses.replace(meta, status=self._derived_status(meta))

    def intent_ids(self) -> list[bytes]:
        return list(self._intents)

    def _emit(self, meta: IntentMeta, event: str, logs: Iterable[tuple[str, str]] = ()) -> None:
        self._events.append(ObserverRecord(
            chain=self.chain, intent_id=meta.intent_id, alpha=self._alpha[meta.intent_id], rho=meta.rho,
            asset=meta.asset, amount=meta.amount, epoch=meta.epoch, timestamp=self.now,
            event=event, logs=tuple(logs),
        ))

    def _mark(self, meta: IntentMeta, status: IntentStatus) -> None:
        meta.status = status
        self._blocks.setdefault(meta.intent_id, {})[status] = self.height

    @_writer
    def register_intent(self, meta: IntentMeta) -> Receipt:
        if meta.intent_id in self._intents:
            raise DuplicateIntent(meta.intent_id.hex())
        if len(meta.intent_id) != 32 or len(meta.rho) != 32:
            raise ValueError("intent id and rho are 32 bytes")
        if meta.amount <= 0:
            raise ValueError("quoted amount must be positive")
        stored = IntentMeta(
            intent_id=meta.intent_id, rho=meta.rho, asset=meta.asset, amount=meta.amount, epoch=meta.epoch,
            expiry=meta.expiry, refund_dest=meta.refund_dest, refund_commitment=meta.refund_commitment,
            created_at=self.now,
        )
        self._intents[meta.intent_id] = stored
        self._alpha[meta.intent_id] = self.derive_address(meta.intent_id)
        self._mark(stored, IntentStatus.CREATED)
        self._emit(stored, "registered")
        return Receipt("register", meta.intent_id, IntentStatus.CREATED, self.height)

    @_writer
    def fund(self, intent_id: bytes, from_account: bytes, asset: str, amount: int) -> Receipt:
        self.fund_calls += 1
        meta = self._get(intent_id)
        if meta.status is not IntentStatus.CREATED:
            raise AlreadySettled(f"intent is {meta.status.value}")
        if asset != meta.asset:
            raise AssetMismatch(f"intent quotes {meta.asset!r}, got {asset!r}")
        if amount <= 0:
            raise ValueError("funding amount must be positive")
        if self.balance(from_account, asset) < amount:
            raise InsufficientSenderBalance(f"sender holds less than {amount} {asset}")
        self.balances[asset][from_account] -= amount
        meta.funded_balance += amount
        if meta.funded_balance >= meta.amount:
            meta.funded_at = self.now
            self._mark(meta, IntentStatus.FUNDED)
            self._emit(meta, "funded")
        return Receipt("fund", intent_id, meta.status, self.height, amount)

    def claim_publics(self, meta: IntentMeta, id_com: bytes, dest: bytes, nonce: int) -> ClaimPublicInputs:
        """Public inputs as this ledger reconstructs them from its own stored state."""
        return ClaimPublicInputs(
            id_com=id_com, rho=meta.rho, asset=meta.asset, epoch=meta.epoch, intent_id=meta.intent_id,
            amount=meta.amount, dest=dest, expiry=meta.expiry, nonce=nonce, dep_tag=self.d_dep,
            chain=self.chain,
        )

    def claim_message(self, meta: IntentMeta, dest: bytes, nonce: int) -> bytes:
        return self.claim_publics(meta, b"", dest, nonce).message()

    def refund_message(self, meta: IntentMeta) -> bytes:
        return codec.auth_message(
            MessageKind.REFUND, d_dep=self.d_dep, c=self.chain, a=meta.asset, intent_id=meta.intent_id,
            rho=meta.rho, v=meta.amount, gamma_a=meta.refund_dest or b"", t_exp=meta.expiry,
        )

    @_writer
    def claim(self, intent_id: bytes, publics: ClaimPublicInputs, proof: Proof) -> Receipt:
        meta = self._get(intent_id)
        if meta.status is not IntentStatus.FUNDED:
            raise WrongStatus(f"intent is {meta.status.value}")
        if self.now > meta.expiry:
            raise Expired(f"claim at {self.now} after expiry {meta.expiry}")
        if (publics.intent_id, publics.rho, publics.asset, publics.epoch, publics.amount, publics.expiry) != (
            meta.intent_id, meta.rho, meta.asset, meta.epoch, meta.amount, meta.expiry
        ):
            raise TupleMismatch("claim publics disagree with the stored intent tuple")
        expected = self.claim_publics(meta, publics.id_com, publics.dest, publics.nonce)
        if publics != expected or not self.verifier.verify_claim(proof, expected):
            raise ProofInvalid("claim proof does not verify against the stored tuple")
        self.nonces.consume(publics.id_com, publics.nonce)
        meta.funded_balance -= meta.amount
        self.balances[meta.asset][publics.dest] += meta.amount
        meta.settled_at = self.now
        self._mark(meta, IntentStatus.CLAIMED)
        self._emit(meta, "claimed", (
            ("dest", publics.dest.hex()), ("id_com", publics.id_com.hex()), ("nonce", str(publics.nonce)),
        ))
        return Receipt("claim", intent_id, IntentStatus.CLAIMED, self.height, meta.amount, publics.dest)

    @_writer
    def refund(self, intent_id: bytes, revealed_sig: Optional[bytes]) -> Receipt:
        meta = self._get(intent_id)
        if meta.status is not IntentStatus.FUNDED:
            raise WrongStatus(f"intent is {meta.status.value}")
        if self.now <= meta.expiry:
            raise NotExpired(f"refund at {self.now}, expiry {meta.expiry}")
        if meta.refund_commitment is None or meta.refund_dest is None:
            raise NoRefundPath("no refund commitment stored; intent stays EXPIRED")
        if revealed_sig is None or not verify_refund(
            revealed_sig, self.policies.get(meta.refund_dest), self.refund_message(meta), meta.refund_commitment
        ):
            raise BadAuthorization("refund authorization does not verify")
        meta.funded_balance -= meta.amount
        self.balances[meta.asset][meta.refund_dest] += meta.amount
        meta.settled_at = self.now
        self._mark(meta, IntentStatus.REFUNDED)
        self._emit(meta, "refunded", (("refund_dest", meta.refund_dest.hex()),))
        return Receipt("refund", intent_id, IntentStatus.REFUNDED, self.height, meta.amount, meta.refund_dest)

    # public feed ------------------------------------------------------------

    def observer_view(
        self,
        start: Optional[int] = None,
        end: Optional[int] = None,
        status: Optional[IntentStatus] = None,
        pre_claim: bool = False,
    ) -> list[ObserverRecord]:
        """Public per-event tuples.

        ``pre_claim`` keeps only funded-but-unclaimed intents and drops every
        claim-time disclosure.
        """
        out = []
        for rec in self._events:
            if start is not None and rec.timestamp < start:
                continue
            if end is not None and rec.timestamp > end:
                continue
            current = self.status_of(rec.intent_id)
            if status is not None and current is not status:
                continue
            if pre_claim and (rec.event not in ("registered", "funded") or current is not IntentStatus.FUNDED):
                continue
            out.append(rec)
        return out

    def export_events(self, path: Union[str, Path]) -> None:
        lines = [json.dumps(r.to_json(), sort_keys=True) for r in self._events]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    # invariants -------------------------------------------------------------

    def supply_report(self) -> dict[str, tuple[int, int]]:
        """Per asset: (minted, held in accounts + intent escrow)."""
        held: dict[str, int] = defaultdict(int)
        for asset, accounts in self.balances.items():
            held[asset] += sum(accounts.values())
        for meta in self._intents.values():
            held[meta.asset] += meta.funded_balance
        assets = set(held) | set(self.minted)
        return {a: (self.minted.get(a, 0), held.get(a, 0)) for a in assets}

    def conserved(self) -> bool:
        return all(m == h for m, h in self.supply_report().values())


# --------------------------------------------------------------------------
# mempool


@dataclass(frozen=True)
class ClaimTx:
    intent_id: bytes
    publics: ClaimPublicInputs
    proof: Proof
    submitter: str = "relay"


@dataclass(frozen=True)
class RefundTx:
    intent_id: bytes
    sig: Optional[bytes]
    submitter: str = "relay"


Tx = Union[ClaimTx, RefundTx]


@dataclass
class Mempool:
    """Pending transactions, executed in order by ``mine``; adversaries may copy and jump the queue."""

    ledger: Ledger
    pending: list[Tx] = field(default_factory=list)

    def submit(self, tx: Tx) -> None:
        self.pending.append(tx)

    def adversary_copy(self, tx: Tx, mutate: Optional[Callable[[Tx], Tx]] = None,
                       submitter: str = "adversary") -> Tx:
        copy = dataclasses.replace(tx, submitter=submitter)
        if mutate is not None:
            copy = mutate(copy)
        self.pending.insert(0, copy)
        return copy

    def mine(self) -> list[tuple[Tx, Union[Receipt, LedgerError]]]:
        results: list[tuple[Tx, Union[Receipt, LedgerError]]] = []
        batch, self.pending = self.pending, []
        for tx in batch:
            try:
                if isinstance(tx, ClaimTx):
                    results.append((tx, self.ledger.claim(tx.intent_id, tx.publics, tx.proof)))
                else:
                    results.append((tx, self.ledger.refund(tx.intent_id, tx.sig)))
            except LedgerError as exc:
                results.append((tx, exc))
        self.ledger.advance_blocks(1)
        return results
