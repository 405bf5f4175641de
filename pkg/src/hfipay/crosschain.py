"""Multi-VM settlement: unified addresses, bridge deposits, wrap/lock, cross claims, unwrap.

Wrapped tokens live on a dedicated token ledger inside the runtime.  Native
assets sit in a bridge vault on their source ledger.  Two invariants are
tracked per wrapped asset:

* supply:  minted - burned == locked in intents + circulating wrapped balance
* backing: vault holdings of the native asset == minted - burned

A faulty bridge can mint without a deposit; supply still balances but backing
does not, and :meth:`NvmRuntime.wrapped_report` flags it.
"""

from __future__ import annotations

import enum
import hashlib
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional

from . import codec
from .codec import MessageKind
from .ledger import (
    Clock,
    Expired,
    InsufficientSenderBalance,
    Ledger,
    LedgerError,
    NonceLedger,
    NotExpired,
    NotFound,
    ProofInvalid,
    TupleMismatch,
    WrongStatus,
    BadAuthorization,
    NoRefundPath,
)
from .proofsys import ClaimPublicInputs, Proof, ProofBackend, SigningKey, verify_refund


class VM(str, enum.Enum):
    EVM = "evm"
    SVM = "svm"
    BVM = "bvm"
    NATIVE = "native"


@dataclass(frozen=True)
class VmAddress:
    vm: VM
    raw: bytes


def derive_vm_address(vm: VM, id_com: bytes) -> VmAddress:
    vm = VM(vm)
    if vm is VM.NATIVE:
        return VmAddress(vm, bytes(id_com))
    full = hashlib.sha256(f"{vm.value}:".encode("ascii") + id_com).digest()
    return VmAddress(vm, full[12:32] if vm is VM.EVM else full)


DEFAULT_CHAIN_VMS = {"btc": VM.BVM, "eth": VM.EVM, "sol": VM.SVM}
BRIDGE_VAULT = hashlib.sha256(b"hfipay-nvm-bridge-vault").digest()[:20]


class Honesty(str, enum.Enum):
    HONEST = "honest"
    FAULTY = "faulty"


class BridgeRejected(LedgerError):
    pass


class BadAttestation(LedgerError):
    pass


class WrongSourceChain(LedgerError):
    pass


class LockStatus(str, enum.Enum):
    LOCKED = "LOCKED"
    CLAIMED = "CLAIMED"
    RELEASED = "RELEASED"
    REFUNDED = "REFUNDED"


class ReleaseForm(str, enum.Enum):
    NATIVE = "native"
    WRAPPED = "wrapped"


@dataclass(frozen=True)
class DepositAttestation:
    deposit_id: bytes
    source_chain: str
    asset: str
    amount: int
    sig: bytes

    def message(self) -> bytes:
        return b"".join(codec.length_prefixed(x) for x in (
            b"hfipay-nvm-deposit", self.deposit_id, self.source_chain.encode(), self.asset.encode(),
            codec.u64(self.amount),
        ))


@dataclass(frozen=True)
class CrossIntent:
    """The tuple a wrapped lock is associated with (from an accepted quote)."""

    intent_id: bytes
    rho: bytes
    source_chain: str
    asset: str
    epoch: int
    amount: int
    expiry: int
    refund_dest: Optional[bytes] = None
    refund_commitment: Optional[bytes] = None


@dataclass
class WrappedLock:
    intent: CrossIntent
    wrapped_asset: str
    alpha: bytes
    status: LockStatus = LockStatus.LOCKED
    dest_chain: Optional[str] = None
    dest: Optional[bytes] = None
    form: Optional[ReleaseForm] = None

    @property
    def amount(self) -> int:
        return self.intent.amount


@dataclass(frozen=True)
class CrossReceipt:
    tx: str
    intent_id: bytes
    status: LockStatus
    amount: int
    chain: Optional[str] = None
    asset: Optional[str] = None
    to: Optional[bytes] = None


def wrapped_name(asset: str) -> str:
    return "w" + asset


class NvmRuntime:
    def __init__(
        self,
        d_dep: bytes,
        verifier: ProofBackend,
        source_ledgers: Mapping[str, Ledger],
        bridge_key: SigningKey,
        clock: Optional[Clock] = None,
        nonces: Optional[NonceLedger] = None,
        chain_vms: Optional[Mapping[str, VM]] = None,
        rng=None,
    ) -> None:
        self.d_dep = d_dep
        self.verifier = verifier
        self.source_ledgers = dict(source_ledgers)
        self.bridge_key = bridge_key
        self.clock = clock or next(iter(self.source_ledgers.values())).clock
        self.nonces = nonces or NonceLedger()
        self.chain_vms = dict(chain_vms or DEFAULT_CHAIN_VMS)
        self.tokens = Ledger("nvm", d_dep, verifier, self.clock, self.nonces)
        self.locks: dict[bytes, WrappedLock] = {}
        self.minted: dict[str, int] = defaultdict(int)
        self.burned: dict[str, int] = defaultdict(int)
        self.circulating: dict[str, int] = defaultdict(int)
        self.unbacked_mints: list[bytes] = []
        self._deposit_seq = 0
        self._used_deposits: set[bytes] = set()
        self._rng = rng

    @property
    def now(self) -> int:
        return self.clock.now

    def vm_of(self, chain: str) -> VM:
        return self.chain_vms[chain]

    def _source(self, chain: str) -> Ledger:
        try:
            return self.source_ledgers[chain]
        except KeyError:
            raise WrongSourceChain(f"no ledger for chain {chain!r}") from None

    def _lock(self, intent_id: bytes) -> WrappedLock:
        try:
            return self.locks[intent_id]
        except KeyError:
            raise NotFound(intent_id.hex()) from None

    # bridge -----------------------------------------------------------------

    def bridge_deposit(self, source_chain: str, asset: str, amount: int, honesty: Honesty = Honesty.HONEST,
                       from_account: Optional[bytes] = None) -> DepositAttestation:
        """Attest a deposit of ``amount`` ``asset`` on ``source_chain`` into the bridge vault.

        An honest bridge attests only after the source debit succeeded.  A
        faulty one attests regardless; that is the trust assumption the
        runtime cannot remove.
        """
        ledger = self._source(source_chain)
        debited = False
        if from_account is not None:
            try:
                ledger.transfer(asset, from_account, BRIDGE_VAULT, amount)
                debited = True
            except InsufficientSenderBalance:
                debited = False
        if not debited and Honesty(honesty) is Honesty.HONEST:
            raise BridgeRejected("no source-chain debit backs this deposit")
        self._deposit_seq += 1
        deposit_id = hashlib.sha256(
            source_chain.encode() + asset.encode() + self._deposit_seq.to_bytes(8, "big")
        ).digest()
        if not debited:
            self.unbacked_mints.append(deposit_id)
        unsigned = DepositAttestation(deposit_id, source_chain, asset, amount, b"")
        return DepositAttestation(deposit_id, source_chain, asset, amount, self.bridge_key.sign(unsigned.message()))

    def wrap_and_lock(self, attestation: DepositAttestation, intent: CrossIntent) -> WrappedLock:
        if not self.bridge_key.verify(attestation.message(), attestation.sig):
            raise BadAttestation("deposit attestation signature invalid")
        if attestation.deposit_id in self._used_deposits:
            raise BadAttestation("deposit attestation already consumed")
        if (attestation.source_chain, attestation.asset, attestation.amount) != (
            intent.source_chain, intent.asset, intent.amount
        ):
            raise BadAttestation("attested deposit does not match the intent tuple")
        if intent.intent_id in self.locks:
            raise BadAttestation("intent already has a lock")
        self._used_deposits.add(attestation.deposit_id)
        w = wrapped_name(intent.asset)
        alpha = self.tokens.derive_address(intent.intent_id)
        self.tokens.mint(w, alpha, intent.amount)
        self.minted[w] += intent.amount
        lock = WrappedLock(intent, w, alpha)
        self.locks[intent.intent_id] = lock
        return lock

    # claim and release ------------------------------------------------------

    def expected_publics(self, lock: WrappedLock, id_com: bytes, dest_chain: str, dest: bytes,
                         nonce: int) -> ClaimPublicInputs:
        it = lock.intent
        return ClaimPublicInputs(
            id_com=id_com, rho=it.rho, asset=it.asset, epoch=it.epoch, intent_id=it.intent_id, amount=it.amount,
            dest=dest, expiry=it.expiry, nonce=nonce, dep_tag=self.d_dep, chain=it.source_chain,
            dest_chain=dest_chain,
        )

    def cross_claim(self, intent_id: bytes, publics: ClaimPublicInputs, proof: Proof) -> CrossReceipt:
        lock = self._lock(intent_id)
        if lock.status is not LockStatus.LOCKED:
            raise WrongStatus(f"lock is {lock.status.value}")
        if self.now > lock.intent.expiry:
            raise Expired("wrapped intent expired")
        if publics.dest_chain is None:
            raise ProofInvalid("same-chain claim submitted to the cross-chain runtime")
        if publics.chain != lock.intent.source_chain:
            raise WrongSourceChain(f"claim names source {publics.chain!r}, lock is on {lock.intent.source_chain!r}")
        if publics.dest_chain not in self.chain_vms:
            raise ProofInvalid(f"unknown destination chain {publics.dest_chain!r}")
        it = lock.intent
        if (publics.intent_id, publics.rho, publics.asset, publics.epoch, publics.amount, publics.expiry) != (
            it.intent_id, it.rho, it.asset, it.epoch, it.amount, it.expiry
        ):
            raise TupleMismatch("cross claim disagrees with the stored (rho, c_s, a, e, v)")
        expected = self.expected_publics(lock, publics.id_com, publics.dest_chain, publics.dest, publics.nonce)
        if publics != expected or not self.verifier.verify_claim(proof, expected):
            raise ProofInvalid("cross-claim proof does not verify")
        self.nonces.consume(publics.id_com, publics.nonce)
        lock.status = LockStatus.CLAIMED
        lock.dest_chain = publics.dest_chain
        lock.dest = publics.dest
        return CrossReceipt("cross-claim", intent_id, lock.status, lock.amount, publics.dest_chain, None, publics.dest)

    def resolve_form(self, lock: WrappedLock) -> ReleaseForm:
        """Native when source and destination share a VM family, wrapped otherwise."""
        assert lock.dest_chain is not None
        same = self.vm_of(lock.dest_chain) is self.vm_of(lock.intent.source_chain)
        return ReleaseForm.NATIVE if same else ReleaseForm.WRAPPED

    def unwrap_release(self, intent_id: bytes) -> CrossReceipt:
        lock = self._lock(intent_id)
        if lock.status is not LockStatus.CLAIMED:
            raise WrongStatus(f"lock is {lock.status.value}; release needs a bound claim")
        assert lock.dest is not None and lock.dest_chain is not None
        form = self.resolve_form(lock)
        w, v = lock.wrapped_asset, lock.amount
        if form is ReleaseForm.NATIVE:
            source = self._source(lock.intent.source_chain)
            if source.balance(BRIDGE_VAULT, lock.intent.asset) < v:
                raise InsufficientSenderBalance("bridge vault cannot back the release")
            self.tokens.burn(w, lock.alpha, v)
            self.burned[w] += v
            source.transfer(lock.intent.asset, BRIDGE_VAULT, lock.dest, v)
            asset = lock.intent.asset
        else:
            self.tokens.transfer(w, lock.alpha, lock.dest, v)
            self.circulating[w] += v
            asset = w
        lock.status = LockStatus.RELEASED
        lock.form = form
        return CrossReceipt("unwrap", intent_id, lock.status, v, lock.dest_chain, asset, lock.dest)

    def refund_message(self, it: CrossIntent) -> bytes:
        return codec.auth_message(
            MessageKind.REFUND, d_dep=self.d_dep, c=it.source_chain, a=it.asset, intent_id=it.intent_id,
            rho=it.rho, v=it.amount, gamma_a=it.refund_dest or b"", t_exp=it.expiry,
        )

    def cross_refund(self, intent_id: bytes, sig: Optional[bytes]) -> CrossReceipt:
        lock = self._lock(intent_id)
        if lock.status is not LockStatus.LOCKED:
            raise WrongStatus(f"lock is {lock.status.value}")
        if self.now <= lock.intent.expiry:
            raise NotExpired("wrapped intent has not expired")
        it = lock.intent
        if it.refund_dest is None or it.refund_commitment is None:
            raise NoRefundPath("no refund authorization committed")
        source = self._source(it.source_chain)
        if sig is None or not verify_refund(sig, source.policies.get(it.refund_dest), self.refund_message(it),
                                            it.refund_commitment):
            raise BadAuthorization("refund authorization does not verify")
        if source.balance(BRIDGE_VAULT, it.asset) < it.amount:
            raise InsufficientSenderBalance("bridge vault cannot back the refund")
        self.tokens.burn(lock.wrapped_asset, lock.alpha, it.amount)
        self.burned[lock.wrapped_asset] += it.amount
        source.transfer(it.asset, BRIDGE_VAULT, it.refund_dest, it.amount)
        lock.status = LockStatus.REFUNDED
        return CrossReceipt("cross-refund", intent_id, lock.status, it.amount, it.source_chain, it.asset,
                            it.refund_dest)

    # invariants -------------------------------------------------------------

    def wrapped_report(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        natives = {lock.wrapped_asset: (lock.intent.asset, lock.intent.source_chain) for lock in self.locks.values()}
        for w in set(self.minted) | set(natives):
            locked = sum(l.amount for l in self.locks.values()
                         if l.wrapped_asset == w and l.status in (LockStatus.LOCKED, LockStatus.CLAIMED))
            outstanding = self.minted[w] - self.burned[w]
            asset, chain = natives[w]
            vault = sum(
                ledger.balance(BRIDGE_VAULT, asset) for c, ledger in self.source_ledgers.items()
                if ledger is self.source_ledgers.get(chain)
            )
            out[w] = {
                "minted": self.minted[w],
                "burned": self.burned[w],
                "locked": locked,
                "circulating": self.circulating[w],
                "vault": vault,
                "supply_ok": outstanding == locked + self.circulating[w],
                "backing_ok": vault == outstanding,
            }
        return out

    def violations(self) -> list[str]:
        flagged = []
        for w, row in sorted(self.wrapped_report().items()):
            if not row["supply_ok"]:
                flagged.append(f"{w}: minted-burned {row['minted'] - row['burned']} != "
                               f"locked {row['locked']} + circulating {row['circulating']}")
            if not row["backing_ok"]:
                flagged.append(f"{w}: vault holds {row['vault']}, outstanding wrapped "
                               f"{row['minted'] - row['burned']}")
        return flagged
