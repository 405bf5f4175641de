"""A seeded deployment: clock, ledgers, relay, issuer, mailbox, parties.

Scenarios, games, attacks and fuzzers all build their worlds here so every
experiment runs the production relay, ledger and client code paths.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..crosschain import CrossIntent, Honesty, NvmRuntime, WrappedLock
from ..identity import DEFAULT_EPOCH_LEN, IdentityRoot, epoch_of, random_root
from ..ledger import Clock, IntentMeta, Ledger, LedgerError, NonceLedger, Receipt
from ..parties import (
    ChecksNotPassed,
    MailService,
    QuoteRejected,
    Recipient,
    Sender,
    SenderSession,
)
from ..proofsys import BindingIssuer, MockProofBackend, SigningKey
from ..relay import Malice, Mode, Quote, Relay, RelayConfig, RelayError

DEFAULT_D_DEP = b"hfipay-sim-deployment"
DEFAULT_START = 1_700_000_000


def account(name: str) -> bytes:
    """20-byte address for a human-readable account label."""
    return hashlib.sha256(b"hfipay-account:" + name.encode("utf-8")).digest()[:20]


@dataclass
class Payment:
    sender: str
    identifier: str
    session: SenderSession
    quote: Optional[Quote] = None
    stage: str = "requested"
    error: Optional[str] = None
    lock: Optional[WrappedLock] = None

    @property
    def intent_id(self) -> Optional[bytes]:
        return None if self.quote is None else self.quote.intent_id


@dataclass
class World:
    seed: int
    rng: random.Random
    clock: Clock
    nonces: NonceLedger
    backend: MockProofBackend
    ledgers: dict[str, Ledger]
    relay: Relay
    issuer: BindingIssuer
    issuer_key: SigningKey
    mail: MailService
    mode: Mode
    d_dep: bytes
    epoch_len: int
    recipients: dict[str, Recipient] = field(default_factory=dict)
    credentials: dict[str, str] = field(default_factory=dict)
    senders: dict[str, Sender] = field(default_factory=dict)
    tokens: dict[str, str] = field(default_factory=dict)
    runtime: Optional[NvmRuntime] = None
    # funding-gate instrumentation: payments whose checks failed but still reached ledger.fund
    gate_breaches: int = 0

    @property
    def now(self) -> int:
        return self.clock.now

    @property
    def epoch(self) -> int:
        return epoch_of(self.clock.now, self.epoch_len)

    def epoch_end(self, epoch: Optional[int] = None) -> int:
        e = self.epoch if epoch is None else epoch
        return (e + 1) * self.epoch_len - 1

    def ledger(self, chain: Optional[str] = None) -> Ledger:
        return self.ledgers[chain] if chain is not None else next(iter(self.ledgers.values()))

    # parties ----------------------------------------------------------------

    def add_recipient(self, identifier: str, root: Optional[IdentityRoot] = None,
                      nonce_start: int = 0) -> Recipient:
        recipient = Recipient(identifier, root or random_root(self.rng), self.backend, nonce_start=nonce_start)
        norm = recipient.identifier
        self.credentials[norm] = self.mail.open_account(norm)
        binding = recipient.binding(self.epoch)
        attestation = None
        if self.mode is Mode.VERIFIED:
            attestation = recipient.obtain_attestation(
                self.issuer, self.mail, self.credentials[norm], self.epoch, self.epoch_end(), self.now
            )
        self.relay.enroll(norm, recipient.id_com, binding, self.mode, attestation)
        self.recipients[norm] = recipient
        return recipient

    def rotate(self, identifier: str) -> None:
        """Move the recipient's directory entry to the current epoch."""
        recipient = self.recipients[identifier]
        attestation = None
        if self.mode is Mode.VERIFIED:
            attestation = recipient.obtain_attestation(
                self.issuer, self.mail, self.credentials[identifier], self.epoch, self.epoch_end(), self.now
            )
        self.relay.rotate_epoch(identifier, recipient.binding(self.epoch), attestation)

    def add_sender(self, name: str, funds: Optional[dict[str, int]] = None) -> Sender:
        sender = Sender(name, SigningKey.generate(self.rng), self.ledgers, self.backend, self.issuer_key)
        for ledger in self.ledgers.values():
            for asset, amount in (funds or {}).items():
                ledger.mint(asset, sender.account, amount)
        self.senders[name] = sender
        self.tokens[name] = self.relay.register_sender(name)
        return sender

    # flows ------------------------------------------------------------------

    def quote(self, sender: str, identifier: str, asset: str, amount: int, chain: Optional[str] = None,
              ttl: int = 3600, refund: bool = True) -> Payment:
        chain = chain or self.ledger().chain
        s = self.senders[sender]
        session = s.new_session(identifier, asset, amount, chain, self.now + ttl, self.mode, refund)
        payment = Payment(sender, identifier, session)
        payment.quote = self.relay.create_quote(self.tokens[sender], session.request)
        payment.stage = "quoted"
        return payment

    def _attempt_fund(self, payment: Payment, fund_amount: Optional[int] = None) -> bool:
        """Ask the sender client to fund; count a gate breach if a failed check still reached the ledger."""
        s = self.senders[payment.sender]
        session, quote = payment.session, payment.quote
        assert quote is not None
        ledger = self.ledgers[quote.chain]
        before = ledger.fund_calls
        try:
            s.fund(session, fund_amount)
            return True
        except ChecksNotPassed:
            return False
        except LedgerError as exc:
            payment.stage, payment.error = "fund-failed", type(exc).__name__
            return False
        finally:
            if ledger.fund_calls != before and not (session.accepted and session.tuple_confirmed):
                self.gate_breaches += 1

    def settle_quote(self, payment: Payment, fund_amount: Optional[int] = None) -> Payment:
        """Verify, authorize the refund, register, check the on-chain tuple, fund and notify.

        On a failed check the sender app still asks to fund, so the gate is exercised.
        """
        s = self.senders[payment.sender]
        session, quote = payment.session, payment.quote
        assert quote is not None
        try:
            s.verify_quote(session, quote)
        except QuoteRejected as exc:
            payment.stage, payment.error = "quote-rejected", type(exc).__name__
            self._attempt_fund(payment, fund_amount)
            return payment
        auth = s.authorize_refund(session)
        self.relay.register_and_confirm(quote.intent_id, auth.commitment if auth else None,
                                        auth.sig if auth else None)
        if not s.check_registered_tuple(session):
            payment.stage, payment.error = "tuple-rejected", session.rejection
            self._attempt_fund(payment, fund_amount)
            return payment
        if not self._attempt_fund(payment, fund_amount):
            return payment
        payment.stage = "funded"
        try:
            self.relay.notify(quote.intent_id)
            payment.stage = "notified"
        except RelayError as exc:
            payment.error = type(exc).__name__
        return payment

    def pay(self, sender: str, identifier: str, asset: str, amount: int, chain: Optional[str] = None,
            ttl: int = 3600, refund: bool = True, fund_amount: Optional[int] = None) -> Payment:
        payment = self.quote(sender, identifier, asset, amount, chain, ttl, refund)
        return self.settle_quote(payment, fund_amount)

    def intent(self, payment: Payment) -> IntentMeta:
        assert payment.quote is not None
        return self.ledgers[payment.quote.chain].read_intent(payment.quote.intent_id)

    def claim(self, payment: Payment, dest: bytes, via_relay: bool = True,
              nonce: Optional[int] = None) -> Receipt:
        quote = payment.quote
        assert quote is not None
        recipient = self.recipients[payment.identifier]
        ledger = self.ledgers[quote.chain]
        publics, proof = recipient.build_claim(self.intent(payment), dest, quote.chain, ledger.d_dep, nonce)
        if via_relay:
            return self.relay.submit_claim_for(quote.intent_id, publics, proof)
        return ledger.claim(quote.intent_id, publics, proof)

    def refund(self, payment: Payment, via_relay: bool = True) -> Receipt:
        quote = payment.quote
        assert quote is not None
        sig = payment.session.refund_auth.sig if payment.session.refund_auth else None
        if via_relay:
            return self.relay.submit_refund_for(quote.intent_id, sig)
        return self.ledgers[quote.chain].refund(quote.intent_id, sig)

    # cross-chain ------------------------------------------------------------

    def enable_crosschain(self) -> NvmRuntime:
        if self.runtime is None:
            self.runtime = NvmRuntime(self.d_dep, self.backend, self.ledgers,
                                      SigningKey.generate(self.rng), self.clock, self.nonces)
        return self.runtime

    def cross_pay(self, sender: str, identifier: str, asset: str, amount: int, source_chain: str,
                  honesty: Honesty = Honesty.HONEST, ttl: int = 3600, debit: bool = True) -> Payment:
        """Quote on the source chain, then deposit through the bridge instead of funding alpha."""
        runtime = self.enable_crosschain()
        payment = self.quote(sender, identifier, asset, amount, source_chain, ttl)
        s = self.senders[sender]
        session, quote = payment.session, payment.quote
        assert quote is not None
        try:
            s.verify_quote(session, quote)
        except QuoteRejected as exc:
            payment.stage, payment.error = "quote-rejected", type(exc).__name__
            return payment
        auth = s.authorize_refund(session)
        try:
            att = runtime.bridge_deposit(source_chain, asset, amount, honesty, s.account if debit else None)
        except LedgerError as exc:
            payment.stage, payment.error = "bridge-rejected", type(exc).__name__
            return payment
        intent = CrossIntent(quote.intent_id, quote.rho, source_chain, asset, quote.epoch, amount, quote.expiry,
                             quote.refund_dest, auth.commitment if auth else None)
        payment.lock = runtime.wrap_and_lock(att, intent)
        payment.stage = "locked"
        return payment

    def cross_claim(self, payment: Payment, dest_chain: str, dest: bytes, nonce: Optional[int] = None):
        runtime = self.enable_crosschain()
        lock = payment.lock
        assert lock is not None
        it = lock.intent
        meta = IntentMeta(it.intent_id, it.rho, it.asset, it.amount, it.epoch, it.expiry)
        recipient = self.recipients[payment.identifier]
        publics, proof = recipient.build_claim(meta, dest, it.source_chain, self.d_dep, nonce, dest_chain)
        return runtime.cross_claim(it.intent_id, publics, proof)


def build_world(
    seed: int = 0,
    chains: Iterable[str] = ("eth",),
    mode: Mode = Mode.VERIFIED,
    malice: Optional[Malice] = None,
    d_dep: bytes = DEFAULT_D_DEP,
    epoch_len: int = DEFAULT_EPOCH_LEN,
    start: int = DEFAULT_START,
    record_witnesses: bool = False,
    nonces: Optional[NonceLedger] = None,
    confirmation_depth: int = 0,
) -> World:
    rng = random.Random(seed)
    clock = Clock(start)
    nonces = nonces or NonceLedger()
    backend = MockProofBackend(rng.randbytes(32), record_witnesses=record_witnesses)
    ledgers = {c: Ledger(c, d_dep, backend, clock, nonces, confirmation_depth=confirmation_depth) for c in chains}
    issuer_key = SigningKey.generate(rng)
    mail = MailService()
    issuer = BindingIssuer(issuer_key, rng, mail.deliver)
    relay = Relay(ledgers, backend, issuer_key, rng, RelayConfig(malice=malice or Malice()))
    return World(seed, rng, clock, nonces, backend, ledgers, relay, issuer, issuer_key, mail, Mode(mode), d_dep,
                 epoch_len)
