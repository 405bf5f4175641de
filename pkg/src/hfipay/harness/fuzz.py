"""Randomized transaction sequences against the ledger and the cross-chain runtime.

The fuzzers drive production code with a mix of honest and hostile
transactions and count invariant violations instead of stopping at the
first one, so a report shows how often each property held.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..crosschain import CrossIntent, Honesty, NvmRuntime, derive_vm_address
from ..identity import blind_binding, random_root
from ..ledger import Clock, IntentMeta, IntentStatus, Ledger, LedgerError, NonceLedger
from ..parties import ProofFailed, Recipient
from ..proofsys import ClaimPublicInputs, MockProofBackend, Proof, SigningKey, sign_refund

ASSET = "USDC"
OTHER_ASSET = "DAI"
D_DEP = b"hfipay-fuzz"

STORED_PATHS = frozenset({
    (IntentStatus.CREATED, IntentStatus.FUNDED),
    (IntentStatus.FUNDED, IntentStatus.CLAIMED),
    (IntentStatus.FUNDED, IntentStatus.REFUNDED),
})


@dataclass
class FuzzReport:
    transactions: int = 0
    intents: int = 0
    accepted: dict[str, int] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    bad_transitions: int = 0
    conservation_violations: int = 0
    non_exact_releases: int = 0
    nonce_reuse_accepted: int = 0
    surplus_released: int = 0
    claimed: int = 0
    refunded: int = 0

    @property
    def clean(self) -> bool:
        return not (self.bad_transitions or self.conservation_violations or self.non_exact_releases
                    or self.nonce_reuse_accepted or self.surplus_released)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["accepted"] = dict(sorted(self.accepted.items()))
        out["rejected"] = dict(sorted(self.rejected.items()))
        out["clean"] = self.clean
        return out


@dataclass
class _Intent:
    meta: IntentMeta
    recipient: Recipient
    sender: SigningKey
    refund_sig: Optional[bytes]
    funded: int = 0


class _LifecycleFuzzer:
    CLAIM_FIELDS = ("rho", "asset", "epoch", "intent_id", "amount", "dest", "expiry", "nonce", "dep_tag", "chain",
                    "id_com")

    LIVE = (IntentStatus.CREATED, IntentStatus.FUNDED)

    def __init__(self, seed: int, n_intents: int, n_recipients: int = 12, n_senders: int = 4) -> None:
        self.rng = random.Random(seed)
        self.clock = Clock(1_700_000_000)
        self.backend = MockProofBackend(self.rng.randbytes(32))
        self.ledger = Ledger("fuzz", D_DEP, self.backend, self.clock, NonceLedger())
        self.recipients = [Recipient(f"r{i}@example.com", random_root(self.rng), self.backend)
                           for i in range(n_recipients)]
        self.senders = [SigningKey.generate(self.rng) for _ in range(n_senders)]
        for key in self.senders:
            self.ledger.register_policy(key)
            self.ledger.mint(ASSET, key.address, 10**12)
            self.ledger.mint(OTHER_ASSET, key.address, 10**12)
        self.target = n_intents
        self.intents: list[_Intent] = []
        self.accepted_nonces: set[tuple[bytes, int]] = set()
        self.used_nonces: dict[int, list[int]] = {}
        self.report = FuzzReport()

    # bookkeeping ------------------------------------------------------------

    def _count(self, bucket: dict, name: str) -> None:
        bucket[name] = bucket.get(name, 0) + 1

    def _observe(self, it: _Intent, before: IntentStatus) -> None:
        after = self.ledger.stored_status(it.meta.intent_id)
        if after is before:
            return
        ok = (before, after) in STORED_PATHS
        if after is IntentStatus.CLAIMED and self.clock.now > it.meta.expiry:
            ok = False
        if after is IntentStatus.REFUNDED and self.clock.now <= it.meta.expiry:
            ok = False
        self.report.bad_transitions += not ok

    # operations -------------------------------------------------------------

    def register(self) -> None:
        recipient = self.rng.choice(self.recipients)
        sender = self.rng.choice(self.senders)
        intent_id = self.rng.randbytes(32)
        epoch = self.rng.randrange(2800, 2820)
        meta = IntentMeta(
            intent_id=intent_id, rho=blind_binding(recipient.binding(epoch).handle, intent_id), asset=ASSET,
            amount=self.rng.randrange(1, 10_000), epoch=epoch, expiry=self.clock.now + self.rng.randrange(60, 20_000),
            refund_dest=sender.address,
        )
        sig = None
        if self.rng.random() < 0.9:
            auth = sign_refund(sender, self.ledger.refund_message(meta))
            meta.refund_commitment, sig = auth.commitment, auth.sig
        else:
            meta.refund_dest = None
        self.ledger.register_intent(meta)
        self.intents.append(_Intent(meta, recipient, sender, sig))
        self._count(self.report.accepted, "register")

    def fund(self, it: _Intent) -> None:
        v = it.meta.amount
        roll = self.rng.random()
        asset = OTHER_ASSET if roll < 0.05 else ASSET
        if roll < 0.5:
            amount = v - it.funded if it.funded < v else v
        elif roll < 0.7:
            amount = max(1, (v - it.funded) // 2)
        else:
            amount = v + self.rng.randrange(1, 500)
        before_status = self.ledger.stored_status(it.meta.intent_id)
        try:
            self.ledger.fund(it.meta.intent_id, it.sender.address, asset, amount)
            it.funded += amount
            self._count(self.report.accepted, "fund")
        except LedgerError as exc:
            self._count(self.report.rejected, "fund:" + type(exc).__name__)
        self._observe(it, before_status)

    def _mutate(self, publics: ClaimPublicInputs) -> ClaimPublicInputs:
        name = self.rng.choice(self.CLAIM_FIELDS)
        value = getattr(publics, name)
        if isinstance(value, bytes):
            value = bytes([value[0] ^ (1 << self.rng.randrange(8))]) + value[1:]
        elif isinstance(value, str):
            value = value + "x"
        else:
            value = value + 1
        return publics.replace(**{name: value})

    def claim(self, it: _Intent) -> None:
        meta = self.ledger.read_intent(it.meta.intent_id)
        dest = self.rng.randbytes(20)
        roll = self.rng.random()
        recipient = it.recipient
        if roll < 0.08:
            recipient = self.rng.choice(self.recipients)
        nonce = None
        spent = self.used_nonces.get(id(recipient))
        if roll > 0.85 and spent:
            nonce = self.rng.choice(spent)
        try:
            publics, proof = recipient.build_claim(meta, dest, self.ledger.chain, D_DEP, nonce)
        except ProofFailed as exc:
            self._count(self.report.rejected, f"prove:clause-{exc.clause}")
            return
        if 0.08 <= roll < 0.25:
            publics = self._mutate(publics)
        elif 0.25 <= roll < 0.3:
            proof = Proof(proof.relation, proof.publics_hash, self.rng.randbytes(32))
        before_status = self.ledger.stored_status(it.meta.intent_id)
        before_bal = self.ledger.balance(publics.dest, meta.asset)
        pair = (publics.id_com, publics.nonce)
        try:
            receipt = self.ledger.claim(it.meta.intent_id, publics, proof)
        except LedgerError as exc:
            self._count(self.report.rejected, "claim:" + type(exc).__name__)
        else:
            self._count(self.report.accepted, "claim")
            self.report.claimed += 1
            self.report.nonce_reuse_accepted += pair in self.accepted_nonces
            self.accepted_nonces.add(pair)
            self.used_nonces.setdefault(id(recipient), []).append(publics.nonce)
            gained = self.ledger.balance(publics.dest, meta.asset) - before_bal
            self.report.non_exact_releases += receipt.amount != meta.amount or gained != meta.amount
            self._check_surplus(it)
        self._observe(it, before_status)

    def refund(self, it: _Intent) -> None:
        roll = self.rng.random()
        sig = it.refund_sig
        if roll < 0.1:
            sig = None
        elif roll < 0.2:
            sig = self.rng.randbytes(32)
        dest = it.meta.refund_dest
        before_status = self.ledger.stored_status(it.meta.intent_id)
        before_bal = self.ledger.balance(dest, ASSET) if dest else 0
        try:
            receipt = self.ledger.refund(it.meta.intent_id, sig)
        except LedgerError as exc:
            self._count(self.report.rejected, "refund:" + type(exc).__name__)
        else:
            self._count(self.report.accepted, "refund")
            self.report.refunded += 1
            gained = self.ledger.balance(dest, ASSET) - before_bal
            self.report.non_exact_releases += receipt.amount != it.meta.amount or gained != it.meta.amount
            self._check_surplus(it)
        self._observe(it, before_status)

    def _check_surplus(self, it: _Intent) -> None:
        held = self.ledger.read_intent(it.meta.intent_id).funded_balance
        self.report.surplus_released += held != it.funded - it.meta.amount

    def advance(self) -> None:
        self.clock.advance(self.rng.randrange(0, 1500))
        self._count(self.report.accepted, "advance")

    def step(self) -> None:
        if len(self.intents) < self.target and (not self.intents or self.rng.random() < 0.3):
            self.register()
        else:
            roll = self.rng.random()
            if roll < 0.06:
                self.advance()
            else:
                live = [i for i in self.intents if self.ledger.stored_status(i.meta.intent_id) in self.LIVE]
                it = self.rng.choice(live if live and self.rng.random() < 0.8 else self.intents)
                if roll < 0.4:
                    self.fund(it)
                elif roll < 0.8:
                    self.claim(it)
                else:
                    self.refund(it)
        self.report.transactions += 1
        if not self.ledger.conserved():
            self.report.conservation_violations += 1


def lifecycle_fuzz(transactions: int = 100_000, intents: int = 100, seed: int = 0,
                   batches: Optional[int] = None) -> FuzzReport:
    """Run ``transactions`` random operations; intents are recycled in fresh batches of ``intents``.

    Every batch is an independent ledger so late transactions are not all
    rejections against long-settled intents.
    """
    batches = batches or max(1, transactions // (intents * 20))
    total = FuzzReport()
    per_batch = transactions // batches
    for b in range(batches):
        n = per_batch if b < batches - 1 else transactions - per_batch * (batches - 1)
        fz = _LifecycleFuzzer(seed * 1_000_003 + b, intents)
        for _ in range(n):
            fz.step()
        r = fz.report
        r.intents = len(fz.intents)
        _merge(total, r)
    return total


def _merge(total: FuzzReport, r: FuzzReport) -> None:
    for name in ("transactions", "intents", "bad_transitions", "conservation_violations", "non_exact_releases",
                 "nonce_reuse_accepted", "surplus_released", "claimed", "refunded"):
        setattr(total, name, getattr(total, name) + getattr(r, name))
    for bucket in ("accepted", "rejected"):
        merged = getattr(total, bucket)
        for k, v in getattr(r, bucket).items():
            merged[k] = merged.get(k, 0) + v


# --------------------------------------------------------------------------
# cross-chain


CROSS_CHAINS = ("btc", "eth", "sol")
NATIVE_ASSET = {"btc": "BTC", "eth": "ETH", "sol": "SOL"}


@dataclass
class CrossFuzzReport:
    scenarios: int = 0
    claimed: int = 0
    released_native: int = 0
    released_wrapped: int = 0
    refunded: int = 0
    supply_violations: int = 0
    backing_violations: int = 0
    flagged: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["flagged"] = list(self.flagged[:10])
        return out


def cross_fuzz(scenarios: int = 1000, seed: int = 0, honesty: Honesty = Honesty.HONEST,
               unbacked_rate: float = 0.0) -> CrossFuzzReport:
    """Random deposit / lock / claim / release / refund scenarios on one runtime.

    With a faulty bridge, ``unbacked_rate`` of deposits are attested without a
    source debit; the runtime's backing check must flag them.
    """
    rng = random.Random(seed)
    clock = Clock(1_700_000_000)
    backend = MockProofBackend(rng.randbytes(32))
    nonces = NonceLedger()
    ledgers = {c: Ledger(c, D_DEP, backend, clock, nonces) for c in CROSS_CHAINS}
    runtime = NvmRuntime(D_DEP, backend, ledgers, SigningKey.generate(rng), clock, nonces)
    senders = [SigningKey.generate(rng) for _ in range(4)]
    for key in senders:
        for c, ledger in ledgers.items():
            ledger.register_policy(key)
            ledger.mint(NATIVE_ASSET[c], key.address, 10**12)
    recipients = [Recipient(f"x{i}@example.com", random_root(rng), backend) for i in range(8)]
    report = CrossFuzzReport()
    for _ in range(scenarios):
        c_s = rng.choice(CROSS_CHAINS)
        asset = NATIVE_ASSET[c_s]
        sender = rng.choice(senders)
        recipient = rng.choice(recipients)
        amount = rng.randrange(1, 10_000)
        intent_id = rng.randbytes(32)
        epoch = 2810
        expiry = clock.now + rng.randrange(100, 5000)
        rho = blind_binding(recipient.binding(epoch).handle, intent_id)
        unbacked = Honesty(honesty) is Honesty.FAULTY and rng.random() < unbacked_rate
        att = runtime.bridge_deposit(c_s, asset, amount, honesty, None if unbacked else sender.address)
        draft = CrossIntent(intent_id, rho, c_s, asset, epoch, amount, expiry, sender.address, None)
        auth = sign_refund(sender, runtime.refund_message(draft))
        intent = CrossIntent(intent_id, rho, c_s, asset, epoch, amount, expiry, sender.address, auth.commitment)
        runtime.wrap_and_lock(att, intent)
        report.scenarios += 1
        if rng.random() < 0.75:
            c_d = rng.choice(CROSS_CHAINS)
            dest = derive_vm_address(runtime.vm_of(c_d), recipient.id_com).raw
            meta = IntentMeta(intent_id, rho, asset, amount, epoch, expiry)
            publics, proof = recipient.build_claim(meta, dest, c_s, D_DEP, dest_chain=c_d)
            try:
                runtime.cross_claim(intent_id, publics, proof)
                report.claimed += 1
                receipt = runtime.unwrap_release(intent_id)
                if receipt.asset == asset:
                    report.released_native += 1
                else:
                    report.released_wrapped += 1
            except LedgerError as exc:
                report.flagged.append(f"{intent_id.hex()[:8]}: {type(exc).__name__}")
        else:
            clock.advance(expiry - clock.now + 1)
            try:
                runtime.cross_refund(intent_id, auth.sig)
                report.refunded += 1
            except LedgerError as exc:
                report.flagged.append(f"{intent_id.hex()[:8]}: {type(exc).__name__}")
        clock.advance(rng.randrange(0, 50))
        for w, row in runtime.wrapped_report().items():
            report.supply_violations += not row["supply_ok"]
            report.backing_violations += not row["backing_ok"]
    report.flagged.extend(runtime.violations())
    return report
