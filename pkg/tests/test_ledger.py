import json
import random

import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from hfipay.identity import blind_binding, derive_commitment, derive_epoch_binding, random_root
from hfipay.ledger import (
    AlreadySettled,
    AssetMismatch,
    BadAuthorization,
    ClaimTx,
    Clock,
    DuplicateIntent,
    Expired,
    InsufficientSenderBalance,
    IntentMeta,
    IntentStatus,
    Ledger,
    Mempool,
    NonceReused,
    NoRefundPath,
    NotExpired,
    NotFound,
    ProofInvalid,
    TupleMismatch,
    WrongStatus,
    derive_address,
)
from hfipay.proofsys import ClaimWitness, MockProofBackend, SigningKey, sign_refund

D_DEP = b"ledger-test"
STORED_PATHS = {
    (IntentStatus.CREATED, IntentStatus.FUNDED),
    (IntentStatus.FUNDED, IntentStatus.CLAIMED),
    (IntentStatus.FUNDED, IntentStatus.REFUNDED),
}
T0 = 10_000


class Env:
    """One ledger, one recipient, one refund-capable sender."""

    def __init__(self, seed: int = 0) -> None:
        self.r = random.Random(seed)
        self.backend = MockProofBackend(self.r.randbytes(32))
        self.ledger = Ledger("eth", D_DEP, self.backend, Clock(T0))
        self.root = random_root(self.r)
        self.id_com = derive_commitment(self.root)
        self.binding = derive_epoch_binding(self.root, 3)
        self.sender = SigningKey(self.r.randbytes(32))
        self.ledger.register_policy(self.sender)
        self.ledger.mint("USDC", self.sender.address, 10_000)
        self.ledger.mint("DAI", self.sender.address, 10_000)
        self.auths = {}

    def register(self, amount=100, expiry=T0 + 600, refund=True) -> bytes:
        intent_id = self.r.randbytes(32)
        meta = IntentMeta(intent_id, blind_binding(self.binding.handle, intent_id), "USDC", amount, 3, expiry)
        if refund:
            meta.refund_dest = self.sender.address
            auth = sign_refund(self.sender, self.ledger.refund_message(meta))
            meta.refund_commitment = auth.commitment
            self.auths[intent_id] = auth
        self.ledger.register_intent(meta)
        return intent_id

    def funded(self, amount=100, fund=None, **kw) -> bytes:
        intent_id = self.register(amount, **kw)
        self.ledger.fund(intent_id, self.sender.address, "USDC", fund or amount)
        return intent_id

    def claim_args(self, intent_id, dest=b"\x0b" * 20, nonce=0):
        meta = self.ledger.read_intent(intent_id)
        publics = self.ledger.claim_publics(meta, self.id_com, dest, nonce)
        proof = self.backend.prove_claim(ClaimWitness(self.root, self.binding.handle), publics)
        return publics, proof


@pytest.fixture
def env():
    return Env()


def test_derive_address_examples():
    r = random.Random(4)
    i = r.randbytes(32)
    assert derive_address("eth", i, D_DEP) == derive_address("eth", i, D_DEP)
    assert len(derive_address("eth", i, D_DEP)) == 20
    assert derive_address("eth", i, D_DEP) != derive_address("sol", i, D_DEP)
    assert derive_address("eth", i, D_DEP) != derive_address("eth", i, b"other")
    addrs = {derive_address("eth", r.randbytes(32), D_DEP) for _ in range(10_000)}
    assert len(addrs) == 10_000


def test_register_and_read_back(env):
    i = env.register()
    meta = env.ledger.read_intent(i)
    assert meta.status is IntentStatus.CREATED
    assert meta.intent_id == i and meta.amount == 100 and meta.refund_commitment == env.auths[i].commitment
    with pytest.raises(DuplicateIntent):
        env.ledger.register_intent(IntentMeta(i, meta.rho, "USDC", 100, 3, T0 + 600))
    with pytest.raises(NotFound):
        env.ledger.read_intent(b"\x00" * 32)


def test_fund_exact_surplus_and_errors(env):
    i = env.register()
    with pytest.raises(AssetMismatch):
        env.ledger.fund(i, env.sender.address, "DAI", 100)
    with pytest.raises(InsufficientSenderBalance):
        env.ledger.fund(i, env.sender.address, "USDC", 10**9)
    env.ledger.fund(i, env.sender.address, "USDC", 60)
    assert env.ledger.status_of(i) is IntentStatus.CREATED
    env.ledger.fund(i, env.sender.address, "USDC", 70)
    meta = env.ledger.read_intent(i)
    assert meta.status is IntentStatus.FUNDED and meta.funded_balance == 130 and meta.funded_at == T0
    with pytest.raises(AlreadySettled):
        env.ledger.fund(i, env.sender.address, "USDC", 1)
    assert env.ledger.conserved()


def test_claim_releases_exactly_v_and_keeps_surplus(env):
    i = env.funded(100, fund=130)
    publics, proof = env.claim_args(i)
    receipt = env.ledger.claim(i, publics, proof)
    assert receipt.status is IntentStatus.CLAIMED and receipt.amount == 100
    assert env.ledger.balance(publics.dest, "USDC") == 100
    assert env.ledger.read_intent(i).funded_balance == 30
    assert env.ledger.conserved()
    with pytest.raises(WrongStatus):
        env.ledger.claim(i, publics, proof)
    with pytest.raises(WrongStatus):
        env.ledger.refund(i, env.auths[i].sig)


def test_claim_checks(env):
    created = env.register()
    publics, proof = env.claim_args(created)
    with pytest.raises(WrongStatus):
        env.ledger.claim(created, publics, proof)

    i = env.funded()
    publics, proof = env.claim_args(i)
    with pytest.raises(TupleMismatch):
        env.ledger.claim(i, publics.replace(amount=101), proof)
    with pytest.raises(ProofInvalid):
        env.ledger.claim(i, publics.replace(dest=b"\x0c" * 20), proof)
    with pytest.raises(ProofInvalid):
        env.ledger.claim(i, publics.replace(dep_tag=b"elsewhere"), proof)
    with pytest.raises(ProofInvalid):
        env.ledger.claim(i, publics, env.backend.prove_claim(
            ClaimWitness(env.root, env.binding.handle), publics.replace(nonce=5)))
    env.ledger.clock.advance(601)
    with pytest.raises(Expired):
        env.ledger.claim(i, publics, proof)


def test_nonce_reuse_rejected(env):
    a, b = env.funded(), env.funded()
    env.ledger.claim(a, *env.claim_args(a, nonce=4))
    with pytest.raises(NonceReused):
        env.ledger.claim(b, *env.claim_args(b, nonce=4))
    assert env.ledger.status_of(b) is IntentStatus.FUNDED
    env.ledger.claim(b, *env.claim_args(b, nonce=5))


def test_refund_paths(env):
    i = env.funded(100, fund=125)
    with pytest.raises(NotExpired):
        env.ledger.refund(i, env.auths[i].sig)
    env.ledger.clock.advance(601)
    assert env.ledger.status_of(i) is IntentStatus.EXPIRED
    assert env.ledger.stored_status(i) is IntentStatus.FUNDED
    with pytest.raises(BadAuthorization):
        env.ledger.refund(i, None)
    with pytest.raises(BadAuthorization):
        env.ledger.refund(i, b"\x00" * 32)
    before = env.ledger.balance(env.sender.address, "USDC")
    receipt = env.ledger.refund(i, env.auths[i].sig)
    assert receipt.status is IntentStatus.REFUNDED and receipt.amount == 100
    assert env.ledger.balance(env.sender.address, "USDC") == before + 100
    assert env.ledger.read_intent(i).funded_balance == 25
    assert env.ledger.conserved()


def test_no_refund_path_stays_expired(env):
    i = env.funded(refund=False)
    env.ledger.clock.advance(601)
    with pytest.raises(NoRefundPath):
        env.ledger.refund(i, b"\x00" * 32)
    assert env.ledger.status_of(i) is IntentStatus.EXPIRED


def test_refund_commitment_mismatch(env):
    i = env.register()
    # a signature over the right message whose hash is not the stored commitment
    other_key = SigningKey(b"o" * 32)
    env.ledger.fund(i, env.sender.address, "USDC", 100)
    env.ledger.clock.advance(601)
    forged = sign_refund(other_key, env.ledger.refund_message(env.ledger.read_intent(i)))
    with pytest.raises(BadAuthorization):
        env.ledger.refund(i, forged.sig)


def test_observer_view_filters_and_secrecy(env, tmp_path):
    assert Env(1).ledger.observer_view() == []
    a = env.funded()
    b = env.funded()
    env.ledger.claim(b, *env.claim_args(b))
    pre = env.ledger.observer_view(pre_claim=True)
    assert {r.intent_id for r in pre} == {a}
    assert all(r.event in ("registered", "funded") and not r.logs for r in pre)
    claimed = env.ledger.observer_view(status=IntentStatus.CLAIMED)
    assert {r.intent_id for r in claimed} == {b}
    assert env.ledger.observer_view(start=T0 + 1) == []
    path = tmp_path / "events.jsonl"
    env.ledger.export_events(path)
    text = path.read_text()
    assert len(text.splitlines()) == 5
    for secret in (env.root.rev, env.root.salt, env.binding.handle, env.binding.key_commitment):
        assert secret.hex() not in text
    assert "example" not in text
    # id_com becomes public only with the claim event
    assert env.id_com.hex() in json.loads(text.splitlines()[-1])["logs"]["id_com"]
    assert env.id_com.hex() not in "".join(json.dumps(r.to_json()) for r in pre)


def test_mempool_front_running_pays_dest(env):
    i = env.funded()
    publics, proof = env.claim_args(i)
    pool = Mempool(env.ledger)
    tx = ClaimTx(i, publics, proof, submitter="recipient")
    pool.submit(tx)
    pool.adversary_copy(tx)
    results = pool.mine()
    assert results[0][0].submitter == "adversary"
    assert results[0][1].to == publics.dest
    assert isinstance(results[1][1], WrongStatus)
    assert env.ledger.balance(publics.dest, "USDC") == 100


def test_mempool_mutated_copy_fails(env):
    i = env.funded()
    publics, proof = env.claim_args(i)
    pool = Mempool(env.ledger)
    tx = ClaimTx(i, publics, proof)
    pool.submit(tx)
    thief = b"\x66" * 20
    pool.adversary_copy(tx, mutate=lambda t: ClaimTx(t.intent_id, t.publics.replace(dest=thief), t.proof, t.submitter))
    results = pool.mine()
    assert isinstance(results[0][1], ProofInvalid)
    assert results[1][1].status is IntentStatus.CLAIMED
    assert env.ledger.balance(thief, "USDC") == 0


def test_confirmation_depth(env):
    env.ledger.set_confirmation_depth(3)
    i = env.funded()
    env.ledger.advance_blocks(2)
    assert not env.ledger.is_confirmed(i, IntentStatus.FUNDED)
    env.ledger.advance_blocks(1)
    assert env.ledger.is_confirmed(i, IntentStatus.FUNDED)
    env.ledger.set_confirmation_depth(0)
    j = env.funded()
    assert env.ledger.is_confirmed(j, IntentStatus.FUNDED)


# --- stateful property test -------------------------------------------------


class LedgerMachine(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.env = Env(seed=5)
        self.ids: list[bytes] = []
        self.history: dict[bytes, list[IntentStatus]] = {}
        self.frozen: dict[bytes, tuple] = {}
        self.paid_in: dict[bytes, int] = {}
        self.nonce = 0

    def _observe(self, i):
        # stored status; EXPIRED is a derived phase checked through timing below
        s = self.env.ledger.stored_status(i)
        if self.history[i][-1] is not s:
            self.history[i].append(s)

    @rule(amount=st.integers(1, 300), ttl=st.integers(1, 900), refund=st.booleans())
    def register(self, amount, ttl, refund):
        i = self.env.register(amount, expiry=self.env.ledger.now + ttl, refund=refund)
        self.ids.append(i)
        self.history[i] = [IntentStatus.CREATED]
        self.paid_in[i] = 0
        m = self.env.ledger.read_intent(i)
        self.frozen[i] = (m.rho, m.asset, m.amount, m.epoch)

    @precondition(lambda self: self.ids)
    @rule(k=st.integers(0, 10**6), amount=st.integers(1, 400), asset=st.sampled_from(["USDC", "DAI"]))
    def fund(self, k, amount, asset):
        i = self.ids[k % len(self.ids)]
        try:
            self.env.ledger.fund(i, self.env.sender.address, asset, amount)
            self.paid_in[i] += amount
        except (AlreadySettled, AssetMismatch, InsufficientSenderBalance):
            pass
        self._observe(i)

    @precondition(lambda self: self.ids)
    @rule(k=st.integers(0, 10**6), reuse=st.booleans())
    def claim(self, k, reuse):
        i = self.ids[k % len(self.ids)]
        nonce = max(self.nonce - 1, 0) if reuse else self.nonce
        dest = b"\x0d" * 20
        before = self.env.ledger.balance(dest, "USDC")
        try:
            meta = self.env.ledger.read_intent(i)
            self.env.ledger.claim(i, *self.env.claim_args(i, dest, nonce))
            assert self.env.ledger.balance(dest, "USDC") - before == meta.amount
            self.nonce = max(self.nonce, nonce + 1)
        except (WrongStatus, Expired, NonceReused):
            pass
        self._observe(i)

    @precondition(lambda self: self.ids)
    @rule(k=st.integers(0, 10**6), good=st.booleans())
    def refund(self, k, good):
        i = self.ids[k % len(self.ids)]
        auth = self.env.auths.get(i)
        sig = auth.sig if (auth and good) else b"\x00" * 32
        try:
            meta = self.env.ledger.read_intent(i)
            r = self.env.ledger.refund(i, sig)
            assert r.amount == meta.amount
        except (WrongStatus, NotExpired, NoRefundPath, BadAuthorization):
            pass
        self._observe(i)

    @rule(seconds=st.integers(0, 400))
    def advance(self, seconds):
        self.env.ledger.clock.advance(seconds)
        for i in self.ids:
            self._observe(i)

    @invariant()
    def conserved(self):
        assert self.env.ledger.conserved()

    @invariant()
    def transitions_on_paths(self):
        for path in self.history.values():
            for a, b in zip(path, path[1:]):
                assert (a, b) in STORED_PATHS

    @invariant()
    def settlement_timing(self):
        for i in self.ids:
            m = self.env.ledger.read_intent(i)
            if m.status is IntentStatus.CLAIMED:
                assert m.settled_at <= m.expiry
            if m.status is IntentStatus.REFUNDED:
                assert m.settled_at > m.expiry and m.refund_commitment is not None

    @invariant()
    def immutable(self):
        for i, t in self.frozen.items():
            m = self.env.ledger.read_intent(i)
            assert (m.rho, m.asset, m.amount, m.epoch) == t

    @invariant()
    def surplus_retained(self):
        for i in self.ids:
            m = self.env.ledger.read_intent(i)
            if m.status in (IntentStatus.CLAIMED, IntentStatus.REFUNDED):
                assert m.funded_balance == self.paid_in[i] - m.amount >= 0
            else:
                assert m.funded_balance == self.paid_in[i]


TestLedgerMachine = LedgerMachine.TestCase
TestLedgerMachine.settings = settings(max_examples=60, stateful_step_count=40, deadline=None)
