"""Acceptance gate: one group of tests per criterion, summarised at the end of the run."""

import dataclasses
import random
import sys
import time
from pathlib import Path

import pytest

from hfipay import codec
from hfipay.codec import MessageKind, load_vectors
from hfipay.crosschain import VM, CrossIntent, Honesty, NvmRuntime, WrappedLock, derive_vm_address
from hfipay.harness import games
from hfipay.harness.attacks import check_lemma1
from hfipay.harness.fuzz import cross_fuzz, lifecycle_fuzz
from hfipay.harness.world import account, build_world
from hfipay.identity import recover_root
from hfipay.ledger import (
    ClaimTx,
    IntentMeta,
    IntentStatus,
    Ledger,
    LedgerError,
    Mempool,
    NonceReused,
    NoRefundPath,
    NotFound,
    ProofInvalid,
    WrongStatus,
)
from hfipay.parties import ProofFailed, Recipient, Sender
from hfipay.proofsys import ClaimPublicInputs, MockProofBackend, SigningKey
from hfipay.relay import MUTATION_TARGETS, REGISTRATION_TARGETS, Malice, PrivateIntentRecord, Quote, Relay

sys.path.insert(0, str(Path(__file__).parent))
import oracle  # noqa: E402

N_GAME = 10_000
THRESHOLD = 0.02
PRE_CLAIM_ADVERSARIES = [name for name, adv in games.ADVERSARIES.items() if not adv.grants]


def report(label, result):
    print(f"{label}: success={result.success_rate:.4f} advantage={result.advantage:.4f} "
          f"ci95=+/-{result.ci_half_width:.4f}")


# AC1 ---------------------------------------------------------------------------

def _role_messages(vector):
    """Rebuild a vector's message through the relay, the ledger verifier and the party clients."""
    v = vector.values()
    backend = MockProofBackend(b"k" * 32)
    chain = v.get("c", v.get("c_s"))
    ledger = Ledger(chain, v["d_dep"], backend)
    relay = Relay({chain: ledger}, backend)
    relay.intents[v["intent_id"]] = PrivateIntentRecord(
        "x@example.com", v["intent_id"], v["rho"], v["a"], v["v"], chain, v.get("e", 0),
        v.get("gamma_a") or None, v["t_exp"], 0)
    meta = IntentMeta(v["intent_id"], v["rho"], v["a"], v["v"], v.get("e", 0), v["t_exp"], v.get("gamma_a") or None)
    party = Recipient("x@example.com", recover_root("x@example.com", "pw", 16), backend)

    if vector.kind is MessageKind.CLAIM:
        return {
            "relay": relay.claim_message(v["intent_id"], v["beta"], v["n"]),
            "ledger": ledger.claim_message(meta, v["beta"], v["n"]),
            "recipient": party.claim_message(meta, v["beta"], v["n"], chain, v["d_dep"]),
        }
    if vector.kind is MessageKind.CROSS_CLAIM:
        runtime = NvmRuntime(v["d_dep"], backend, {chain: ledger}, SigningKey(b"b" * 32))
        intent = CrossIntent(v["intent_id"], v["rho"], chain, v["a"], v["e"], v["v"], v["t_exp"])
        lock = WrappedLock(intent, "w" + v["a"], b"")
        return {
            "relay": relay.cross_claim_message(v["intent_id"], v["c_d"], v["beta_cd"], v["n"]),
            "ledger": runtime.expected_publics(lock, b"", v["c_d"], v["beta_cd"], v["n"]).message(),
            "recipient": party.claim_message(meta, v["beta_cd"], v["n"], chain, v["d_dep"], v["c_d"]),
        }
    sender = Sender("s", SigningKey(b"s" * 32), {chain: ledger}, backend)
    quote = Quote(v["intent_id"], b"", v["rho"], v["a"], v["v"], chain, 0, v["gamma_a"] or None, v["t_exp"], 0)
    runtime = NvmRuntime(v["d_dep"], backend, {chain: ledger}, SigningKey(b"b" * 32))
    cross = CrossIntent(v["intent_id"], v["rho"], chain, v["a"], 0, v["v"], v["t_exp"], v["gamma_a"] or None)
    return {
        "relay": relay.refund_message(v["intent_id"]),
        "ledger": ledger.refund_message(meta),
        "cross-runtime": runtime.refund_message(cross),
        "sender": sender.refund_message(quote),
    }


@pytest.mark.criterion(1, "encoding conformance")
def test_ac1_all_roles_reproduce_pinned_vectors():
    start = time.perf_counter()
    vectors = load_vectors(Path(__file__).parent / "data" / "conformance_vectors.jsonl")
    assert len(vectors) >= 10
    assert {v.kind for v in vectors} == {MessageKind.CLAIM, MessageKind.CROSS_CLAIM, MessageKind.REFUND}
    checked = 0
    for vector in vectors:
        for role, message in _role_messages(vector).items():
            assert message.hex() == vector.encoded_hex, (vector.kind, role)
            assert codec.message_digest(message).hex() == vector.digest_hex, (vector.kind, role)
            checked += 1
    elapsed = time.perf_counter() - start
    print(f"AC1: {len(vectors)} vectors, {checked} role encodings in {elapsed:.3f}s")
    assert elapsed < 1.0


@pytest.mark.criterion(1, "encoding conformance")
def test_ac1_vectors_match_independent_oracle():
    for vector in load_vectors(Path(__file__).parent / "data" / "conformance_vectors.jsonl"):
        assert oracle.encode(vector.kind.value, vector.values()).hex() == vector.encoded_hex


# AC2 ---------------------------------------------------------------------------

@pytest.mark.criterion(2, "lifecycle soundness")
def test_ac2_lifecycle_fuzz():
    start = time.perf_counter()
    r = lifecycle_fuzz(100_000, 100, seed=0)
    elapsed = time.perf_counter() - start
    print(f"AC2: {r.transactions} transactions over {r.intents} intents in {elapsed:.1f}s; "
          f"claimed={r.claimed} refunded={r.refunded}")
    assert r.transactions == 100_000 and r.intents >= 100
    assert r.bad_transitions == 0
    assert r.conservation_violations == 0
    assert r.non_exact_releases == 0
    assert r.nonce_reuse_accepted == 0
    assert r.surplus_released == 0
    assert r.claimed and r.refunded and r.rejected["claim:NonceReused"]
    assert elapsed < 60


# AC3 ---------------------------------------------------------------------------

@pytest.mark.criterion(3, "G1 enumeration resistance")
def test_ac3_g1():
    start = time.perf_counter()
    for name in ("random", "metadata"):
        r = games.game_g1(name, N_GAME, seed=101)
        report(f"G1 {name}", r)
        assert r.trials == N_GAME and r.advantage <= THRESHOLD
    leaked = games.game_g1("leaked-handle", N_GAME, seed=102)
    report("G1 leaked-handle", leaked)
    assert leaked.success_rate >= 0.99
    assert time.perf_counter() - start < 120


# AC4 ---------------------------------------------------------------------------

@pytest.mark.criterion(4, "G2 pre-claim unlinkability")
@pytest.mark.parametrize("name", PRE_CLAIM_ADVERSARIES)
def test_ac4_g2_matched(name):
    r = games.game_g2(name, N_GAME, seed=201, matched=True)
    report(f"G2 {name}", r)
    assert r.advantage <= THRESHOLD


@pytest.mark.criterion(4, "G2 pre-claim unlinkability")
def test_ac4_g2_unmatched_metadata_leaks():
    r = games.game_g2("metadata", N_GAME, seed=202, matched=False)
    report("G2-unmatched metadata", r)
    assert r.advantage > 0.4


# AC5 ---------------------------------------------------------------------------

@pytest.mark.criterion(5, "composition of quote and claim")
def test_ac5_lemma1():
    r = check_lemma1(1000, seed=301)
    assert r["trials"] == 1000 and r["honest_rate"] == 1.0
    assert set(r["substitutions"]) == {"mismatched-handle", "forged-rho", "mutated-intent-id"}
    for kind, row in r["substitutions"].items():
        print(f"AC5 {kind}: {row}")
        assert row["attempts"] == 1000 and row["succeeded"] == 0
        assert row["stopped_at_quote"] + row["stopped_at_claim"] == 1000 and row["stop_rate"] == 1.0


# AC6 ---------------------------------------------------------------------------

def _mutation_trials(malice, mode="verified", trials=100, seed=0):
    w = build_world(seed=seed, mode=mode, malice=malice)
    w.add_sender("alice", {"USDC": 10**9})
    w.add_recipient("bob@example.com")
    r = random.Random(seed)
    payments = []
    for _ in range(trials):
        payments.append(w.pay("alice", "bob@example.com", "USDC", r.randrange(1, 10_000)))
        w.clock.advance(7)  # stay under the quote rate limit
    return w, payments


@pytest.mark.criterion(6, "recipient-substitution detection")
@pytest.mark.parametrize("target", MUTATION_TARGETS)
def test_ac6_quote_mutation_aborts_before_funding(target):
    w, payments = _mutation_trials(Malice(mutate_quote=target), seed=600 + MUTATION_TARGETS.index(target))
    assert all(p.stage == "quote-rejected" for p in payments), {p.error for p in payments}
    assert w.ledger().fund_calls == 0 and w.gate_breaches == 0
    assert w.ledger().balance(w.senders["alice"].account, "USDC") == 10**9
    for p in payments:
        with pytest.raises(NotFound):
            w.ledger().read_intent(p.intent_id)


@pytest.mark.criterion(6, "recipient-substitution detection")
@pytest.mark.parametrize("target", REGISTRATION_TARGETS)
def test_ac6_registration_mutation_aborts_before_funding(target):
    w, payments = _mutation_trials(Malice(mutate_registration=target), seed=650 + REGISTRATION_TARGETS.index(target))
    assert all(p.stage == "tuple-rejected" for p in payments)
    assert w.ledger().fund_calls == 0 and w.gate_breaches == 0
    assert all(w.ledger().status_of(p.intent_id) is IntentStatus.CREATED for p in payments)


@pytest.mark.criterion(6, "recipient-substitution detection")
@pytest.mark.parametrize("malice", [Malice(mutate_quote="rho"), Malice(forge_rho=True)], ids=["mutated", "forged"])
def test_ac6_baseline_misses_rho_substitution(malice):
    w, payments = _mutation_trials(malice, mode="baseline", seed=690)
    assert all(p.stage == "notified" for p in payments)
    assert w.ledger().fund_calls == 100
    # the funds are now stranded: the rightful recipient cannot open the substituted rho
    with pytest.raises(ProofFailed) as err:
        w.claim(payments[0], account("bob"))
    assert err.value.clause == "c"


# AC7 ---------------------------------------------------------------------------

CLAIM_FIELDS = [f.name for f in dataclasses.fields(ClaimPublicInputs)]


def _mutate(publics, name):
    value = getattr(publics, name)
    if name == "dest_chain":
        return publics.replace(dest_chain="sol")
    if isinstance(value, int):
        return publics.replace(**{name: value + 1})
    if isinstance(value, str):
        return publics.replace(**{name: value + "x"})
    return publics.replace(**{name: bytes([value[0] ^ 1]) + value[1:]})


@pytest.mark.criterion(7, "front-running and replay")
def test_ac7_copied_claim_pays_dest(world):
    p = world.pay("alice", "bob@example.com", "USDC", 100)
    bob = world.recipients["bob@example.com"]
    publics, proof = bob.build_claim(world.intent(p), account("bob"), "eth", world.d_dep)
    pool = Mempool(world.ledger())
    tx = ClaimTx(p.intent_id, publics, proof, submitter="recipient")
    pool.submit(tx)
    pool.adversary_copy(tx)
    first, second = pool.mine()
    assert first[0].submitter == "adversary" and first[1].to == account("bob")
    assert isinstance(second[1], WrongStatus)
    assert world.ledger().balance(account("bob"), "USDC") == 100


@pytest.mark.criterion(7, "front-running and replay")
@pytest.mark.parametrize("name", CLAIM_FIELDS)
def test_ac7_single_field_mutation_fails(world, name):
    p = world.pay("alice", "bob@example.com", "USDC", 100)
    bob = world.recipients["bob@example.com"]
    publics, proof = bob.build_claim(world.intent(p), account("bob"), "eth", world.d_dep, nonce=5)
    mutated = _mutate(publics, name)
    assert mutated != publics
    with pytest.raises(LedgerError):
        world.ledger().claim(p.intent_id, mutated, proof)
    assert world.ledger().status_of(p.intent_id) is IntentStatus.FUNDED
    world.ledger().claim(p.intent_id, publics, proof)


@pytest.mark.criterion(7, "front-running and replay")
def test_ac7_same_nonce_replay(world):
    a = world.pay("alice", "bob@example.com", "USDC", 100)
    b = world.pay("alice", "bob@example.com", "USDC", 100)
    world.claim(a, account("bob"), nonce=9)
    with pytest.raises(NonceReused):
        world.claim(b, account("bob"), nonce=9)
    world.claim(b, account("bob"), nonce=10)


@pytest.mark.criterion(7, "front-running and replay")
def test_ac7_cross_deployment_replay():
    worlds = [build_world(seed=70, d_dep=d) for d in (b"deployment-A", b"deployment-B")]
    for w in worlds:
        w.add_sender("alice", {"USDC": 1000})
        w.add_recipient("bob@example.com")
    a, b = (w.pay("alice", "bob@example.com", "USDC", 100) for w in worlds)
    assert a.intent_id == b.intent_id
    publics, proof = worlds[0].recipients["bob@example.com"].build_claim(
        worlds[0].intent(a), account("bob"), "eth", worlds[0].d_dep, nonce=1)
    with pytest.raises(ProofInvalid):
        worlds[1].ledger().claim(b.intent_id, publics, proof)
    with pytest.raises(ProofInvalid):
        worlds[1].ledger().claim(b.intent_id, publics.replace(dep_tag=b"deployment-B"), proof)
    worlds[0].ledger().claim(a.intent_id, publics, proof)


@pytest.mark.criterion(7, "front-running and replay")
def test_ac7_same_chain_vs_cross_claim_replay():
    w = build_world(seed=71, chains=("eth", "sol"))
    w.add_sender("alice", {"ETH": 10_000})
    w.add_recipient("bob@example.com")
    bob = w.recipients["bob@example.com"]
    # a cross-claim proof replayed at the same-chain ledger
    local = w.pay("alice", "bob@example.com", "ETH", 100)
    cross_publics, cross_proof = bob.build_claim(w.intent(local), account("bob"), "eth", w.d_dep, 1, "sol")
    for publics in (cross_publics, cross_publics.replace(dest_chain=None)):
        with pytest.raises(ProofInvalid):
            w.ledger().claim(local.intent_id, publics, cross_proof)
    # a same-chain proof replayed at the cross-chain runtime
    wrapped = w.cross_pay("alice", "bob@example.com", "ETH", 100, "eth")
    it = wrapped.lock.intent
    meta = IntentMeta(it.intent_id, it.rho, it.asset, it.amount, it.epoch, it.expiry)
    same_publics, same_proof = bob.build_claim(meta, account("bob"), "eth", w.d_dep, 2)
    for publics in (same_publics, same_publics.replace(dest_chain="sol")):
        with pytest.raises(ProofInvalid):
            w.runtime.cross_claim(wrapped.intent_id, publics, same_proof)
    w.ledger().claim(local.intent_id, *bob.build_claim(w.intent(local), account("bob"), "eth", w.d_dep, 3))


# AC8 ---------------------------------------------------------------------------

@pytest.mark.criterion(8, "refund correctness")
def test_ac8_refund_releases_exactly_v(world):
    alice = world.senders["alice"].account
    ledger = world.ledger()
    p = world.pay("alice", "bob@example.com", "USDC", 100, fund_amount=160)
    assert ledger.balance(alice, "USDC") == 10_000 - 160
    meta = world.intent(p)
    assert meta.refund_commitment is not None and meta.funded_balance == 160
    world.clock.advance(3601)
    assert ledger.status_of(p.intent_id) is IntentStatus.EXPIRED
    receipt = world.refund(p)
    assert receipt.amount == 100 and receipt.to == meta.refund_dest == alice
    assert ledger.balance(alice, "USDC") == 10_000 - 60
    assert world.intent(p).funded_balance == 60  # surplus stays behind
    assert ledger.status_of(p.intent_id) is IntentStatus.REFUNDED
    assert ledger.conserved()


@pytest.mark.criterion(8, "refund correctness")
def test_ac8_missing_signature_leaves_expired(world):
    ledger = world.ledger()
    p = world.pay("alice", "bob@example.com", "USDC", 100, refund=False)
    world.clock.advance(3601)
    with pytest.raises(NoRefundPath):
        world.refund(p)
    with pytest.raises(NoRefundPath):
        ledger.refund(p.intent_id, None)
    assert ledger.status_of(p.intent_id) is IntentStatus.EXPIRED
    assert ledger.stored_status(p.intent_id) is IntentStatus.FUNDED
    assert world.intent(p).funded_balance == 100


@pytest.mark.criterion(8, "refund correctness")
def test_ac8_claim_never_releases_surplus(world):
    p = world.pay("alice", "bob@example.com", "USDC", 100, fund_amount=250)
    receipt = world.claim(p, account("bob"))
    assert receipt.amount == 100
    assert world.ledger().balance(account("bob"), "USDC") == 100
    assert world.intent(p).funded_balance == 150
    world.clock.advance(3601)
    with pytest.raises(WrongStatus):
        world.refund(p)


# AC9 ---------------------------------------------------------------------------

@pytest.mark.criterion(9, "cross-chain derivation and conservation")
def test_ac9_addresses_match_oracle():
    r = random.Random(9)
    for _ in range(1000):
        id_com = r.randbytes(32)
        assert derive_vm_address(VM.EVM, id_com).raw == oracle.sha256(b"evm:" + id_com)[12:32]
        assert derive_vm_address(VM.SVM, id_com).raw == oracle.prefixed_address(b"svm:", id_com)
        assert derive_vm_address(VM.BVM, id_com).raw == oracle.prefixed_address(b"bvm:", id_com)
        assert derive_vm_address(VM.NATIVE, id_com).raw == id_com


@pytest.mark.criterion(9, "cross-chain derivation and conservation")
def test_ac9_honest_bridge_conserves():
    r = cross_fuzz(1000, seed=900)
    print(f"AC9 honest: {r}")
    assert r.scenarios == 1000
    assert r.supply_violations == 0 and r.backing_violations == 0 and not r.flagged
    assert r.released_native and r.released_wrapped and r.refunded


@pytest.mark.criterion(9, "cross-chain derivation and conservation")
def test_ac9_faulty_bridge_flagged():
    r = cross_fuzz(1000, seed=901, honesty=Honesty.FAULTY, unbacked_rate=0.1)
    print(f"AC9 faulty: backing_violations={r.backing_violations} flagged={len(r.flagged)}")
    assert r.backing_violations > 0 and r.flagged


# AC10 --------------------------------------------------------------------------

@pytest.mark.criterion(10, "cross-device recovery")
def test_ac10_recovered_identity_claims_identical():
    w = build_world(seed=1000)
    w.add_sender("alice", {"USDC": 10**9})
    r = random.Random(1000)
    for i in range(100):
        identifier = f"user{i}-{r.randbytes(4).hex()}@example.com"
        passphrase = r.randbytes(12).hex()
        original = w.add_recipient(identifier, recover_root(identifier, passphrase, 64))
        p = w.pay("alice", identifier, "USDC", r.randrange(1, 1000))
        w.clock.advance(7)
        device2 = Recipient(identifier, recover_root(identifier, passphrase, 64), w.backend)
        dest, nonce = account(identifier), r.randrange(2**32)
        a_publics, a_proof = original.build_claim(w.intent(p), dest, "eth", w.d_dep, nonce)
        b_publics, b_proof = device2.build_claim(w.intent(p), dest, "eth", w.d_dep, nonce)
        assert b_publics.canonical() == a_publics.canonical()
        assert b_proof.to_bytes() == a_proof.to_bytes()
        assert w.ledger().claim(p.intent_id, b_publics, b_proof).to == dest
