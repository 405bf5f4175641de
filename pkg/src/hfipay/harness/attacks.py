"""Composition check and attack demonstrations.

Every function returns a plain dict report so the CLI can print it as JSON
and the report builder can tabulate it.
"""

from __future__ import annotations

import dataclasses
import json
from collections import Counter
from typing import Iterable, Optional

from sklearn.metrics import adjusted_rand_score

from ..identity import blind_binding, derive_epoch_binding, random_root
from ..ledger import IntentStatus, LedgerError
from ..parties import ProofFailed
from ..proofsys import Relation
from ..relay import Malice, Mode
from .games import trial_seeds
from .world import DEFAULT_START, account, build_world

ASSET = "USDC"
# keeps a single sender under the relay's default quote rate limit
QUOTE_SPACING = 7


def _epoch_start(epoch_len: int) -> int:
    return (DEFAULT_START // epoch_len) * epoch_len + 60


# --------------------------------------------------------------------------
# composition: quote and claim witness the same handle


def _handle_hashes(world, intent_id: bytes) -> dict[Relation, bytes]:
    return {r.relation: r.handle_hash for r in world.backend.witness_log if r.intent_id == intent_id}


def _honest_flow(seed: int) -> bool:
    world = build_world(seed, mode=Mode.VERIFIED, record_witnesses=True)
    world.add_recipient("bob@example.com")
    world.add_sender("alice", {ASSET: 1000})
    payment = world.pay("alice", "bob@example.com", ASSET, 100)
    world.claim(payment, account("bob-wallet"))
    seen = _handle_hashes(world, payment.intent_id)
    return Relation.QUOTE in seen and seen.get(Relation.QUOTE) == seen.get(Relation.CLAIM)


def _substitution(seed: int, kind: str) -> Optional[str]:
    """Run one substitution attempt; return where it was stopped, or None if it went through."""
    malice = Malice()
    world = build_world(seed, mode=Mode.VERIFIED, record_witnesses=True)
    world.add_recipient("bob@example.com")
    if kind == "mismatched-handle":
        malice.substitute_handle = derive_epoch_binding(random_root(world.rng), world.epoch).handle
    elif kind == "forged-rho":
        malice.forge_rho = True
    world.relay.config.malice = malice
    world.add_sender("alice", {ASSET: 1000})
    payment = world.quote("alice", "bob@example.com", ASSET, 100)
    if kind == "mutated-intent-id":
        payment.quote = dataclasses.replace(payment.quote, intent_id=world.rng.randbytes(32))
    world.settle_quote(payment)
    if payment.stage == "quote-rejected":
        return "quote"
    if payment.stage not in ("funded", "notified"):
        return payment.stage
    try:
        world.claim(payment, account("bob-wallet"))
    except (ProofFailed, LedgerError):
        return "claim"
    return None


SUBSTITUTIONS = ("mismatched-handle", "forged-rho", "mutated-intent-id")


def check_lemma1(trials: int = 1000, seed: int = 0) -> dict:
    seeds = trial_seeds(seed, trials)
    equal = sum(_honest_flow(s) for s in seeds)
    out = {"trials": trials, "honest_equal_handles": equal, "honest_rate": equal / trials, "substitutions": {}}
    for i, kind in enumerate(SUBSTITUTIONS):
        stops = Counter(_substitution(s, kind) for s in trial_seeds(seed + i + 1, trials))
        stopped = stops["quote"] + stops["claim"]
        out["substitutions"][kind] = {
            "attempts": trials,
            "stopped_at_quote": stops["quote"],
            "stopped_at_claim": stops["claim"],
            "succeeded": trials - stopped,
            "stop_rate": stopped / trials,
        }
    return out


# --------------------------------------------------------------------------
# post-claim linkage


def attack_post_claim_linkage(n_recipients: int = 5, k_claims: int = 4, seed: int = 0) -> dict:
    """Cluster on-chain records by what a chain reader sees, score against the true recipients."""
    world = build_world(seed, mode=Mode.BASELINE)
    world.add_sender("alice", {ASSET: 10**9})
    names = [f"recipient{i}@example.com" for i in range(n_recipients)]
    for name in names:
        world.add_recipient(name)
    claimed, pending = [], []
    for j in range(k_claims):
        for i, name in enumerate(names):
            p = world.pay("alice", name, ASSET, 100 + j)
            world.claim(p, account(f"{name}-fresh-{j}"))
            world.clock.advance(QUOTE_SPACING)
            claimed.append((p.intent_id, i))
            q = world.pay("alice", name, ASSET, 100 + j)
            pending.append((q.intent_id, i))
            world.clock.advance(QUOTE_SPACING)
    ledger = world.ledger()
    events = ledger.observer_view()
    id_com_of = {r.intent_id: dict(r.logs)["id_com"] for r in events if r.event == "claimed"}
    dest_of = {r.intent_id: dict(r.logs)["dest"] for r in events if r.event == "claimed"}
    truth = [i for _, i in claimed]
    by_id_com = _labels(id_com_of[iid] for iid, _ in claimed)
    by_dest = _labels(dest_of[iid] for iid, _ in claimed)
    pre = {r.intent_id: r for r in ledger.observer_view(pre_claim=True) if r.event == "funded"}
    # best pre-claim feature available: bucket rho by its leading byte
    by_rho = [pre[iid].rho[0] % n_recipients for iid, _ in pending]
    return {
        "recipients": n_recipients,
        "claims_each": k_claims,
        "ari_id_com": float(adjusted_rand_score(truth, by_id_com)),
        "ari_dest_only": float(adjusted_rand_score(truth, by_dest)),
        "ari_pre_claim": float(adjusted_rand_score([i for _, i in pending], by_rho)),
        "distinct_dests": len(set(dest_of.values())),
    }


def _labels(values: Iterable[str]) -> list[int]:
    index: dict[str, int] = {}
    return [index.setdefault(v, len(index)) for v in values]


# --------------------------------------------------------------------------
# cross-sender linkability through K


def attack_cross_sender(epoch_lens: Iterable[int] = (3600, 86400, 604800), gap: int = 7200,
                        seed: int = 0) -> dict:
    """Two colluding senders compare the binding-key commitments in their verified quotes."""
    rows = []
    for epoch_len in epoch_lens:
        world = build_world(seed, mode=Mode.VERIFIED, epoch_len=epoch_len, start=_epoch_start(epoch_len))
        world.add_recipient("bob@example.com")
        world.add_sender("s1", {ASSET: 1000})
        world.add_sender("s2", {ASSET: 1000})
        p1 = world.pay("s1", "bob@example.com", ASSET, 10)
        e1 = world.epoch
        world.clock.advance(gap)
        if world.epoch != e1:
            world.rotate("bob@example.com")
        p2 = world.pay("s2", "bob@example.com", ASSET, 10)
        k1, k2 = p1.quote.key_commitment, p2.quote.key_commitment
        feed = json.dumps([r.to_json() for r in world.ledger().observer_view()])
        rows.append({
            "epoch_len": epoch_len,
            "gap": gap,
            "same_epoch": e1 == world.epoch,
            "k_equal": k1 == k2,
            "k_on_chain": k1.hex() in feed or k2.hex() in feed,
        })
    return {"rows": rows}


# --------------------------------------------------------------------------
# relay compromise


def attack_relay_compromise(n_recipients: int = 5, k_intents: int = 4, seed: int = 0,
                            purge_first: bool = False) -> dict:
    """A breached relay database links every on-chain intent of every retained epoch."""
    world = build_world(seed, mode=Mode.BASELINE, epoch_len=86400, start=_epoch_start(86400))
    world.add_sender("alice", {ASSET: 10**9})
    names = [f"victim{i}@example.com" for i in range(n_recipients)]
    for name in names:
        world.add_recipient(name)
    truth: dict[bytes, str] = {}
    for j in range(k_intents):
        for name in names:
            p = world.pay("alice", name, ASSET, 50)
            world.claim(p, account(f"{name}-{j}"))
            world.clock.advance(QUOTE_SPACING)
            truth[p.intent_id] = name
    if purge_first:
        world.clock.advance(86400)
        for name in names:
            world.rotate(name)
        world.clock.advance(world.relay.config.retention + 1)
        for name in names:
            world.relay.purge_settled(name)
    dump = world.relay.dump_compromise()
    handles = [(norm, bytes.fromhex(ep["handle"])) for norm, e in dump["directory"].items() for ep in e["epochs"]]
    linked = correct = 0
    for rec in world.ledger().observer_view(status=IntentStatus.CLAIMED):
        if rec.event != "claimed":
            continue
        owner = next((norm for norm, h in handles if blind_binding(h, rec.intent_id) == rec.rho), None)
        if owner is not None:
            linked += 1
            correct += owner == truth[rec.intent_id]
    return {
        "intents": len(truth),
        "linked": linked,
        "correct": correct,
        "link_rate": linked / len(truth),
        "purged": purge_first,
    }


ATTACKS = {
    "post-claim-linkage": attack_post_claim_linkage,
    "cross-sender": attack_cross_sender,
    "relay-compromise": attack_relay_compromise,
    "lemma1": check_lemma1,
}
