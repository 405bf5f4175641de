"""Enumeration (G1) and pre-claim unlinkability (G2) games.

Each trial builds an isolated world from its own seed (a stream split of the
master seed), runs the real quote/register/fund flow, and hands the adversary
only the challenge view the game grants.  Adversaries are plug-ins: anything
with a ``name``, a ``grants`` set and ``guess_g1`` / ``guess_g2``.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from ..identity import blind_binding
from ..relay import Mode
from .world import build_world

ASSET = "USDC"
# Default public-metadata distribution: uniform over these amount buckets, fixed asset and ttl.
AMOUNT_BUCKETS = (10, 25, 50, 100, 250, 500, 1000, 2500)
TTL = 6 * 3600
TARGET = "target@example.com"
OTHER = "other@example.com"


def trial_seeds(seed: int, n: int) -> list[int]:
    """Independent 64-bit seeds, one per trial, split from the master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


@dataclass(frozen=True)
class Metadata:
    asset: str
    amount: int
    ttl: int
    chain: str

    @property
    def bucket(self) -> int:
        return AMOUNT_BUCKETS.index(self.amount)


@dataclass(frozen=True)
class PreClaimRecord:
    intent_id: bytes
    alpha: bytes
    rho: bytes
    metadata: Metadata


@dataclass(frozen=True)
class G1View:
    target: str
    epoch: int
    record: PreClaimRecord
    compromise: Optional[dict] = field(default=None, repr=False)
    bit: Optional[int] = None


@dataclass(frozen=True)
class G2View:
    epoch: int
    first: PreClaimRecord
    second: PreClaimRecord
    compromise: Optional[dict] = field(default=None, repr=False)
    bit: Optional[int] = None


class Adversary(Protocol):
    name: str
    grants: frozenset[str]

    def guess_g1(self, view: G1View, rng: random.Random) -> int: ...

    def guess_g2(self, view: G2View, rng: random.Random) -> int: ...


@dataclass
class GameResult:
    game: str
    adversary: str
    trials: int
    successes: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    @property
    def advantage(self) -> float:
        return abs(self.success_rate - 0.5)

    @property
    def ci_half_width(self) -> float:
        p = self.success_rate
        return 1.96 * math.sqrt(p * (1 - p) / self.trials)

    def to_json(self) -> dict:
        return {
            "game": self.game,
            "adversary": self.adversary,
            "trials": self.trials,
            "successes": self.successes,
            "success_rate": round(self.success_rate, 6),
            "advantage": round(self.advantage, 6),
            "ci_half_width": round(self.ci_half_width, 6),
        }


# --------------------------------------------------------------------------
# built-in adversaries


def _popcount_xor(a: bytes, b: bytes) -> int:
    return bin(int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).count("1")


def _target_bucket(identifier: str) -> int:
    return sum(identifier.encode("utf-8")) % len(AMOUNT_BUCKETS)


class RandomAdversary:
    name = "random"
    grants = frozenset()

    def guess_g1(self, view, rng):
        return rng.getrandbits(1)

    def guess_g2(self, view, rng):
        return rng.getrandbits(1)


class MetadataAdversary:
    """Uses only public metadata: the target's habitual bucket in G1, bucket equality in G2."""

    name = "metadata"
    grants = frozenset()

    def guess_g1(self, view, rng):
        return int(view.record.metadata.bucket == _target_bucket(view.target))

    def guess_g2(self, view, rng):
        return int(view.first.metadata == view.second.metadata)


class EqualityAdversary:
    """Looks for shared bytes between the two alpha / rho values."""

    name = "equality"
    grants = frozenset()

    def guess_g1(self, view, rng):
        tag = _target_tag(view.target)
        return int(view.record.rho[:1] == tag[:1])

    def guess_g2(self, view, rng):
        a, b = view.first, view.second
        return int(a.rho[:1] == b.rho[:1] or a.alpha[:1] == b.alpha[:1])


class ByteCorrelationAdversary:
    """Guesses 'same' when the Hamming distance is below the random-string mean."""

    name = "byte-correlation"
    grants = frozenset()

    def guess_g1(self, view, rng):
        return int(_popcount_xor(view.record.rho, _target_tag(view.target)) < 128)

    def guess_g2(self, view, rng):
        a, b = view.first, view.second
        return int(_popcount_xor(a.rho, b.rho) + _popcount_xor(a.alpha[:20], b.alpha[:20]) < 208)


class LeakedHandleAdversary:
    """Reads the breached relay database and recomputes rho from the stored handles."""

    name = "leaked-handle"
    grants = frozenset({"compromise"})

    @staticmethod
    def _handles(dump: dict, identifier: Optional[str] = None) -> list[bytes]:
        entries = dump["directory"].items()
        return [bytes.fromhex(ep["handle"]) for norm, e in entries if identifier in (None, norm)
                for ep in e["epochs"]]

    def guess_g1(self, view, rng):
        rec = view.record
        return int(any(blind_binding(h, rec.intent_id) == rec.rho for h in self._handles(view.compromise, view.target)))

    def guess_g2(self, view, rng):
        a, b = view.first, view.second
        for h in self._handles(view.compromise):
            if blind_binding(h, a.intent_id) == a.rho:
                return int(blind_binding(h, b.intent_id) == b.rho)
        return rng.getrandbits(1)


class OmniscientAdversary:
    """Calibration: handed b directly."""

    name = "omniscient"
    grants = frozenset({"bit"})

    def guess_g1(self, view, rng):
        return view.bit

    def guess_g2(self, view, rng):
        return view.bit


def _target_tag(identifier: str) -> bytes:
    return hashlib.sha256(identifier.encode("utf-8")).digest()


ADVERSARIES: dict[str, Callable[[], Adversary]] = {
    a.name: a for a in (RandomAdversary, MetadataAdversary, EqualityAdversary, ByteCorrelationAdversary,
                        LeakedHandleAdversary, OmniscientAdversary)
}


def get_adversary(name: str) -> Adversary:
    try:
        return ADVERSARIES[name]()
    except KeyError:
        raise KeyError(f"unknown adversary {name!r}; choose from {sorted(ADVERSARIES)}") from None


# --------------------------------------------------------------------------
# challengers


def _record(world, payment, metadata: Metadata) -> PreClaimRecord:
    ledger = world.ledger(metadata.chain)
    for rec in ledger.observer_view(pre_claim=True):
        if rec.intent_id == payment.intent_id and rec.event == "funded":
            return PreClaimRecord(rec.intent_id, rec.alpha, rec.rho, metadata)
    raise RuntimeError(f"challenge intent was not funded: {payment.stage} {payment.error}")


def _metadata(bucket: int, chain: str) -> Metadata:
    return Metadata(ASSET, AMOUNT_BUCKETS[bucket], TTL, chain)


def _world(seed: int, mode: Mode, epoch_len: Optional[int]):
    kwargs = {} if epoch_len is None else {"epoch_len": epoch_len}
    world = build_world(seed, mode=mode, **kwargs)
    world.add_sender("sender", {ASSET: 10 * max(AMOUNT_BUCKETS)})
    return world


def g1_trial(seed: int, adversary: Adversary, mode: Mode = Mode.BASELINE,
             epoch_len: Optional[int] = None) -> tuple[int, int]:
    """One G1 challenge; returns (b, guess)."""
    world = _world(seed, mode, epoch_len)
    world.add_recipient(TARGET)
    world.add_recipient(OTHER)
    b = world.rng.getrandbits(1)
    m = _metadata(world.rng.randrange(len(AMOUNT_BUCKETS)), world.ledger().chain)
    payment = world.pay("sender", TARGET if b else OTHER, m.asset, m.amount, m.chain, m.ttl)
    record = _record(world, payment, m)
    view = G1View(
        TARGET, world.epoch, record,
        compromise=world.relay.dump_compromise() if "compromise" in adversary.grants else None,
        bit=b if "bit" in adversary.grants else None,
    )
    guess = adversary.guess_g1(view, random.Random(seed ^ 0x5EED))
    return b, int(guess)


def g2_trial(seed: int, adversary: Adversary, matched: bool = True, mode: Mode = Mode.BASELINE,
             epoch_len: Optional[int] = None) -> tuple[int, int]:
    """One G2 challenge; returns (b, guess).

    With ``matched`` metadata each intent's bucket is drawn independently of
    the recipient.  Unmatched, each recipient pays out of a habitual bucket.
    """
    world = _world(seed, mode, epoch_len)
    r1, r2 = "first@example.com", "second@example.com"
    world.add_recipient(r1)
    world.add_recipient(r2)
    n = len(AMOUNT_BUCKETS)
    habitual = {r1: world.rng.randrange(n), r2: world.rng.randrange(n)}
    b = world.rng.getrandbits(1)
    second = r1 if b else r2
    chain = world.ledger().chain
    if matched:
        m1, m2 = _metadata(world.rng.randrange(n), chain), _metadata(world.rng.randrange(n), chain)
    else:
        m1, m2 = _metadata(habitual[r1], chain), _metadata(habitual[second], chain)
    p1 = world.pay("sender", r1, m1.asset, m1.amount, chain, m1.ttl)
    p2 = world.pay("sender", second, m2.asset, m2.amount, chain, m2.ttl)
    view = G2View(
        world.epoch, _record(world, p1, m1), _record(world, p2, m2),
        compromise=world.relay.dump_compromise() if "compromise" in adversary.grants else None,
        bit=b if "bit" in adversary.grants else None,
    )
    guess = adversary.guess_g2(view, random.Random(seed ^ 0x5EED))
    return b, int(guess)


def _play(game: str, trial, adversary, trials: int, seed: int, **kwargs) -> GameResult:
    if isinstance(adversary, str):
        adversary = get_adversary(adversary)
    successes = 0
    for s in trial_seeds(seed, trials):
        b, guess = trial(s, adversary, **kwargs)
        successes += int(b == guess)
    return GameResult(game, adversary.name, trials, successes)


def game_g1(adversary, trials: int = 10_000, seed: int = 0, mode: Mode = Mode.BASELINE,
            epoch_len: Optional[int] = None) -> GameResult:
    return _play("g1", g1_trial, adversary, trials, seed, mode=Mode(mode), epoch_len=epoch_len)


def game_g2(adversary, trials: int = 10_000, seed: int = 0, matched: bool = True, mode: Mode = Mode.BASELINE,
            epoch_len: Optional[int] = None) -> GameResult:
    name = "g2" if matched else "g2-unmatched"
    return _play(name, g2_trial, adversary, trials, seed, matched=matched, mode=Mode(mode), epoch_len=epoch_len)
