"""JSON scenarios: parties, relay configuration, ordered steps, assertions.

Schema (all keys except ``steps`` optional)::

    {
      "name": "happy-path",
      "seed": 7,
      "mode": "verified" | "baseline",
      "epoch_len": 604800,
      "chains": ["eth"],
      "relay": {"malice": {"substitute_handle": true, "censor": true, ...}},
      "parties": {
        "senders": [{"name": "alice", "funds": {"USDC": 1000}}],
        "recipients": [{"identifier": "bob@example.com"}]
      },
      "steps": [{"action": "pay", "id": "p1", ...}, ...],
      "assertions": [{"payment": "p1", "stage": "notified"}, ...]
    }

Actions: ``pay``, ``claim``, ``refund``, ``advance``, ``gc``, ``rotate``,
``cross_pay``, ``cross_claim``, ``unwrap``, ``cross_refund``.  Account
fields (``dest``) are labels hashed to 20-byte addresses.  The report is a
deterministic JSON document: same seed and file, same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional, Union

from ..crosschain import Honesty
from ..identity import DEFAULT_EPOCH_LEN, derive_epoch_binding, random_root
from ..ledger import LedgerError
from ..parties import ProofFailed
from ..relay import Malice, Mode, RelayError
from .world import Payment, World, account, build_world


class ScenarioError(ValueError):
    pass


def _malice(cfg: dict) -> Malice:
    return Malice(
        forge_rho=bool(cfg.get("forge_rho", False)),
        mutate_quote=cfg.get("mutate_quote"),
        mutate_registration=cfg.get("mutate_registration"),
        censor=bool(cfg.get("censor", False)),
        over_notify=bool(cfg.get("over_notify", False)),
    )


class ScenarioRunner:
    def __init__(self, scenario: dict, seed: Optional[int] = None, mode: Optional[str] = None,
                 epoch_len: Optional[int] = None) -> None:
        if "steps" not in scenario:
            raise ScenarioError("scenario needs a 'steps' list")
        self.scenario = scenario
        self.seed = int(scenario.get("seed", 0) if seed is None else seed)
        self.mode = Mode(mode or scenario.get("mode", "verified"))
        self.epoch_len = int(epoch_len or scenario.get("epoch_len", DEFAULT_EPOCH_LEN))
        chains = scenario.get("chains", ["eth"])
        self.world: World = build_world(self.seed, chains=chains, mode=self.mode, epoch_len=self.epoch_len)
        malice_cfg = scenario.get("relay", {}).get("malice", {})
        malice = _malice(malice_cfg)
        if malice_cfg.get("substitute_handle"):
            # the handle of an accomplice identity the relay controls
            accomplice = random_root(self.world.rng)
            malice.substitute_handle = derive_epoch_binding(accomplice, self.world.epoch).handle
        self.world.relay.config.malice = malice
        self.payments: dict[str, Payment] = {}
        self.log: list[dict] = []

    # setup ------------------------------------------------------------------

    def _setup(self) -> None:
        parties = self.scenario.get("parties", {})
        for r in parties.get("recipients", []):
            self.world.add_recipient(r["identifier"])
        for s in parties.get("senders", []):
            self.world.add_sender(s["name"], s.get("funds", {}))

    # steps ------------------------------------------------------------------

    def _payment(self, step: dict) -> Payment:
        try:
            return self.payments[step["payment"]]
        except KeyError:
            raise ScenarioError(f"unknown payment {step.get('payment')!r}") from None

    def _do(self, step: dict) -> Any:
        w = self.world
        action = step["action"]
        if action == "pay":
            p = w.pay(step["sender"], step["to"], step.get("asset", "USDC"), int(step["amount"]), step.get("chain"),
                      int(step.get("ttl", 3600)), bool(step.get("refund", True)), step.get("fund_amount"))
            self.payments[step["id"]] = p
            return {"stage": p.stage, "error": p.error}
        if action == "claim":
            p = self._payment(step)
            submit = step.get("submit", "relay")
            try:
                r = w.claim(p, account(step["dest"]), via_relay=submit == "relay")
            except RelayError as exc:
                if not step.get("fallback_self", False):
                    raise
                r = w.claim(p, account(step["dest"]), via_relay=False)
                return {"status": r.status.value, "amount": r.amount, "relay_error": type(exc).__name__}
            return {"status": r.status.value, "amount": r.amount}
        if action == "refund":
            p = self._payment(step)
            r = w.refund(p, via_relay=step.get("submit", "relay") == "relay")
            return {"status": r.status.value, "amount": r.amount}
        if action == "advance":
            w.clock.advance(int(step["seconds"]))
            return {"now": w.now}
        if action == "gc":
            return {"collected": w.relay.gc_unfunded()}
        if action == "rotate":
            w.rotate(step["identifier"])
            return {"epoch": w.epoch}
        if action == "cross_pay":
            p = w.cross_pay(step["sender"], step["to"], step["asset"], int(step["amount"]), step["source_chain"],
                            Honesty(step.get("bridge_honesty", "honest")), int(step.get("ttl", 3600)),
                            bool(step.get("debit", True)))
            self.payments[step["id"]] = p
            return {"stage": p.stage, "error": p.error}
        if action == "cross_claim":
            p = self._payment(step)
            r = w.cross_claim(p, step["dest_chain"], account(step["dest"]))
            return {"status": r.status.value}
        if action == "unwrap":
            r = w.enable_crosschain().unwrap_release(self._payment(step).intent_id)
            return {"status": r.status.value, "asset": r.asset, "amount": r.amount}
        if action == "cross_refund":
            p = self._payment(step)
            sig = p.session.refund_auth.sig if p.session.refund_auth else None
            r = w.enable_crosschain().cross_refund(p.intent_id, sig)
            return {"status": r.status.value, "amount": r.amount}
        raise ScenarioError(f"unknown action {action!r}")

    # assertions -------------------------------------------------------------

    def _check(self, a: dict) -> tuple[bool, Any]:
        w = self.world
        if "payment" in a:
            p = self._payment(a)
            if "stage" in a:
                return p.stage == a["stage"], p.stage
            if "error" in a:
                return p.error == a["error"], p.error
            if "status" in a:
                if p.lock is not None:
                    got = w.enable_crosschain().locks[p.intent_id].status.value
                else:
                    got = w.intent(p).status.value
                return got == a["status"], got
        if "balance" in a:
            b = a["balance"]
            addr = account(b["account"]) if "account" in b else w.senders[b["sender"]].account
            got = w.ledger(b.get("chain")).balance(addr, b["asset"])
            return got == a["equals"], got
        if "step_error" in a:
            got = self.log[a["step"]].get("error")
            return got == a["step_error"], got
        if "conserved" in a:
            got = all(ledger.conserved() for ledger in w.ledgers.values())
            return got == a["conserved"], got
        if "gate_breaches" in a:
            return w.gate_breaches == a["gate_breaches"], w.gate_breaches
        if "wrapped_violations" in a:
            got = len(w.enable_crosschain().violations())
            want = a["wrapped_violations"]
            return (got > 0) if want == "some" else got == want, got
        raise ScenarioError(f"unknown assertion {a!r}")

    # run --------------------------------------------------------------------

    def run(self) -> dict:
        self._setup()
        for i, step in enumerate(self.scenario["steps"]):
            entry: dict[str, Any] = {"step": i, "action": step["action"]}
            try:
                entry["result"] = self._do(step)
                entry["ok"] = True
            except (LedgerError, RelayError, ProofFailed) as exc:
                entry["ok"] = False
                entry["error"] = type(exc).__name__
            self.log.append(entry)
        results = []
        for a in self.scenario.get("assertions", []):
            passed, got = self._check(a)
            results.append({"assertion": a, "passed": bool(passed), "observed": got})
        return {
            "name": self.scenario.get("name", "scenario"),
            "seed": self.seed,
            "mode": self.mode.value,
            "steps": self.log,
            "assertions": results,
            "passed": all(r["passed"] for r in results),
        }


def load_scenario(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def run_scenario(source: Union[str, Path, dict], seed: Optional[int] = None, mode: Optional[str] = None,
                 epoch_len: Optional[int] = None) -> dict:
    scenario = source if isinstance(source, dict) else load_scenario(source)
    return ScenarioRunner(scenario, seed, mode, epoch_len).run()


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
