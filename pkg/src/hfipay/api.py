"""In-process JSON front end for the relay.

Requests and responses are JSON objects; byte fields are lowercase hex.
``RelayAPI.handle(endpoint, body)`` returns ``{"ok": true, ...}`` or
``{"ok": false, "error": <exception class>, "detail": <message>}``.
The endpoint schemas are listed in the README.
"""

from __future__ import annotations

import json
from typing import Callable, Optional

from .identity import EpochBinding
from .ledger import LedgerError, Receipt
from .proofsys import Attestation, ClaimPublicInputs, Proof
from .relay import Mode, QuoteRequest, Relay, RelayError


def _hex(raw: Optional[bytes]) -> Optional[str]:
    return None if raw is None else raw.hex()


def _bytes(value: Optional[str]) -> Optional[bytes]:
    return None if value is None else bytes.fromhex(value)


def attestation_to_json(att: Attestation) -> dict:
    return {
        "normalized_id": att.normalized_id,
        "key_commitment": att.key_commitment.hex(),
        "epoch": att.epoch,
        "valid_until": att.valid_until,
        "issuer_sig": att.issuer_sig.hex(),
    }


def attestation_from_json(obj: Optional[dict]) -> Optional[Attestation]:
    if obj is None:
        return None
    return Attestation(obj["normalized_id"], bytes.fromhex(obj["key_commitment"]), int(obj["epoch"]),
                       int(obj["valid_until"]), bytes.fromhex(obj["issuer_sig"]))


def publics_to_json(p: ClaimPublicInputs) -> dict:
    return {
        "id_com": p.id_com.hex(), "rho": p.rho.hex(), "asset": p.asset, "epoch": p.epoch,
        "intent_id": p.intent_id.hex(), "amount": p.amount, "dest": p.dest.hex(), "expiry": p.expiry,
        "nonce": p.nonce, "dep_tag": p.dep_tag.hex(), "chain": p.chain, "dest_chain": p.dest_chain,
    }


def publics_from_json(obj: dict) -> ClaimPublicInputs:
    return ClaimPublicInputs(
        id_com=bytes.fromhex(obj["id_com"]), rho=bytes.fromhex(obj["rho"]), asset=obj["asset"],
        epoch=int(obj["epoch"]), intent_id=bytes.fromhex(obj["intent_id"]), amount=int(obj["amount"]),
        dest=bytes.fromhex(obj["dest"]), expiry=int(obj["expiry"]), nonce=int(obj["nonce"]),
        dep_tag=bytes.fromhex(obj["dep_tag"]), chain=obj["chain"], dest_chain=obj.get("dest_chain"),
    )


def receipt_to_json(r: Receipt) -> dict:
    return {"tx": r.tx, "intent_id": r.intent_id.hex(), "status": r.status.value, "block": r.block,
            "amount": r.amount, "to": _hex(r.to)}


def _binding(body: dict) -> EpochBinding:
    return EpochBinding(int(body["epoch"]), bytes.fromhex(body["handle"]), bytes.fromhex(body["key_commitment"]))


class RelayAPI:
    def __init__(self, relay: Relay) -> None:
        self.relay = relay
        self._routes: dict[str, Callable[[dict], dict]] = {
            "register-sender": self._register_sender,
            "enroll": self._enroll,
            "quote": self._quote,
            "register": self._register,
            "notify-status": self._notify_status,
            "claim-relay": self._claim_relay,
            "refund-relay": self._refund_relay,
            "admin/gc": self._gc,
            "admin/rotate": self._rotate,
            "admin/dump": self._dump,
        }

    @property
    def endpoints(self) -> list[str]:
        return sorted(self._routes)

    def handle(self, endpoint: str, body: Optional[dict] = None) -> dict:
        route = self._routes.get(endpoint)
        if route is None:
            return {"ok": False, "error": "UnknownEndpoint", "detail": endpoint}
        try:
            out = route(body or {})
        except (RelayError, LedgerError, KeyError, ValueError) as exc:
            return {"ok": False, "error": type(exc).__name__, "detail": str(exc)}
        return {"ok": True, **out}

    def handle_json(self, text: str) -> str:
        """``{"endpoint": ..., "body": {...}}`` in, JSON response out."""
        request = json.loads(text)
        return json.dumps(self.handle(request["endpoint"], request.get("body")), sort_keys=True)

    # routes -----------------------------------------------------------------

    def _register_sender(self, body: dict) -> dict:
        return {"token": self.relay.register_sender(body["name"])}

    def _enroll(self, body: dict) -> dict:
        entry = self.relay.enroll(body["identifier"], bytes.fromhex(body["id_com"]), _binding(body),
                                  Mode(body.get("mode", "baseline")), attestation_from_json(body.get("attestation")))
        return {"normalized_id": entry.normalized_id, "epoch": entry.current.epoch, "mode": entry.mode.value}

    def _quote(self, body: dict) -> dict:
        request = QuoteRequest(body["identifier"], body["asset"], int(body["amount"]), body["chain"],
                               _bytes(body.get("refund_dest")), int(body["expiry"]))
        return {"quote": self.relay.create_quote(body.get("token"), request).to_json()}

    def _register(self, body: dict) -> dict:
        receipt = self.relay.register_and_confirm(bytes.fromhex(body["intent_id"]),
                                                  _bytes(body.get("refund_commitment")),
                                                  _bytes(body.get("escrow_sig")))
        return {"receipt": receipt_to_json(receipt)}

    def _notify_status(self, body: dict) -> dict:
        intent_id = bytes.fromhex(body["intent_id"])
        if body.get("fee_paid"):
            self.relay.pay_notification_fee(intent_id)
        status = self.relay.sync(intent_id)
        try:
            self.relay.notify(intent_id)
            notified = True
        except RelayError:
            notified = False
        return {"status": None if status is None else status.value, "notified": notified}

    def _claim_relay(self, body: dict) -> dict:
        receipt = self.relay.submit_claim_for(bytes.fromhex(body["intent_id"]), publics_from_json(body["publics"]),
                                              Proof.from_bytes(bytes.fromhex(body["proof"])))
        return {"receipt": receipt_to_json(receipt)}

    def _refund_relay(self, body: dict) -> dict:
        receipt = self.relay.submit_refund_for(bytes.fromhex(body["intent_id"]), _bytes(body.get("sig")))
        return {"receipt": receipt_to_json(receipt)}

    def _gc(self, body: dict) -> dict:
        return {"collected": self.relay.gc_unfunded(body.get("now"))}

    def _rotate(self, body: dict) -> dict:
        entry = self.relay.rotate_epoch(body["identifier"], _binding(body),
                                        attestation_from_json(body.get("attestation")))
        purged = self.relay.purge_settled(body["identifier"]) if body.get("purge") else []
        return {"epochs": [r.epoch for r in entry.epochs], "purged": purged}

    def _dump(self, body: dict) -> dict:
        return {"dump": self.relay.dump_compromise()}
