"""Sender, recipient and binding-issuer clients.

Each client performs the checks its role is responsible for.  In verified
mode a sender will not fund until the attestation, quote proof, freshness,
deposit address, quoted fields and the registered on-chain tuple all check
out; in baseline mode the rho check is skipped (the relay is trusted for it).
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import codec
from .codec import MessageKind
from .identity import (
    DOMAIN_ID,
    EpochBinding,
    IdentityRoot,
    derive_commitment,
    derive_epoch_binding,
)
from .ledger import IntentMeta, Ledger, NotFound, Receipt
from .proofsys import (
    Attestation,
    BindingIssuer,
    ClaimPublicInputs,
    ClaimWitness,
    ControlEvidence,
    Proof,
    ProofBackend,
    QuotePublicInputs,
    RefundAuthorization,
    RelationUnsatisfied,
    SigningKey,
    sign_refund,
    verify_attestation,
)
from .relay import Mode, Quote, QuoteRequest, normalize


class QuoteRejected(Exception):
    pass


class BadAttestation(QuoteRejected):
    pass


class BadQuoteProof(QuoteRejected):
    pass


class StaleQuote(QuoteRejected):
    pass


class AddressMismatch(QuoteRejected):
    pass


class FieldMismatch(QuoteRejected):
    pass


class ChecksNotPassed(Exception):
    pass


class EpochUnavailable(Exception):
    pass


class ProofFailed(Exception):
    def __init__(self, clause: str, detail: str = "") -> None:
        self.clause = clause
        super().__init__(f"claim relation clause {clause} fails{': ' + detail if detail else ''}")


# --------------------------------------------------------------------------
# issuer OTP loop


class MailService:
    """The identifier's mailbox.  Only the holder of the account credential can read it."""

    def __init__(self) -> None:
        self._credentials: dict[str, str] = {}
        self._inbox: dict[str, list[tuple[bytes, str]]] = {}

    def open_account(self, identifier: str) -> str:
        norm = normalize(identifier)
        credential = secrets.token_hex(16)
        self._credentials[norm] = credential
        self._inbox.setdefault(norm, [])
        return credential

    def deliver(self, normalized_id: str, challenge_id: bytes, code: str) -> None:
        self._inbox.setdefault(normalized_id, []).append((challenge_id, code))

    def fetch(self, identifier: str, credential: Optional[str]) -> list[tuple[bytes, str]]:
        norm = normalize(identifier)
        if credential is None or self._credentials.get(norm) != credential:
            raise PermissionError(f"cannot read mailbox of {norm!r}")
        return list(self._inbox.get(norm, []))


def issuer_run_otp(issuer: BindingIssuer, identifier: str, mail: MailService,
                   credential: Optional[str], now: int) -> Optional[ControlEvidence]:
    """Issuer sends its own OTP; whoever answers must read the identifier's mailbox.

    Returns ``None`` when the responding party cannot read the code, e.g. a
    relay acting without the recipient.
    """
    norm = normalize(identifier)
    challenge_id = issuer.start_challenge(norm, now)
    try:
        messages = mail.fetch(norm, credential)
    except PermissionError:
        return None
    for cid, code in messages:
        if cid == challenge_id:
            return ControlEvidence(norm, cid, code)
    return None


# --------------------------------------------------------------------------
# sender


@dataclass
class SenderSession:
    request: QuoteRequest
    mode: Mode
    quote: Optional[Quote] = None
    accepted: bool = False
    refund_auth: Optional[RefundAuthorization] = None
    tuple_confirmed: bool = False
    funding_receipt: Optional[Receipt] = None
    rejection: Optional[str] = None


class Sender:
    def __init__(self, name: str, key: SigningKey, ledgers: Mapping[str, Ledger], verifier: ProofBackend,
                 issuer_key: Optional[SigningKey] = None) -> None:
        self.name = name
        self.key = key
        self.account = key.address
        self.ledgers = ledgers
        self.verifier = verifier
        self.issuer_key = issuer_key
        for ledger in ledgers.values():
            ledger.register_policy(key)

    def new_session(self, identifier: str, asset: str, amount: int, chain: str, expiry: int,
                    mode: Mode = Mode.VERIFIED, refund: bool = True) -> SenderSession:
        request = QuoteRequest(identifier, asset, amount, chain, self.account if refund else None, expiry)
        return SenderSession(request, Mode(mode))

    def verify_quote(self, session: SenderSession, quote: Quote) -> None:
        """Run the mode's checks; raise a :class:`QuoteRejected` subclass on the first failure."""
        session.quote = quote
        session.accepted = False
        req = session.request
        try:
            ledger = self.ledgers[quote.chain]
        except KeyError:
            raise FieldMismatch(f"quote names unknown chain {quote.chain!r}") from None
        now = ledger.now
        try:
            if session.mode is Mode.VERIFIED:
                if quote.attestation is None or quote.key_commitment is None or quote.binding_validity is None:
                    raise BadAttestation("verified quote lacks K, T_bind or attestation")
                if self.issuer_key is None:
                    raise BadAttestation("no issuer key configured")
                expected = (normalize(req.identifier), quote.key_commitment, quote.epoch, quote.binding_validity)
                if not verify_attestation(quote.attestation, expected, now, self.issuer_key):
                    raise BadAttestation("attestation does not cover (identifier, K, e, T_bind)")
                publics = QuotePublicInputs(quote.rho, quote.key_commitment, quote.intent_id)
                if quote.quote_proof is None or not self.verifier.verify_quote(quote.quote_proof, publics):
                    raise BadQuoteProof("quote proof does not link rho to the attested K")
            if now > quote.quote_expiry:
                raise StaleQuote(f"quote expired at {quote.quote_expiry}")
            if ledger.derive_address(quote.intent_id) != quote.alpha:
                raise AddressMismatch("quoted deposit address is not the deterministic one")
            got = (quote.asset, quote.amount, quote.chain, quote.refund_dest, quote.expiry)
            want = (req.asset, req.amount, req.chain, req.refund_dest, req.expiry)
            if got != want:
                raise FieldMismatch(f"quote {got} differs from request {want}")
        except QuoteRejected as exc:
            session.rejection = type(exc).__name__
            raise
        session.accepted = True

    def refund_message(self, quote: Quote) -> bytes:
        return codec.auth_message(
            MessageKind.REFUND, d_dep=self.ledgers[quote.chain].d_dep, c=quote.chain, a=quote.asset,
            intent_id=quote.intent_id, rho=quote.rho, v=quote.amount, gamma_a=quote.refund_dest or b"",
            t_exp=quote.expiry,
        )

    def authorize_refund(self, session: SenderSession) -> Optional[RefundAuthorization]:
        if session.quote is None:
            raise ChecksNotPassed("no quote to authorize a refund for")
        if session.quote.refund_dest is None:
            session.refund_auth = None
            return None
        session.refund_auth = sign_refund(self.key, self.refund_message(session.quote))
        return session.refund_auth

    def check_registered_tuple(self, session: SenderSession) -> bool:
        quote = session.quote
        session.tuple_confirmed = False
        if quote is None:
            return False
        try:
            meta = self.ledgers[quote.chain].read_intent(quote.intent_id)
        except NotFound:
            session.rejection = "NotRegistered"
            return False
        h_ref = session.refund_auth.commitment if session.refund_auth else None
        expected = (quote.rho, quote.asset, quote.amount, quote.epoch, quote.expiry, quote.refund_dest, h_ref)
        session.tuple_confirmed = meta.committed_tuple() == expected
        if not session.tuple_confirmed:
            session.rejection = "RegisteredTupleMismatch"
        return session.tuple_confirmed

    def fund(self, session: SenderSession, amount: Optional[int] = None) -> Receipt:
        if not (session.accepted and session.tuple_confirmed):
            raise ChecksNotPassed(session.rejection or "quote not accepted or tuple unconfirmed")
        quote = session.quote
        assert quote is not None
        receipt = self.ledgers[quote.chain].fund(
            quote.intent_id, self.account, quote.asset, quote.amount if amount is None else amount
        )
        session.funding_receipt = receipt
        return receipt


# --------------------------------------------------------------------------
# recipient


@dataclass
class RecipientSession:
    intent_id: bytes
    dest: bytes
    nonce: int
    publics: Optional[ClaimPublicInputs] = None
    proof: Optional[Proof] = field(default=None, repr=False)


class Recipient:
    def __init__(self, identifier: str, root: IdentityRoot, prover: ProofBackend, domain_id: bytes = DOMAIN_ID,
                 nonce_start: int = 0) -> None:
        self.identifier = normalize(identifier)
        self.root = root
        self.prover = prover
        self.domain_id = domain_id
        self.id_com = derive_commitment(root, domain_id)
        self._next_nonce = nonce_start
        self.sessions: list[RecipientSession] = []

    def binding(self, epoch: int) -> EpochBinding:
        return derive_epoch_binding(self.root, epoch)

    def next_nonce(self) -> int:
        n = self._next_nonce
        self._next_nonce += 1
        return n

    def obtain_attestation(self, issuer: BindingIssuer, mail: MailService, credential: Optional[str],
                           epoch: int, valid_until: int, now: int) -> Attestation:
        evidence = issuer_run_otp(issuer, self.identifier, mail, credential, now)
        return issuer.issue_attestation(self.identifier, self.binding(epoch).key_commitment, epoch,
                                        valid_until, evidence, now)

    def claim_message(self, intent: IntentMeta, dest: bytes, nonce: int, chain: str, d_dep: bytes,
                      dest_chain: Optional[str] = None) -> bytes:
        return self._publics(intent, intent.epoch, dest, nonce, chain, d_dep, dest_chain).message()

    def _publics(self, intent, epoch, dest, nonce, chain, d_dep, dest_chain) -> ClaimPublicInputs:
        return ClaimPublicInputs(
            id_com=self.id_com, rho=intent.rho, asset=intent.asset, epoch=epoch, intent_id=intent.intent_id,
            amount=intent.amount, dest=dest, expiry=intent.expiry, nonce=nonce, dep_tag=d_dep, chain=chain,
            dest_chain=dest_chain,
        )

    def build_claim(self, intent: IntentMeta, dest: bytes, chain: str, d_dep: bytes,
                    nonce: Optional[int] = None, dest_chain: Optional[str] = None,
                    epoch_hint: Optional[int] = None) -> tuple[ClaimPublicInputs, Proof]:
        """Re-derive id_com and the epoch handle, form the claim message, prove it.

        The epoch comes from the on-chain intent; a transcript or notification
        hint is used only when the chain value is missing.
        """
        epoch = intent.epoch if intent.epoch is not None else epoch_hint
        if epoch is None or epoch < 0:
            raise EpochUnavailable("no epoch label for this intent")
        nonce = self.next_nonce() if nonce is None else nonce
        publics = self._publics(intent, epoch, dest, nonce, chain, d_dep, dest_chain)
        witness = ClaimWitness(self.root, self.binding(epoch).handle, self.domain_id)
        try:
            proof = self.prover.prove_claim(witness, publics)
        except RelationUnsatisfied as exc:
            raise ProofFailed(exc.clause, str(exc)) from exc
        self.sessions.append(RecipientSession(intent.intent_id, dest, nonce, publics, proof))
        return publics, proof
