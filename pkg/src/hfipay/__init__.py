"""Identifier-routed payments with blinded claim bindings, simulated end to end."""

from .codec import MessageKind, auth_message, hash_domain, message_digest
from .crosschain import NvmRuntime, VM, derive_vm_address
from .identity import IdentityRoot, derive_commitment, derive_epoch_binding, recover_root
from .ledger import IntentStatus, Ledger
from .parties import Recipient, Sender
from .proofsys import ClaimPublicInputs, MockProofBackend
from .relay import Mode, Relay

__all__ = [
    "MessageKind", "auth_message", "hash_domain", "message_digest",
    "NvmRuntime", "VM", "derive_vm_address",
    "IdentityRoot", "derive_commitment", "derive_epoch_binding", "recover_root",
    "IntentStatus", "Ledger", "Recipient", "Sender", "ClaimPublicInputs", "MockProofBackend", "Mode", "Relay",
]
__version__ = "0.1.0"
