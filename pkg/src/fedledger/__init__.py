"""Ledger-certified federated learning with exact machine unlearning.

Clients train a shared model; every gradient publication, aggregation,
and unlearning action is recorded on an append-only hash-chained ledger
through a smart-contract state machine. Unlearning a client rolls the
model back to the checkpoint preceding that client's first contribution
and retrains without it, certified by ledger evidence.
"""

__version__ = "0.1.0"
