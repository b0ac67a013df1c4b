"""Deterministic seed derivation.

All randomness in a session (key generation, model init, minibatch
shuffling, noise draws) flows from one base seed through labelled
derivations, so a client's epoch-level seed depends only on the base seed
and stable identifiers, never on which other clients happen to be present.
That independence is what makes retraining without a client reproduce the
counterfactual run bit for bit.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: int | str | bytes) -> int:
    """Fold the parts into a 64-bit seed via SHA-256."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, int):
            h.update(b"i")
            h.update(part.to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
        elif isinstance(part, bytes):
            h.update(b"b")
            h.update(len(part).to_bytes(4, "little"))
            h.update(part)
        else:
            raise TypeError(f"cannot derive seed from {type(part).__name__}")
    return int.from_bytes(h.digest()[:8], "little")
