"""Deterministic seed derivation.

One master seed reproduces an entire run: every component that needs
randomness derives its own seed from the master seed plus a string label,
via sha256. Python's built-in hash() is never used (it varies with
PYTHONHASHSEED and across machines).
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 63-bit child seed from a master seed and a label path.

    Labels are joined with ':' after str() conversion, so any hashable-ish
    identifiers (backend ids, video ids, indices) can be mixed in.
    """
    payload = str(int(master)) + ":" + ":".join(str(x) for x in labels)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF
