"""Deterministic seed derivation.

All randomness in a run flows from a single base seed. Child seeds are
derived by hashing the base seed together with a sequence of string/int
labels, so independent consumers (per image, per step, per batch item)
get decorrelated, reproducible streams regardless of execution order.
"""

from __future__ import annotations

import hashlib

_MASK63 = (1 << 63) - 1


def derive_seed(base: int, *labels: object) -> int:
    """Derive a child seed from ``base`` and a label path.

    The same (base, labels) pair always yields the same value; any change
    to either yields an unrelated one. Result fits in a signed 64-bit int
    so it can seed both numpy and torch generators.
    """
    h = hashlib.sha256()
    h.update(str(int(base)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little") & _MASK63
