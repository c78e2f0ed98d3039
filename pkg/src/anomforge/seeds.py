"""Stable seed derivation so every stage replays bit-for-bit."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Fold arbitrary parts (strings, ints, bytes) into a 63-bit seed.

    The mapping is stable across processes and platforms; it never
    depends on Python's randomized ``hash``.
    """
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            digest.update(b"b:")
            digest.update(part)
        else:
            digest.update(b"s:")
            digest.update(str(part).encode("utf-8"))
        digest.update(b"\x00")
    return int.from_bytes(digest.digest()[:8], "big") >> 1
