"""Stable seed derivation so every stage is replayable from one run seed.

Python's builtin ``hash`` is salted per process, so all derived seeds go
through blake2b on a canonical string encoding of the parts.
"""

from __future__ import annotations

import hashlib
from typing import Any

_SEED_BITS = 63


def stable_digest(*parts: Any) -> str:
    """Hex digest of the canonical encoding of ``parts``."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, bytes):
            h.update(b"b:" + part)
        else:
            h.update(f"s:{part!r}".encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def derive_seed(base_seed: int, *parts: Any) -> int:
    """Fold (base_seed, parts) into a non-negative 63-bit seed."""
    digest = stable_digest(base_seed, *parts)
    return int(digest, 16) % (1 << _SEED_BITS)
