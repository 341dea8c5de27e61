"""Labeled seed derivation.

All randomness in a run flows from one root seed; subsystems get their own
stream via a stable label so adding a consumer never shifts another's draws.
"""

import hashlib


def derive_seed(root_seed: int, label: str) -> int:
    """Derive a 32-bit child seed from (root_seed, label), stable across runs."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")
