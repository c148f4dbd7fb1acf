"""Deterministic seed derivation.

Every random stream in the package is keyed by a tuple such as
``(master_seed, "phase1", outer_epoch, "noise", step)``.  The tuple is
hashed with BLAKE2b into a 63-bit integer, so streams are independent of
call order and sweep points can run in any order or in parallel.
"""
import hashlib


def derive_seed(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        token = f"{type(p).__name__}:{p}".encode()
        h.update(len(token).to_bytes(4, "big"))
        h.update(token)
    return int.from_bytes(h.digest(), "big") >> 1
