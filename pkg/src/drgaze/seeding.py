"""Stable seed derivation so every sub-run is reproducible from one base seed."""

import hashlib

_MASK = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """Hash arbitrary labeled parts into a 63-bit seed.

    Uses sha256 over the string forms, never Python's ``hash()``, so the
    result is identical across processes and platforms.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK
