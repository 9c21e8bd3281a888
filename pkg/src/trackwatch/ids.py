"""Sortable run identifiers (timestamp-prefixed, Crockford base32)."""

from __future__ import annotations

import secrets
import time

_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def _base32(value: int, length: int) -> str:
    chars = []
    for _ in range(length):
        chars.append(_ALPHABET[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


def make_run_id(timestamp_ms: int | None = None) -> str:
    """26-character id: 48-bit millisecond timestamp + 80 random bits.

    Lexicographic order follows creation time.
    """
    ms = int(time.time() * 1000) if timestamp_ms is None else timestamp_ms
    return _base32(ms, 10) + _base32(secrets.randbits(80), 16)
