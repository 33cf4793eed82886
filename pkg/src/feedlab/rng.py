"""Derived random streams.

All randomness in the platform flows through named streams derived from the
experiment seed plus string labels (e.g. ``("assign", participant_id)``).
Derivation hashes the label path, so the stream a participant sees is a pure
function of (seed, labels) and cannot be reordered by concurrency or arrival
order. Streams for distinct label paths are independent for all practical
purposes (SHA-256 separation).
"""

from __future__ import annotations

import hashlib

import numpy as np

_DOMAIN = b"feedlab.rng.v1"


def _entropy_words(seed: int, labels: tuple[str, ...]) -> list[int]:
    h = hashlib.sha256(_DOMAIN)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for label in labels:
        raw = label.encode("utf-8")
        h.update(len(raw).to_bytes(4, "little"))
        h.update(raw)
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Return a generator for the stream named by (seed, *labels)."""
    words = _entropy_words(seed, labels)
    return np.random.default_rng(np.random.SeedSequence(words))


def derive_int(seed: int, *labels: str, bits: int = 63) -> int:
    """Deterministic nonnegative integer from the same label space.

    Used where a scalar seed must cross a process boundary (e.g. the seed
    field of an external-ranker request).
    """
    words = _entropy_words(seed, labels)
    return words[0] & ((1 << bits) - 1)


def base62(seed: int, *labels: str, length: int = 10) -> str:
    """Deterministic base62 string, used for generated slugs."""
    alphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
    rng = derive_rng(seed, *labels)
    return "".join(alphabet[i] for i in rng.integers(0, 62, size=length))
