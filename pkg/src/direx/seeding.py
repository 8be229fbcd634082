"""Deterministic seeding: labeled bit streams derived from a 256-bit master seed.

Protocol seed randomness (the bits whose uniformity the security statements
condition on) and simulation randomness (Born-rule sampling inside simulated
devices) are kept as distinct labeled streams.  Every stream is derived as
SHA-256(master || label || counter), so identical configurations replay
bit-for-bit on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import SeedExhaustedError


def parse_master_seed(hex_seed: str) -> bytes:
    """Parse a hex master seed into exactly 32 bytes (left-padded)."""
    s = hex_seed.lower().removeprefix("0x")
    raw = bytes.fromhex(s if len(s) % 2 == 0 else "0" + s)
    if len(raw) > 32:
        raise ValueError("master seed longer than 256 bits")
    return raw.rjust(32, b"\x00")


class BitStream:
    """An endless (or capped) deterministic stream of uniform bits.

    Parameters
    ----------
    master : bytes
        32-byte master seed.
    label : str
        Stream label; distinct labels give independent streams.
    limit : int or None
        Optional cap on the number of bits that may be drawn.  Protocol
        harnesses set this to model a finite seed supply.
    """

    def __init__(self, master: bytes, label: str, limit: int | None = None):
        self._prefix = master + label.encode("utf-8")
        self._counter = 0
        self._buffer = 0
        self._buffered = 0
        self.consumed = 0
        self.limit = limit

    def _refill(self):
        block = hashlib.sha256(
            self._prefix + self._counter.to_bytes(8, "big")
        ).digest()
        self._counter += 1
        self._buffer = (self._buffer << 256) | int.from_bytes(block, "big")
        self._buffered += 256

    def take(self, k: int) -> int:
        """Draw k bits and return them as an integer (big-endian)."""
        if k < 0:
            raise ValueError("cannot draw a negative number of bits")
        if self.limit is not None and self.consumed + k > self.limit:
            raise SeedExhaustedError(
                f"seed stream exhausted after {self.consumed} bits",
                bits_needed=self.consumed + k - self.limit,
            )
        while self._buffered < k:
            self._refill()
        self._buffered -= k
        out = self._buffer >> self._buffered
        self._buffer &= (1 << self._buffered) - 1
        self.consumed += k
        return out

    def take_bit(self) -> int:
        return self.take(1)

    def take_bits(self, k: int) -> list[int]:
        v = self.take(k)
        return [(v >> (k - 1 - i)) & 1 for i in range(k)]


def substream(master: bytes, label: str, index: int | None = None,
              limit: int | None = None) -> BitStream:
    """Derive a labeled (and optionally indexed) bit stream."""
    full = label if index is None else f"{label}/{index}"
    return BitStream(master, full, limit=limit)


def numpy_rng(master: bytes, label: str, index: int | None = None) -> np.random.Generator:
    """A numpy Generator seeded deterministically from (master, label, index).

    Used for simulation-side randomness (device Born sampling, noise
    injection); never for protocol seed bits.
    """
    full = label if index is None else f"{label}/{index}"
    digest = hashlib.sha256(master + b"rng:" + full.encode("utf-8")).digest()
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(digest, "big")))
