"""Block FEC codecs (Hamming (7,4) and (12,8)) and PN9 data whitening.

Both codes are systematic: codeword = [data bits | parity bits]. The
(12,8) code is the (15,11) Hamming code shortened by its first three
data positions, which preserves single-error correction. The whitener
XORs the bit stream with the PN9 keystream (x^9 + x^5 + 1, register
seeded all-ones, restarted every frame), so whitening is an involution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecSpec:
    name: str  # none | hamming_7_4 | hamming_12_8
    n: int
    k: int


CODECS = {
    "none": CodecSpec("none", 1, 1),
    "hamming_7_4": CodecSpec("hamming_7_4", 7, 4),
    "hamming_12_8": CodecSpec("hamming_12_8", 12, 8),
}


@dataclass
class BitBlock:
    """Ordered 0/1 sequence with a role tag (info / coded / whitened)."""

    bits: np.ndarray
    role: str = "info"

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.size and not np.isin(self.bits, (0, 1)).all():
            raise FecError("BitBlock elements must be 0 or 1")

    def __len__(self):
        return self.bits.size


def _bits(x):
    return x.bits if isinstance(x, BitBlock) else np.asarray(x, dtype=np.uint8)


# Parity matrix P for (7,4): p = d @ P (mod 2), with
# p1 = d1^d2^d4, p2 = d1^d3^d4, p3 = d2^d3^d4.
_P74 = np.array(
    [
        [1, 1, 0],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ],
    dtype=np.uint8,
)


def _shortened_15_11_parity():
    # (15,11) Hamming: 4 parity checks, data positions are the non-powers
    # of two in 1..15. Row j of the full parity matrix is the binary
    # pattern of data position j; dropping the first 3 data rows shortens
    # the code to (12,8).
    data_positions = [p for p in range(1, 16) if p & (p - 1)]
    rows = [[(p >> b) & 1 for b in range(4)] for p in data_positions]
    return np.array(rows[3:], dtype=np.uint8)


_P128 = _shortened_15_11_parity()

_PARITY = {"hamming_7_4": _P74, "hamming_12_8": _P128}


def _syndrome_table(spec):
    """Map syndrome value -> codeword bit to flip (or -1 for no flip)."""
    P = _PARITY[spec.name]
    r = spec.n - spec.k
    # H = [P^T | I_r]; syndrome of a single error at position i is column i.
    H = np.concatenate([P.T, np.eye(r, dtype=np.uint8)], axis=1)
    table = np.full(2**r, -1, dtype=np.int64)
    weights = 1 << np.arange(r)
    for pos in range(spec.n):
        s = int((H[:, pos] * weights).sum())
        table[s] = pos
    return H, table


_DECODE = {name: _syndrome_table(spec) for name, spec in CODECS.items() if name != "none"}


def fec_encode(info, codec):
    """Systematic block encode; info length must divide into k-bit blocks."""
    bits = _bits(info)
    if codec.name == "none":
        return BitBlock(bits.copy(), role="coded")
    if bits.size % codec.k:
        raise FecError(f"info length {bits.size} not divisible by k={codec.k}")
    d = bits.reshape(-1, codec.k)
    p = (d @ _PARITY[codec.name]) % 2
    return BitBlock(np.concatenate([d, p], axis=1).reshape(-1), role="coded")


def fec_decode(coded, codec):
    """Syndrome decode; corrects one bit error per codeword.

    Returns (info BitBlock, number of codewords where a flip was applied).
    Two or more errors in one codeword may miscorrect, as the code allows.
    """
    bits = _bits(coded)
    if codec.name == "none":
        return BitBlock(bits.copy(), role="info"), 0
    if bits.size % codec.n:
        raise FecError(f"coded length {bits.size} not divisible by n={codec.n}")
    H, table = _DECODE[codec.name]
    words = bits.reshape(-1, codec.n).copy()
    r = codec.n - codec.k
    weights = 1 << np.arange(r)
    syn = ((words @ H.T) % 2) @ weights
    flip = table[syn]
    rows = np.nonzero(flip >= 0)[0]
    words[rows, flip[rows]] ^= 1
    return BitBlock(words[:, : codec.k].reshape(-1), role="info"), int(rows.size)


# ---------------------------------------------------------------------------
# PN9 whitening

_PN9_CACHE = np.zeros(0, dtype=np.uint8)


def pn9_keystream(length):
    """First `length` bits of the PN9 sequence (x^9+x^5+1, all-ones seed)."""
    global _PN9_CACHE
    if length > _PN9_CACHE.size:
        n = max(length, 2 * _PN9_CACHE.size, 1024)
        out = np.empty(n, dtype=np.uint8)
        state = 0x1FF
        for i in range(n):
            out[i] = state & 1
            fb = (state ^ (state >> 5)) & 1
            state = (state >> 1) | (fb << 8)
        _PN9_CACHE = out
    return _PN9_CACHE[:length].copy()


def whiten(block):
    """XOR with the PN9 keystream; the keystream restarts per call, so
    whiten(whiten(b)) == b. Dewhitening is the same operation."""
    bits = _bits(block)
    role = "whitened" if getattr(block, "role", None) != "whitened" else "coded"
    return BitBlock(bits ^ pn9_keystream(bits.size), role=role)
