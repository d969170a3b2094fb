"""Channel codes for the waveform-level path.

First-order Reed-Muller RM(1, m) protects the signaling field; a terminated
K=7 convolutional code with repetition and a CRC-16 stands in for the payload
turbo code. The latter is a soft-input reference codec, not a performance
match for a turbo code.
"""

from __future__ import annotations

import binascii
from typing import Protocol, Sequence

import numpy as np

from .core import InvalidInputError


# -- Reed-Muller RM(1, m) -----------------------------------------------------

def _rm_rows(m: int) -> np.ndarray:
    j = np.arange(1 << m)
    return np.array([(j >> (m - 1 - i)) & 1 for i in range(m)], dtype=np.uint8)


def rm_encode(info_bits: Sequence[int], m: int) -> np.ndarray:
    """Encode ``m + 1`` bits (constant term first) into a ``2**m``-bit codeword."""
    info = np.asarray(info_bits, dtype=np.uint8)
    if info.size != m + 1:
        raise InvalidInputError(f"RM(1,{m}) takes {m + 1} info bits, got {info.size}")
    lin = (info[1:, None] * _rm_rows(m)).sum(axis=0) & 1 if m else np.zeros(1, np.uint8)
    return (lin ^ info[0]).astype(np.uint8)


def fht(values: np.ndarray) -> np.ndarray:
    """Fast Walsh-Hadamard transform (natural/Sylvester order)."""
    a = np.array(values, dtype=float)
    n = a.size
    if n & (n - 1):
        raise InvalidInputError("length must be a power of two")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack((a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]), axis=1)
        h *= 2
    return a.reshape(n)


def _index_bits(a: int, m: int) -> list[int]:
    return [(a >> (m - 1 - i)) & 1 for i in range(m)]


def rm_soft_candidates(llrs: Sequence[float], m: int, count: int = 2,
                       constant: int | None = None) -> list[tuple[np.ndarray, float]]:
    """The ``count`` best codewords by correlation, as (info bits, metric), best first.

    LLRs are positive for a 0 bit. ``constant`` pins the first info bit, which
    restricts the search to an orthogonal subcode.
    """
    y = np.asarray(llrs, dtype=float)
    if y.size != 1 << m:
        raise InvalidInputError(f"RM(1,{m}) needs {1 << m} LLRs, got {y.size}")
    t = fht(y)
    if constant is None:
        score = np.abs(t)
    else:
        score = t if constant == 0 else -t
    order = np.argsort(-score, kind="stable")[:count]
    out = []
    for a in order:
        a0 = (0 if t[a] >= 0 else 1) if constant is None else constant
        out.append((np.array([a0] + _index_bits(int(a), m), dtype=np.uint8), float(score[a])))
    return out


def rm_soft_decode(llrs: Sequence[float], m: int) -> tuple[np.ndarray, float]:
    """Maximum-correlation decoding over all ``2**(m+1)`` codewords."""
    return rm_soft_candidates(llrs, m, 1)[0]


# -- soft codec interface ------------------------------------------------------

class SoftCodec(Protocol):
    code_id: str
    info_bits: int
    coded_bits: int

    def encode(self, info_bits: Sequence[int]) -> np.ndarray: ...

    def soft_decode(self, llrs: Sequence[float]) -> tuple[np.ndarray, bool]: ...


_K = 7
_GENS = (0o171, 0o133)
_NSTATES = 1 << (_K - 1)


def _parity(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    p = np.zeros_like(x)
    while np.any(x):
        p ^= x & 1
        x >>= 1
    return p


# branch outputs indexed by the 7-bit register (state << 1 | input)
_REG = np.arange(1 << _K)
_OUT = np.stack([_parity(_REG & g) for g in _GENS], axis=1).astype(np.int8)


def conv_encode(bits: Sequence[int]) -> np.ndarray:
    """Rate-1/2 K=7 (171, 133) encoder, terminated with six zero bits."""
    state = 0
    out = []
    for b in list(bits) + [0] * (_K - 1):
        reg = ((state << 1) | int(b)) & ((1 << _K) - 1)
        out.extend(_OUT[reg])
        state = reg & (_NSTATES - 1)
    return np.array(out, dtype=np.uint8)


def viterbi_decode(llrs: Sequence[float]) -> np.ndarray:
    """Soft Viterbi for :func:`conv_encode`; returns the bits without the tail."""
    y = np.asarray(llrs, dtype=float).reshape(-1, 2)
    steps = y.shape[0]
    ns = np.arange(_NSTATES)
    b = ns & 1
    p0 = ns >> 1
    p1 = p0 | (_NSTATES >> 1)
    sign = 1.0 - 2.0 * _OUT  # bit 0 -> +1
    reg0 = (p0 << 1) | b
    reg1 = (p1 << 1) | b
    pm = np.full(_NSTATES, -np.inf)
    pm[0] = 0.0
    choice = np.zeros((steps, _NSTATES), dtype=bool)
    for t in range(steps):
        c0 = pm[p0] + sign[reg0] @ y[t]
        c1 = pm[p1] + sign[reg1] @ y[t]
        choice[t] = c1 > c0
        pm = np.where(choice[t], c1, c0)
    state = 0
    bits = np.zeros(steps, dtype=np.uint8)
    for t in range(steps - 1, -1, -1):
        bits[t] = state & 1
        state = (state >> 1) | ((_NSTATES >> 1) if choice[t, state] else 0)
    return bits[:steps - (_K - 1)]


def _crc_bits(data_bits: np.ndarray) -> np.ndarray:
    crc = binascii.crc_hqx(np.packbits(data_bits).tobytes(), 0xFFFF)
    return np.array([(crc >> (15 - i)) & 1 for i in range(16)], dtype=np.uint8)


class ConvRepetitionCodec:
    """CRC-16 + terminated K=7 rate-1/2 convolutional code, repeated ``repetition`` times.

    Repeated copies are combined by LLR addition before Viterbi decoding; the
    CRC supplies the success flag.
    """

    def __init__(self, info_bits: int = 16, repetition: int = 8, code_id: str = "refconv-1/38"):
        if info_bits < 8 or info_bits % 8:
            raise InvalidInputError("info_bits must be a positive multiple of 8")
        self.code_id = code_id
        self.info_bits = info_bits
        self.repetition = repetition
        self.mother_bits = 2 * (info_bits + 16 + _K - 1)
        self.coded_bits = self.mother_bits * repetition

    def encode(self, info_bits: Sequence[int]) -> np.ndarray:
        data = np.asarray(info_bits, dtype=np.uint8)
        if data.size != self.info_bits:
            raise InvalidInputError(f"expected {self.info_bits} info bits, got {data.size}")
        mother = conv_encode(np.concatenate([data, _crc_bits(data)]))
        return np.tile(mother, self.repetition)

    def soft_decode(self, llrs: Sequence[float]) -> tuple[np.ndarray, bool]:
        y = np.asarray(llrs, dtype=float)
        if y.size != self.coded_bits:
            raise InvalidInputError(f"expected {self.coded_bits} LLRs, got {y.size}")
        combined = y.reshape(self.repetition, self.mother_bits).sum(axis=0)
        bits = viterbi_decode(combined)
        data, crc = bits[:self.info_bits], bits[self.info_bits:]
        return data, bool(np.array_equal(crc, _crc_bits(data)))
