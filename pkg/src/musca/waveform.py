"""Complex-baseband validation path: QPSK, AWGN, superposition and literal SIC.

One complex sample per symbol, unit symbol energy per user, slot-synchronous
bursts. Bursts are laid out as preamble | signaling | payload. The receiver
reuses the abstract decoder's bookkeeping and its genie activity knowledge
(which users occupy which slot) to gate decode attempts; all decoding itself
runs on the residual waveform.

Waveform dump layout: a ``(num_slots, burst_symbols)`` array of complex64 in
C order, written as little-endian float32 pairs (I then Q), no header.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .coding import ConvRepetitionCodec, SoftCodec, rm_encode, rm_soft_candidates
from .core import ConfigurationError, FrameConfig, InvalidInputError
from .protocols import (TransmissionPlan, decode_signaling, encode_signaling, interleave_indices,
                        payload_partition, signaling_length)
from .receiver import (DecoderState, SicOutcome, TraceEvent, cancel_user, finish_outcome,
                       select_next_user)

_SQRT_HALF = math.sqrt(0.5)
SIBLING_MIN_CORRELATION = 0.5
DEFAULT_MAX_CFO = 0.1


# -- sample-level primitives ---------------------------------------------------

def qpsk_modulate(bits: Sequence[int]) -> np.ndarray:
    """Gray QPSK, unit energy: first bit of a pair on I, second on Q, 0 -> +."""
    b = np.asarray(bits, dtype=np.int8)
    if b.size % 2:
        raise InvalidInputError(f"QPSK needs an even bit count, got {b.size}")
    b = b.reshape(-1, 2)
    return _SQRT_HALF * ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1]))


def qpsk_soft_demod(symbols: Sequence[complex], noise_variance: float) -> np.ndarray:
    """Exact per-bit LLRs (positive for 0); ``noise_variance`` is the complex N0."""
    if not noise_variance > 0:
        raise InvalidInputError("noise_variance must be > 0")
    y = np.asarray(symbols, dtype=complex)
    scale = 2.0 * math.sqrt(2.0) / noise_variance
    return np.stack((y.real, y.imag), axis=-1).reshape(-1) * scale


def noise_variance(es_n0_db: float) -> float:
    if math.isnan(es_n0_db):
        raise InvalidInputError("es_n0_db is NaN")
    return 0.0 if math.isinf(es_n0_db) and es_n0_db > 0 else 10.0 ** (-es_n0_db / 10.0)


def awgn(signal: np.ndarray, es_n0_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular Gaussian noise of variance N0 = 1/10^(Es/N0 / 10) (Es = 1)."""
    x = np.asarray(signal, dtype=complex)
    n0 = noise_variance(es_n0_db)
    if n0 == 0.0:
        return x.copy()
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + math.sqrt(n0 / 2.0) * noise


def superpose(signals: Iterable[np.ndarray]) -> np.ndarray:
    signals = [np.asarray(s, dtype=complex) for s in signals]
    if not signals:
        raise InvalidInputError("nothing to superpose")
    if len({s.shape for s in signals}) != 1:
        raise InvalidInputError("signals differ in length")
    return np.sum(signals, axis=0)


def subtract_reconstructed(received: np.ndarray, reconstructed: np.ndarray) -> np.ndarray:
    r = np.asarray(received, dtype=complex)
    x = np.asarray(reconstructed, dtype=complex)
    if r.shape != x.shape:
        raise InvalidInputError(f"length mismatch: {r.shape} vs {x.shape}")
    return r - x


# -- burst layout ------------------------------------------------------------

@dataclass(frozen=True)
class SignalLayout:
    """Frame geometry for homogeneous ``n_b``-burst users carrying one code."""

    num_slots: int
    n_b: int
    payload_symbols: int
    rm_m: int = 6
    preamble_symbols: int = 8

    @property
    def signaling_bits(self) -> int:
        return signaling_length(self.n_b, self.num_slots)

    @property
    def segments(self) -> int:
        # constant term pinned to 0: m payload bits per RM(1, m) word
        return -(-self.signaling_bits // self.rm_m)

    @property
    def signaling_symbols(self) -> int:
        return self.segments * (1 << self.rm_m) // 2

    @property
    def config(self) -> FrameConfig:
        return FrameConfig(self.num_slots, self.payload_symbols, self.signaling_symbols,
                           self.preamble_symbols)

    def parts(self) -> tuple[slice, slice, slice]:
        p, s = self.preamble_symbols, self.signaling_symbols
        return slice(0, p), slice(p, p + s), slice(p + s, p + s + self.payload_symbols)


def signal_layout(num_slots: int, n_b: int, codec: SoftCodec, rm_m: int = 6,
                  preamble_symbols: int = 8) -> SignalLayout:
    if codec.coded_bits % 2:
        raise ConfigurationError("coded length must fill whole QPSK symbols")
    if rm_m < 1:
        raise ConfigurationError("rm_m must be >= 1")
    return SignalLayout(num_slots, n_b, -(-codec.coded_bits // 2 // n_b), rm_m, preamble_symbols)


def preamble(length: int) -> np.ndarray:
    """Fixed known sequence shared by all users (unused: synchronisation is ideal)."""
    bits = np.random.default_rng(0x5EED).integers(0, 2, 2 * length)
    return qpsk_modulate(bits)


def signaling_symbols(slots: Sequence[int], fragment: int, layout: SignalLayout) -> np.ndarray:
    ptrs = list(slots[:fragment]) + list(slots[fragment + 1:])
    bits = encode_signaling(ptrs, fragment, layout.num_slots)
    k = layout.rm_m
    bits = bits + [0] * (layout.segments * k - len(bits))
    code = np.concatenate([rm_encode([0] + bits[i * k:(i + 1) * k], layout.rm_m)
                           for i in range(layout.segments)])
    return qpsk_modulate(code)


def payload_symbols(data_bits: Sequence[int], codec: SoftCodec, layout: SignalLayout) -> np.ndarray:
    """Encoded, interleaved, QPSK-mapped payload split into ``n_b`` rows (zero padded)."""
    coded = codec.encode(data_bits)
    perm = interleave_indices(codec.coded_bits, codec.code_id)
    sym = qpsk_modulate(coded[perm])
    out = np.zeros(layout.n_b * layout.payload_symbols, dtype=complex)
    out[:sym.size] = sym
    return out.reshape(layout.n_b, layout.payload_symbols)


@dataclass
class UserWaveform:
    user_id: int
    slots: tuple[int, ...]
    data_bits: np.ndarray
    signaling: list[np.ndarray]
    payload: np.ndarray
    phases: np.ndarray  # carrier phase at the start of each burst, radians
    cfo: float = 0.0     # carrier frequency offset, cycles per symbol

    def rotation(self, j: int, length: int) -> np.ndarray:
        return np.exp(1j * (self.phases[j] + 2 * math.pi * self.cfo * np.arange(length)))

    def burst(self, j: int, layout: SignalLayout) -> np.ndarray:
        x = np.concatenate([preamble(layout.preamble_symbols), self.signaling[j], self.payload[j]])
        return x * self.rotation(j, x.size)


def user_waveform(plan: TransmissionPlan, data_bits: Sequence[int], codec: SoftCodec,
                  layout: SignalLayout, phases: Sequence[float] | None = None,
                  cfo: float = 0.0) -> UserWaveform:
    slots = plan.slots
    sig = [signaling_symbols(slots, j, layout) for j in range(len(slots))]
    ph = np.zeros(len(slots)) if phases is None else np.asarray(phases, dtype=float)
    if ph.shape != (len(slots),):
        raise InvalidInputError("one phase per burst required")
    return UserWaveform(plan.user_id, slots, np.asarray(data_bits, dtype=np.uint8), sig,
                        payload_symbols(data_bits, codec, layout), ph, float(cfo))


def transmit_frame(users: Iterable[UserWaveform], layout: SignalLayout) -> np.ndarray:
    """Noiseless received frame, one row per slot."""
    frame = np.zeros((layout.num_slots, layout.config.burst_symbols), dtype=complex)
    for w in users:
        for j, s in enumerate(w.slots):
            frame[s] = superpose([frame[s], w.burst(j, layout)])
    return frame


def dump_waveform(frame: np.ndarray, path: str | Path) -> None:
    np.asarray(frame, dtype="<c8").tofile(path)


def load_waveform(path: str | Path, burst_symbols: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<c8")
    if data.size % burst_symbols:
        raise InvalidInputError(f"{path}: size is not a multiple of {burst_symbols} samples")
    return data.reshape(-1, burst_symbols)


# -- receiver ------------------------------------------------------------------

@dataclass
class SignalFrameResult:
    outcome: SicOutcome
    received: np.ndarray
    residual: np.ndarray
    users: dict[int, UserWaveform]
    phantoms: int = 0
    undetected_errors: int = 0


class _SignalReceiver:
    def __init__(self, state: DecoderState, layout: SignalLayout, codec: SoftCodec,
                 received: np.ndarray, es_n0_db: float, users: Mapping[int, UserWaveform]):
        self.state = state
        # perfect channel knowledge: the carrier rotation of every burst
        n = layout.config.burst_symbols
        self.rot = {(u, s): w.rotation(j, n) for u, w in users.items() for j, s in enumerate(w.slots)}
        self.layout = layout
        self.codec = codec
        self.residual = received.copy()
        self.n0 = noise_variance(es_n0_db)
        self.pre, self.sig, self.pay = layout.parts()
        self.perm = interleave_indices(codec.coded_bits, codec.code_id)
        self.decoded_bits: dict[int, np.ndarray] = {}
        self.phantoms = 0
        self.undetected_errors = 0
        self._sig_failed: set[tuple[int, frozenset]] = set()
        self._slot_tuples = {}
        for u, p in state.plans.items():
            self._slot_tuples.setdefault(p.slots, []).append(u)

    # signaling

    def _sibling_ok(self, slots: tuple[int, ...], own: int) -> bool:
        """The hypothesised field must also be present in every other claimed slot."""
        st = self.state
        for j, t in enumerate(slots):
            if t == own:
                continue
            x = signaling_symbols(slots, j, self.layout)
            r = self.residual[t, self.sig]
            best = max((np.vdot(x * self.rot[v, t][self.sig], r).real for v in st.sig_active[t]),
                       default=-np.inf)
            if best / np.vdot(x, x).real < SIBLING_MIN_CORRELATION:
                return False
        return True

    def _decode_signaling(self, slot: int) -> tuple[tuple[int, ...] | None, int | None]:
        """Try each burst's channel estimate in turn; returns (slot tuple, owner)."""
        lay = self.layout
        st = self.state
        first = None
        for v in sorted(st.sig_active[slot]):
            y = self.residual[slot, self.sig] / self.rot[v, slot][self.sig]
            soft = np.stack((y.real, y.imag), axis=-1).reshape(lay.segments, 1 << lay.rm_m)
            cands = [rm_soft_candidates(seg, lay.rm_m, 2, constant=0) for seg in soft]
            combos = sorted(itertools.product(*cands), key=lambda c: -sum(m for _, m in c))
            for combo in combos:
                bits = np.concatenate([b[1:] for b, _ in combo]).tolist()
                slots = decode_signaling(bits, lay.n_b, lay.num_slots, slot)
                if slots is None or not self._sibling_ok(slots, slot):
                    continue
                owners = [u for u in self._slot_tuples.get(slots, ())
                          if u in st.sig_active[slot] and u not in st.located]
                if owners:
                    return slots, (v if v in owners else min(owners))
                first = first or slots
        return first, None

    def signaling_pass(self) -> set[int]:
        st = self.state
        found = set()
        queue = st._sig_queue
        while queue:
            s = heapq.heappop(queue)
            st._sig_queued.discard(s)
            while st.sig_active[s] and len(st.sig_active[s]) - 1 <= st.d_sig:
                key = (s, frozenset(st.sig_active[s]))
                if key in self._sig_failed:
                    break
                degree = len(st.sig_active[s]) - 1
                slots, u = self._decode_signaling(s)
                if u is None:
                    self._sig_failed.add(key)
                    kind = "locate_fail" if slots is None else "phantom"
                    if slots is not None:
                        self.phantoms += 1
                    st.trace.append(TraceEvent(kind, st.iteration, -1, (degree,), slot=s))
                    break
                for j, t in enumerate(slots):
                    x = signaling_symbols(slots, j, self.layout) * self.rot[u, t][self.sig]
                    self.residual[t, self.sig] = subtract_reconstructed(self.residual[t, self.sig], x)
                st._locate(u, s, degree)
                found.add(u)
        return found

    # data

    def attempt(self, u: int) -> bool:
        st = self.state
        plan = st.plans[u]
        thr = plan.code.erasure_degree_threshold
        llrs = []
        for s in plan.slots:
            d = len(st.data_active[s]) - 1
            y = self.residual[s, self.pay] / self.rot[u, s][self.pay]
            if d > thr:
                llrs.append(np.zeros(2 * y.size))
            else:
                llrs.append(qpsk_soft_demod(y, max(self.n0 + d, 1e-9)))
        stream = np.concatenate(llrs)[:self.codec.coded_bits]
        coded = np.empty(self.codec.coded_bits)
        coded[self.perm] = stream
        bits, ok = self.codec.soft_decode(coded)
        st.trace.append(TraceEvent("attempt", st.iteration, u, st.pattern(u), success=ok))
        if ok:
            st._pending.add(u)
            self.decoded_bits[u] = bits
        else:
            st._blocked.add(u)
        return ok

    def cancel(self, u: int) -> None:
        st = self.state
        plan = st.plans[u]
        pay = payload_symbols(self.decoded_bits[u], self.codec, self.layout)
        pre = preamble(self.layout.preamble_symbols)
        for j, s in enumerate(plan.slots):
            r = self.rot[u, s]
            self.residual[s, self.pre] = subtract_reconstructed(self.residual[s, self.pre],
                                                                pre * r[self.pre])
            self.residual[s, self.pay] = subtract_reconstructed(self.residual[s, self.pay],
                                                                pay[j] * r[self.pay])
        cancel_user(st, u)


def simulate_signal_frame(plans: Iterable[TransmissionPlan], config: FrameConfig | None,
                          codecs: Mapping[str, SoftCodec], es_n0_db: float,
                          rng: np.random.Generator, d_sig: int = 1, rm_m: int = 6,
                          max_iterations: int | None = None,
                          random_phase: bool = True,
                          max_cfo: float = DEFAULT_MAX_CFO) -> SignalFrameResult:
    """Transmit random data for every plan, add noise, and run waveform SIC.

    Each burst gets an independent uniform carrier phase (unless
    ``random_phase`` is off) and each user a uniform frequency offset in
    ``[-max_cfo, max_cfo]`` cycles/symbol. The receiver knows both exactly.
    Without them, fully overlapped users with identical slot order interfere
    coherently across repeated code bits.
    """
    plans = list(plans)
    if not plans:
        raise InvalidInputError("no transmissions")
    ids = {p.code.code_id for p in plans}
    nbs = {p.n_b for p in plans}
    if len(ids) != 1 or len(nbs) != 1:
        raise ConfigurationError("waveform path needs one code and one burst count per frame")
    if any(p.scheme.is_replica for p in plans):
        raise ConfigurationError("waveform path supports fragment (MuSCA) transmissions only")
    code_id = ids.pop()
    if code_id not in codecs:
        raise ConfigurationError(f"no soft codec for {code_id!r}")
    codec = codecs[code_id]
    n_b = nbs.pop()
    num_slots = config.num_slots if config is not None else max(max(p.slots) for p in plans) + 1
    layout = signal_layout(num_slots, n_b, codec, rm_m,
                           config.preamble_symbols if config is not None else 8)
    geo = payload_partition(plans[0].code, n_b)
    if geo.coded_bits != codec.coded_bits:
        raise ConfigurationError(
            f"{code_id}: catalogue length {geo.coded_bits} != codec length {codec.coded_bits}")

    users = {}
    for p in sorted(plans, key=lambda p: p.user_id):
        data = rng.integers(0, 2, codec.info_bits)
        phases = rng.uniform(0.0, 2 * math.pi, n_b) if random_phase else None
        cfo = rng.uniform(-max_cfo, max_cfo) if max_cfo > 0 else 0.0
        users[p.user_id] = user_waveform(p, data, codec, layout, phases, cfo)
    clean = transmit_frame(users.values(), layout)
    received = awgn(clean, es_n0_db, rng)

    state = DecoderState(plans, layout.config, None, es_n0_db, d_sig)
    rx = _SignalReceiver(state, layout, codec, received, es_n0_db, users)
    n_users = len(state.plans)
    progress = True
    while len(state.decoded) < n_users:
        if max_iterations is not None and state.iteration >= max_iterations:
            break
        state.iteration += 1
        progress = bool(rx.signaling_pass())
        while (u := select_next_user(state)) is not None:
            if rx.attempt(u):
                rx.cancel(u)
                progress = True
        if not progress:
            break

    # users with identical slot tuples are indistinguishable; only the data matters
    for u, bits in rx.decoded_bits.items():
        twins = rx._slot_tuples[users[u].slots]
        if not any(np.array_equal(bits, users[v].data_bits) for v in twins):
            rx.undetected_errors += 1
    outcome = finish_outcome(state, progress)
    return SignalFrameResult(outcome, received, rx.residual, users, rx.phantoms,
                             rx.undetected_errors)


def run_signal_level_sic(plans: Iterable[TransmissionPlan], config: FrameConfig | None,
                         codecs: Mapping[str, SoftCodec], es_n0_db: float,
                         rng: np.random.Generator, d_sig: int = 1) -> SicOutcome:
    return simulate_signal_frame(plans, config, codecs, es_n0_db, rng, d_sig).outcome


def default_codecs() -> dict[str, SoftCodec]:
    return {"refconv-1/38": ConvRepetitionCodec(16, 8, "refconv-1/38")}
