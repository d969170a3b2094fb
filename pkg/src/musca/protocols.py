"""Transmitter side: schemes, code catalogue, burst geometry and per-user plans."""

from __future__ import annotations

import enum
import math
import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .core import (BurstPlacement, ConfigurationError, FrameConfig, InvalidInputError,
                   place_bursts, place_bursts_batch)


class SchemeKind(enum.Enum):
    SA = "SA"
    DSA = "DSA"
    CRDSA = "CRDSA"
    CRDSA_PP = "CRDSA++"
    IRSA = "IRSA"
    CSA = "CSA"
    MUSCA = "MUSCA"


REPLICA_KINDS = {SchemeKind.SA, SchemeKind.DSA, SchemeKind.CRDSA, SchemeKind.CRDSA_PP,
                 SchemeKind.IRSA}

DEFAULT_REPLICA_CODE = "conv-1/2"
DEFAULT_FRAGMENT_CODE = "turbo-1/6"


@dataclass(frozen=True)
class Scheme:
    kind: SchemeKind
    replicas: int | None = None
    distribution: tuple[tuple[int, float], ...] | None = None
    code_id: str | None = None

    def __post_init__(self):
        k = self.kind
        if k is SchemeKind.CRDSA and self.replicas not in (2, 3):
            raise ConfigurationError(f"CRDSA takes 2 or 3 replicas, got {self.replicas}")
        if k is SchemeKind.CRDSA_PP and not (self.replicas and 3 <= self.replicas <= 5):
            raise ConfigurationError(f"CRDSA++ takes 3..5 replicas, got {self.replicas}")
        if k is SchemeKind.IRSA:
            if not self.distribution:
                raise ConfigurationError("IRSA needs a degree distribution")
            validate_distribution(dict(self.distribution))

    @property
    def is_replica(self) -> bool:
        return self.kind in REPLICA_KINDS

    @property
    def uses_sic(self) -> bool:
        return self.kind is not SchemeKind.DSA

    @property
    def has_pointers(self) -> bool:
        return self.kind not in (SchemeKind.SA, SchemeKind.DSA)

    def fixed_n_b(self, code: CodeSpec | None = None) -> int | None:
        """Bursts per user, or None for IRSA (sampled per user)."""
        k = self.kind
        if k is SchemeKind.SA:
            return 1
        if k is SchemeKind.DSA:
            return 2
        if k in (SchemeKind.CRDSA, SchemeKind.CRDSA_PP):
            return self.replicas
        if k is SchemeKind.IRSA:
            return None
        if self.replicas:
            return self.replicas
        return code.n_b if code is not None else 3

    def max_n_b(self) -> int:
        if self.kind is SchemeKind.IRSA:
            return max(d for d, _ in self.distribution)
        return self.fixed_n_b(get_code(self.default_code_id()))

    def default_code_id(self) -> str:
        if self.code_id:
            return self.code_id
        return DEFAULT_REPLICA_CODE if self.is_replica else DEFAULT_FRAGMENT_CODE

    def with_n_b(self, n_b: int) -> Scheme:
        if self.kind in (SchemeKind.SA, SchemeKind.DSA, SchemeKind.IRSA):
            raise ConfigurationError(f"{self.kind.value} has a fixed burst count")
        return Scheme(self.kind, n_b, self.distribution, self.code_id)

    def __str__(self) -> str:
        k = self.kind
        if k in (SchemeKind.SA, SchemeKind.DSA):
            return k.value
        if k in (SchemeKind.CRDSA, SchemeKind.CRDSA_PP):
            return f"{k.value}({self.replicas})"
        if k is SchemeKind.IRSA:
            return "IRSA(" + ";".join(f"{d}:{p:g}" for d, p in self.distribution) + ")"
        tag = self.default_code_id()
        if self.replicas:
            tag += f",nb={self.replicas}"
        return f"{k.value}({tag})"


_SCHEME_RE = re.compile(r"^\s*([A-Za-z+]+)\s*(?:\((.*)\))?\s*$")


def parse_scheme(text: str) -> Scheme:
    """Parse labels such as ``SA``, ``CRDSA(3)``, ``IRSA(2:0.5;3:0.5)``, ``MUSCA(turbo-1/4)``."""
    m = _SCHEME_RE.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse scheme {text!r}")
    name, arg = m.group(1).upper(), (m.group(2) or "").strip()
    try:
        kind = SchemeKind(name)
    except ValueError:
        raise ConfigurationError(f"unknown scheme {name!r}") from None
    if kind in (SchemeKind.SA, SchemeKind.DSA):
        if arg:
            raise ConfigurationError(f"{name} takes no parameters")
        return Scheme(kind)
    if kind in (SchemeKind.CRDSA, SchemeKind.CRDSA_PP):
        return Scheme(kind, int(arg) if arg else (2 if kind is SchemeKind.CRDSA else 3))
    if kind is SchemeKind.IRSA:
        try:
            dist = tuple((int(d), float(p)) for d, p in
                         (item.split(":") for item in re.split(r"[;\s]+", arg) if item))
        except ValueError:
            raise ConfigurationError(f"bad IRSA distribution {arg!r}") from None
        return Scheme(kind, distribution=dist)
    code_id, n_b = None, None
    for part in (p.strip() for p in arg.split(",") if p.strip()):
        if part.startswith("nb="):
            n_b = int(part[3:])
        else:
            code_id = part
    return Scheme(kind, n_b, code_id=code_id)


@dataclass(frozen=True)
class CodeSpec:
    code_id: str
    rate: Fraction
    info_bits: int
    signaling_rate: Fraction = Fraction(7, 64)
    modulation_bits_per_symbol: int = 2
    erasure_degree_threshold: int = 2
    n_b: int = 3
    mi_margin: float = 0.0
    fer_table: str | None = field(default=None, compare=False)
    tail_bits: int = 0  # trellis termination bits, encoded along with the k info bits

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ConfigurationError(f"{self.code_id}: rate must lie in (0, 1]")
        if self.info_bits < 1:
            raise ConfigurationError(f"{self.code_id}: info_bits must be >= 1")
        if self.tail_bits < 0:
            raise ConfigurationError(f"{self.code_id}: tail_bits must be >= 0")
        if ((self.info_bits + self.tail_bits) / self.rate).denominator != 1:
            raise ConfigurationError(f"{self.code_id}: (k + tail)/R is not an integer")

    @property
    def coded_bits(self) -> int:
        return int((self.info_bits + self.tail_bits) / self.rate)


@dataclass(frozen=True)
class BurstGeometry:
    coded_bits: int
    total_symbols: int
    symbols_per_burst: int
    n_b: int = 1

    @property
    def pad_symbols(self) -> int:
        return self.symbols_per_burst * self.n_b - self.total_symbols


def payload_partition(code: CodeSpec, n_b: int) -> BurstGeometry:
    """Split one codeword over ``n_b`` bursts; the last burst is zero-padded."""
    if n_b < 1:
        raise ConfigurationError(f"n_b must be >= 1, got {n_b}")
    coded = (code.info_bits + code.tail_bits) / code.rate
    if coded.denominator != 1:
        raise ConfigurationError(f"{code.code_id}: non-integer coded length {coded}")
    coded = int(coded)
    bps = code.modulation_bits_per_symbol
    total = -(-coded // bps)
    return BurstGeometry(coded, total, -(-total // n_b), n_b)


def interleave_indices(coded_bits: int, seed: int | str) -> np.ndarray:
    """Fixed pseudo-random permutation of ``range(coded_bits)``.

    A string seed (normally a code id) is hashed so transmitter and receiver agree.
    """
    if coded_bits < 1:
        raise InvalidInputError("coded_bits must be >= 1")
    if isinstance(seed, str):
        seed = zlib.crc32(seed.encode())
    return np.random.default_rng(seed).permutation(coded_bits)


def validate_distribution(distribution: Mapping[int, float]) -> None:
    if not distribution:
        raise ConfigurationError("empty degree distribution")
    for d, p in distribution.items():
        if int(d) != d or d < 1:
            raise ConfigurationError(f"degree {d} must be a positive integer")
        if not p >= 0:
            raise ConfigurationError(f"negative probability {p} for degree {d}")
    if abs(sum(distribution.values()) - 1.0) > 1e-9:
        raise ConfigurationError(f"degree probabilities sum to {sum(distribution.values())}")


def irsa_sample_degree(distribution: Mapping[int, float], rng: np.random.Generator) -> int:
    validate_distribution(distribution)
    degrees = sorted(distribution)
    probs = np.array([distribution[d] for d in degrees], dtype=float)
    return int(degrees[rng.choice(len(degrees), p=probs / probs.sum())])


# -- signaling content --------------------------------------------------------

def pointer_bits(num_slots: int) -> int:
    return max(1, math.ceil(math.log2(num_slots)))


def _check_byte(payload_bits) -> int:
    return zlib.crc32(bytes(payload_bits)) & 0xFF


def encode_signaling(pointers, fragment: int, num_slots: int) -> list[int]:
    """Pointer list, one-byte fragment index and a one-byte check, MSB first."""
    w = pointer_bits(num_slots)
    bits = []
    for p in pointers:
        bits += [(p >> (w - 1 - i)) & 1 for i in range(w)]
    bits += [(fragment >> (7 - i)) & 1 for i in range(8)]
    chk = _check_byte(bits)
    return bits + [(chk >> (7 - i)) & 1 for i in range(8)]


def signaling_length(n_b: int, num_slots: int) -> int:
    return (n_b - 1) * pointer_bits(num_slots) + 16


def decode_signaling(bits, n_b: int, num_slots: int, own_slot: int):
    """Inverse of :func:`encode_signaling`; returns the full slot tuple or None.

    The returned tuple lists the user's slots in fragment order, with ``own_slot``
    inserted at the decoded fragment index.
    """
    w = pointer_bits(num_slots)
    n = signaling_length(n_b, num_slots)
    bits = [int(b) for b in bits[:n]]
    if len(bits) < n:
        return None
    payload, chk = bits[:-8], bits[-8:]
    if _check_byte(payload) != int("".join(map(str, chk)), 2):
        return None
    ptrs = [int("".join(map(str, payload[i * w:(i + 1) * w])), 2) for i in range(n_b - 1)]
    frag = int("".join(map(str, payload[(n_b - 1) * w:])), 2)
    if frag >= n_b or own_slot in ptrs or len(set(ptrs)) != len(ptrs):
        return None
    if any(p >= num_slots for p in ptrs):
        return None
    return tuple(ptrs[:frag]) + (own_slot,) + tuple(ptrs[frag:])


# -- plans --------------------------------------------------------------------

@dataclass(frozen=True)
class TransmissionPlan:
    user_id: int
    scheme: Scheme
    code: CodeSpec
    placement: BurstPlacement
    burst_role: tuple[tuple[str, int], ...]
    geometry: BurstGeometry

    @property
    def slots(self) -> tuple[int, ...]:
        return self.placement.slots

    @property
    def n_b(self) -> int:
        return len(self.placement.slots)

    @property
    def signaling_payload(self) -> tuple[tuple[int, ...], ...]:
        """Per burst, the slots of the user's other bursts in fragment order."""
        if not self.scheme.has_pointers:
            return tuple(() for _ in self.slots)
        s = self.slots
        return tuple(s[:j] + s[j + 1:] for j in range(len(s)))


def _roles(scheme: Scheme, n_b: int) -> tuple[tuple[str, int], ...]:
    tag = "replica" if scheme.is_replica else "fragment"
    return tuple((tag, j) for j in range(n_b))


def _geometry(scheme: Scheme, code: CodeSpec, n_b: int) -> BurstGeometry:
    # a replica carries the whole codeword; fragments share one
    return payload_partition(code, 1 if scheme.is_replica else n_b)


def make_plan(scheme: Scheme, user_id: int, slots, code: CodeSpec | None = None,
              config: FrameConfig | None = None) -> TransmissionPlan:
    """Plan with an explicit placement (scenario construction, tests)."""
    code = code or get_code(scheme.default_code_id())
    placement = BurstPlacement(user_id, tuple(int(s) for s in slots))
    if config is not None:
        placement.validate(config)
    n_b = placement.n_b
    return TransmissionPlan(user_id, scheme, code, placement, _roles(scheme, n_b),
                            _geometry(scheme, code, n_b))


def make_transmission(scheme: Scheme, user_id: int, config: FrameConfig,
                      rng: np.random.Generator, code: CodeSpec | None = None) -> TransmissionPlan:
    code = code or get_code(scheme.default_code_id())
    n_b = scheme.fixed_n_b(code)
    if n_b is None:
        n_b = irsa_sample_degree(dict(scheme.distribution), rng)
    slots = place_bursts(rng, config.num_slots, n_b)
    return make_plan(scheme, user_id, slots, code)


def make_transmissions(scheme: Scheme, num_users: int, config: FrameConfig,
                       rng: np.random.Generator, code: CodeSpec | None = None) -> list[TransmissionPlan]:
    """All users of one frame; placement is drawn in a single vectorised batch."""
    code = code or get_code(scheme.default_code_id())
    n_b = scheme.fixed_n_b(code)
    if n_b is not None:
        slots = place_bursts_batch(rng, num_users, config.num_slots, n_b).tolist()
        roles = _roles(scheme, n_b)
        geom = _geometry(scheme, code, n_b)
        return [TransmissionPlan(u, scheme, code, BurstPlacement(u, tuple(s)), roles, geom)
                for u, s in enumerate(slots)]
    return [make_transmission(scheme, u, config, rng, code) for u in range(num_users)]


# -- code catalogue -----------------------------------------------------------

def _registry_text(path: str | Path | None) -> tuple[str, Path | None]:
    if path is None:
        return resources.files("musca.data").joinpath("codes.yaml").read_text(), None
    path = Path(path)
    return path.read_text(), path.parent


def load_code_registry(path: str | Path | None = None) -> dict[str, CodeSpec]:
    """Read a code catalogue (YAML mapping ``code_id -> parameters``)."""
    text, base = _registry_text(path)
    raw = yaml.safe_load(text) or {}
    codes = {}
    for code_id, entry in raw.get("codes", {}).items():
        try:
            table = entry.get("fer_table")
            if table and base is not None:
                table = str(base / table)
            codes[code_id] = CodeSpec(
                code_id=code_id,
                rate=Fraction(str(entry["rate"])),
                info_bits=int(entry["info_bits"]),
                signaling_rate=Fraction(str(entry.get("signaling_rate", "7/64"))),
                modulation_bits_per_symbol=int(entry.get("bits_per_symbol", 2)),
                erasure_degree_threshold=int(entry.get("erasure_threshold", 2)),
                n_b=int(entry.get("n_b", 3)),
                mi_margin=float(entry.get("mi_margin", 0.0)),
                fer_table=table,
                tail_bits=int(entry.get("tail_bits", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"code {code_id!r}: {exc}") from exc
    return codes


@lru_cache(maxsize=None)
def _default_registry() -> dict[str, CodeSpec]:
    return load_code_registry()


def get_code(code_id: str, registry: Mapping[str, CodeSpec] | None = None) -> CodeSpec:
    reg = registry if registry is not None else _default_registry()
    try:
        return reg[code_id]
    except KeyError:
        raise ConfigurationError(
            f"unknown code {code_id!r}; known: {', '.join(sorted(reg))}") from None
