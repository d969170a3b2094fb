"""Frame/slot data model, burst placement and the scalar load/throughput metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid frame, scheme, code or experiment configuration."""


class InvalidInputError(ValueError):
    """Malformed argument to an otherwise well-configured operation."""


class ContractViolation(RuntimeError):
    """An operation was called in a state its contract forbids."""


@dataclass(frozen=True)
class FrameConfig:
    num_slots: int
    slot_payload_symbols: int = 460
    signaling_symbols: int = 32
    preamble_symbols: int = 0

    def __post_init__(self):
        if self.num_slots < 1:
            raise ConfigurationError(f"num_slots must be >= 1, got {self.num_slots}")
        for name in ("slot_payload_symbols", "signaling_symbols", "preamble_symbols"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    @property
    def burst_symbols(self) -> int:
        return self.preamble_symbols + self.signaling_symbols + self.slot_payload_symbols


@dataclass(frozen=True)
class BurstPlacement:
    user_id: int
    slots: tuple[int, ...]

    def __post_init__(self):
        if self.user_id < 0:
            raise InvalidInputError(f"user_id must be >= 0, got {self.user_id}")
        if len(set(self.slots)) != len(self.slots):
            raise InvalidInputError(f"user {self.user_id}: duplicate slots {self.slots}")

    @property
    def n_b(self) -> int:
        return len(self.slots)

    def validate(self, config: FrameConfig) -> None:
        for s in self.slots:
            if not 0 <= s < config.num_slots:
                raise InvalidInputError(
                    f"user {self.user_id}: slot {s} outside [0, {config.num_slots})")


class FrameOccupancy:
    """Slot index -> set of user ids. Read-only after construction."""

    def __init__(self, num_slots: int, occupants: Sequence[frozenset]):
        self.num_slots = num_slots
        self._occupants = tuple(occupants)

    def occupants(self, slot: int) -> frozenset:
        return self._occupants[slot]

    def __iter__(self):
        return iter(self._occupants)

    def __len__(self):
        return self.num_slots

    def nonempty_slots(self) -> list[int]:
        return [s for s, occ in enumerate(self._occupants) if occ]

    def total_bursts(self) -> int:
        return sum(len(occ) for occ in self._occupants)


@dataclass(frozen=True)
class LoadPoint:
    num_users: int
    num_slots: int
    plr: float = 0.0

    @property
    def normalized_load(self) -> float:
        return normalized_load(self.num_users, self.num_slots)

    @property
    def throughput(self) -> float:
        return throughput(self.normalized_load, self.plr)


def _check_nb(num_slots: int, n_b: int) -> None:
    if n_b < 1 or n_b > num_slots:
        raise ConfigurationError(
            f"need 1 <= n_b <= num_slots, got n_b={n_b}, num_slots={num_slots}")


def place_bursts(rng: np.random.Generator, num_slots: int, n_b: int) -> tuple[int, ...]:
    """Draw ``n_b`` distinct slots uniformly at random (partial Fisher-Yates)."""
    return tuple(place_bursts_batch(rng, 1, num_slots, n_b)[0].tolist())


def place_bursts_batch(rng: np.random.Generator, num_users: int, num_slots: int,
                       n_b: int) -> np.ndarray:
    """Vectorised partial shuffle: one row of ``n_b`` distinct slots per user.

    Consumes exactly ``n_b`` integer draws of size ``num_users`` from ``rng``, so
    a single-user call draws the same stream as :func:`place_bursts`.
    """
    _check_nb(num_slots, n_b)
    if num_users == 0:
        return np.zeros((0, n_b), dtype=np.int64)
    if n_b == 1:
        return rng.integers(0, num_slots, size=(num_users, 1))
    pool = np.tile(np.arange(num_slots, dtype=np.int64), (num_users, 1))
    rows = np.arange(num_users)
    for j in range(n_b):
        pick = j + rng.integers(0, num_slots - j, size=num_users)
        chosen = pool[rows, pick]
        pool[rows, pick] = pool[:, j]
        pool[:, j] = chosen
    return pool[:, :n_b]


def build_occupancy(placements: Iterable[BurstPlacement], config: FrameConfig) -> FrameOccupancy:
    occ: list[set] = [set() for _ in range(config.num_slots)]
    seen = set()
    for p in placements:
        if p.user_id in seen:
            raise InvalidInputError(f"duplicate user_id {p.user_id}")
        seen.add(p.user_id)
        p.validate(config)
        for s in p.slots:
            occ[s].add(p.user_id)
    return FrameOccupancy(config.num_slots, [frozenset(o) for o in occ])


def interference_degree(occupancy: FrameOccupancy, slot: int, active) -> int:
    """Number of *other* active users sharing ``slot`` (0 for a clean burst)."""
    if not 0 <= slot < occupancy.num_slots:
        raise InvalidInputError(f"slot {slot} out of range")
    n = len(occupancy.occupants(slot) & set(active))
    return max(n - 1, 0)


def normalized_load(num_users: int, num_slots: int) -> float:
    if num_slots < 1:
        raise ConfigurationError(f"num_slots must be >= 1, got {num_slots}")
    return num_users / num_slots


def throughput(load: float, plr: float) -> float:
    if not 0.0 <= plr <= 1.0:
        raise InvalidInputError(f"plr must lie in [0, 1], got {plr}")
    return load * (1.0 - plr)


def sa_reference_throughput(load: float) -> float:
    return load * math.exp(-load)


def trial_rng(base_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one work item, keyed by integers (not by order)."""
    entropy = [int(base_seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
