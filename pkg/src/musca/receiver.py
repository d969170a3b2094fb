"""Two-phase successive interference cancellation receiver (abstract level).

Phase one locates users by decoding signaling fields in lightly loaded slots and
removing those fields from the signaling-interference accounting. Phase two
repeatedly picks the located user with the most clean bursts, tries to decode
its whole codeword from all of its bursts, and on success removes the user's
bursts from every slot. The loop stops when nothing changes (deadlock) or every
user is decoded.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, TextIO

import numpy as np

from .core import ContractViolation, FrameConfig, InvalidInputError, build_occupancy
from .phy import PhyModel
from .protocols import TransmissionPlan


class Status(enum.Enum):
    DECODED = "decoded"
    LOCATED_UNDECODED = "located_undecoded"
    UNLOCATED = "unlocated"


@dataclass(frozen=True, slots=True)
class TraceEvent:
    kind: str
    iteration: int
    user_id: int
    pattern: tuple[int, ...] = ()
    slot: int | None = None
    prob: float | None = None
    success: bool | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern"] = list(self.pattern)
        return {k: v for k, v in d.items() if v is not None}


@dataclass
class SicOutcome:
    status: dict[int, Status]
    iterations_used: int
    deadlock: bool
    trace: list[TraceEvent]

    def decoded(self) -> set[int]:
        return {u for u, s in self.status.items() if s is Status.DECODED}

    def count(self, status: Status) -> int:
        return sum(1 for s in self.status.values() if s is status)


class DecoderState:
    """Mutable per-frame SIC state; one instance per trial."""

    def __init__(self, plans: Iterable[TransmissionPlan], config: FrameConfig,
                 phy: PhyModel, es_n0_db: float, d_sig: int = 1,
                 signaling_prob: Callable[[int], float] | None = None):
        self.plans = {p.user_id: p for p in plans}
        self._slots = {u: p.slots for u, p in self.plans.items()}
        self.config = config
        self.phy = phy
        self.es_n0_db = es_n0_db
        self.d_sig = d_sig
        self.signaling_prob = signaling_prob
        self.occupancy = build_occupancy((p.placement for p in self.plans.values()), config)
        self.data_active = [set(o) for o in self.occupancy]
        self.sig_active = [set(o) for o in self.occupancy]
        self.located: set[int] = set()
        self.decoded: set[int] = set()
        self.signaling_cancelled: set[int] = set()
        self.trace: list[TraceEvent] = []
        self.iteration = 0
        self._pending: set[int] = set()       # decoded, not yet cancelled
        self._blocked: set[int] = set()       # failed at the current pattern
        self._sig_failed: set[tuple[int, int, int]] = set()
        self._heap: list[tuple[int, int]] = []
        self._sig_queue = list(range(config.num_slots))
        self._sig_queued = set(self._sig_queue)

    # -- degrees ------------------------------------------------------------

    def data_degree(self, slot: int) -> int:
        return max(len(self.data_active[slot]) - 1, 0)

    def signaling_degree(self, slot: int) -> int:
        return max(len(self.sig_active[slot]) - 1, 0)

    def pattern(self, user_id: int) -> tuple[int, ...]:
        act = self.data_active
        return tuple([len(act[s]) - 1 for s in self._slots[user_id]])

    def clean_bursts(self, user_id: int) -> int:
        act = self.data_active
        return [len(act[s]) for s in self._slots[user_id]].count(1)

    def recompute(self) -> tuple[list[set], list[set]]:
        """Active sets rebuilt from the plans alone (brute-force reference)."""
        data = [set() for _ in range(self.config.num_slots)]
        sig = [set() for _ in range(self.config.num_slots)]
        for u, p in self.plans.items():
            for s in p.slots:
                if u not in self.decoded:
                    data[s].add(u)
                if u not in self.signaling_cancelled and u not in self.decoded:
                    sig[s].add(u)
        return data, sig

    # -- bookkeeping --------------------------------------------------------

    def _offer(self, user_id: int) -> None:
        heapq.heappush(self._heap, (-self.clean_bursts(user_id), user_id))

    def _queue_slot(self, slot: int) -> None:
        if slot not in self._sig_queued:
            self._sig_queued.add(slot)
            heapq.heappush(self._sig_queue, slot)

    def _locate(self, user_id: int, slot: int, degree: int) -> None:
        self.located.add(user_id)
        self.signaling_cancelled.add(user_id)
        self.trace.append(TraceEvent("locate", self.iteration, user_id, (degree,), slot=slot))
        for s in self.plans[user_id].slots:
            self.sig_active[s].discard(user_id)
            self._queue_slot(s)
        if user_id not in self.decoded:
            self._offer(user_id)


def signaling_pass(state: DecoderState, rng: np.random.Generator | None = None) -> set[int]:
    """Locate every user reachable through slots of signaling degree <= d_sig.

    Equivalent to repeated ascending scans of all slots until a scan finds
    nothing new; only slots whose signaling occupancy changed are revisited.
    """
    found = set()
    queue = state._sig_queue
    while queue:
        s = heapq.heappop(queue)
        state._sig_queued.discard(s)
        for u in sorted(state.sig_active[s]):
            if u not in state.sig_active[s]:
                continue
            degree = len(state.sig_active[s]) - 1
            if degree > state.d_sig:
                break
            if state.signaling_prob is None:
                ok = True
            else:
                key = (u, s, degree)
                if key in state._sig_failed:
                    continue
                p = state.signaling_prob(degree)
                ok = p >= 1.0 or (p > 0.0 and rng.random() < p)
                if not ok:
                    state._sig_failed.add(key)
                    state.trace.append(TraceEvent("locate_fail", state.iteration, u, (degree,), slot=s))
                    continue
            state._locate(u, s, degree)
            found.add(u)
    return found


def select_next_user(state: DecoderState) -> int | None:
    """Located, undecoded user with the most clean bursts (lowest id on ties).

    Users whose last attempt failed are skipped until one of their slots changes.
    """
    heap = state._heap
    while heap:
        neg_clean, u = heap[0]
        if (u in state.decoded or u in state._pending or u in state._blocked
                or u not in state.located or -neg_clean != state.clean_bursts(u)):
            heapq.heappop(heap)
            continue
        return u
    return None


def attempt_data_decode(state: DecoderState, user_id: int, phy: PhyModel | None = None,
                        rng: np.random.Generator | None = None) -> bool:
    if user_id not in state.located or user_id in state.decoded:
        raise ContractViolation(f"user {user_id} is not a located, undecoded user")
    phy = phy or state.phy
    plan = state.plans[user_id]
    pattern = state.pattern(user_id)
    p = phy.codeword_decode_prob(pattern, state.es_n0_db, plan.code,
                                 replicas=plan.scheme.is_replica)
    if p >= 1.0:
        ok = True
    elif p <= 0.0:
        ok = False
    else:
        ok = bool(rng.random() < p)
    state.trace.append(TraceEvent("attempt", state.iteration, user_id, pattern, prob=p, success=ok))
    if ok:
        state._pending.add(user_id)
    else:
        state._blocked.add(user_id)
    return ok


def cancel_user(state: DecoderState, user_id: int) -> DecoderState:
    """Subtract a just-decoded user from every slot (perfect cancellation)."""
    if user_id not in state._pending:
        raise ContractViolation(f"user {user_id} has no pending successful decode to cancel")
    state._pending.discard(user_id)
    state.decoded.add(user_id)
    state.trace.append(TraceEvent("cancel", state.iteration, user_id, state.pattern(user_id)))
    for s in state.plans[user_id].slots:
        state.data_active[s].discard(user_id)
        if user_id in state.sig_active[s]:
            state.sig_active[s].discard(user_id)
            state._queue_slot(s)
        for v in state.data_active[s]:
            state._blocked.discard(v)
            if v in state.located and v not in state.decoded:
                state._offer(v)
    return state


def _keep_without_cancel(state: DecoderState, user_id: int) -> None:
    state._pending.discard(user_id)
    state.decoded.add(user_id)


def run_sic(plans: Iterable[TransmissionPlan], config: FrameConfig, phy: PhyModel,
            rng: np.random.Generator, es_n0_db: float, max_iterations: int | None = None,
            d_sig: int = 1, signaling_prob: Callable[[int], float] | None = None,
            cancellation: bool | None = None,
            observer: Callable[[DecoderState], None] | None = None) -> SicOutcome:
    """Decode one frame until every user is decoded or no step makes progress.

    ``cancellation`` defaults to the schemes' own setting (off only for DSA);
    ``observer`` is called with the state after every successful decode.
    """
    plans = list(plans)
    if cancellation is None:
        cancellation = all(p.scheme.uses_sic for p in plans)
    state = DecoderState(plans, config, phy, es_n0_db, d_sig, signaling_prob)
    n_users = len(state.plans)
    progress = True
    while len(state.decoded) < n_users:
        if max_iterations is not None and state.iteration >= max_iterations:
            break
        state.iteration += 1
        progress = bool(signaling_pass(state, rng))
        while (u := select_next_user(state)) is not None:
            if attempt_data_decode(state, u, phy, rng):
                if cancellation:
                    cancel_user(state, u)
                else:
                    _keep_without_cancel(state, u)
                progress = True
                if observer is not None:
                    observer(state)
        if not progress:
            break
    return finish_outcome(state, progress)


def finish_outcome(state: DecoderState, progress: bool) -> SicOutcome:
    status = {}
    for u in state.plans:
        if u in state.decoded:
            status[u] = Status.DECODED
        elif u in state.located:
            status[u] = Status.LOCATED_UNDECODED
        else:
            status[u] = Status.UNLOCATED
    deadlock = not progress and len(state.decoded) < len(state.plans)
    return SicOutcome(status, state.iteration, deadlock, state.trace)


# -- trace export -------------------------------------------------------------

def write_trace(trace: Iterable[TraceEvent], fh: TextIO) -> None:
    """One JSON object per line: kind, iteration, user_id, pattern and extras."""
    for ev in trace:
        fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


def read_trace(fh: TextIO) -> list[TraceEvent]:
    out = []
    for line in fh:
        if not line.strip():
            continue
        d = json.loads(line)
        try:
            d["pattern"] = tuple(d.get("pattern", ()))
            out.append(TraceEvent(**d))
        except TypeError as exc:
            raise InvalidInputError(f"bad trace line: {line.strip()}") from exc
    return out
