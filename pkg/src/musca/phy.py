"""Decode-outcome models: which interference patterns a receiver can decode.

Three interchangeable models map a burst interference pattern (the multiset of
per-burst interference degrees) and Es/N0 to a codeword success probability:

* ``erasure``  -- collided bursts carry nothing.
* ``fer-table`` -- tabulated FER curves for uniform patterns, with
  mutual-information aggregation bounding every other pattern.
* ``sinr-mi``  -- hard threshold on the mutual information gathered from all
  non-erased bursts, interference treated as Gaussian noise.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .core import ConfigurationError, InvalidInputError
from .protocols import CodeSpec, payload_partition

log = logging.getLogger(__name__)

FER_FLOOR = 1e-7
FER_HEADER = ["code_id", "pattern", "esn0_db", "fer"]


# -- SNR arithmetic -----------------------------------------------------------

def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def esn0_from_ebn0(eb_n0_db: float, code: CodeSpec) -> float:
    if code.rate <= 0:
        raise ConfigurationError("code rate must be positive")
    return eb_n0_db + 10.0 * math.log10(float(code.rate) * code.modulation_bits_per_symbol)


@dataclass(frozen=True)
class SnrPoint:
    es_n0_db: float
    rate: float = 1.0
    bits_per_symbol: int = 2

    @property
    def eb_n0_db(self) -> float:
        return self.es_n0_db - 10.0 * math.log10(self.rate * self.bits_per_symbol)

    @classmethod
    def for_code(cls, es_n0_db: float, code: CodeSpec) -> SnrPoint:
        return cls(es_n0_db, float(code.rate), code.modulation_bits_per_symbol)


def burst_sinr(es_n0_db: float, degree: int) -> float:
    """Linear SINR of a burst with ``degree`` equal-power Gaussian-equivalent interferers."""
    if degree < 0:
        raise InvalidInputError(f"degree must be >= 0, got {degree}")
    if math.isinf(es_n0_db) and es_n0_db > 0:
        return math.inf if degree == 0 else 1.0 / degree
    es = db_to_linear(es_n0_db)
    return es / (1.0 + degree * es)


_GH_X, _GH_W = np.polynomial.hermite.hermgauss(96)


@lru_cache(maxsize=4096)
def mi_per_symbol_qpsk(sinr_linear: float) -> float:
    """Gray-QPSK constrained capacity in bits/symbol (two independent BPSK rails)."""
    if sinr_linear < 0:
        raise InvalidInputError("sinr must be >= 0")
    if sinr_linear == 0:
        return 0.0
    if math.isinf(sinr_linear) or sinr_linear > 1e4:
        return 2.0
    # per rail: y = 1 + n, n ~ N(0, 1/sinr)
    var = 1.0 / sinr_linear
    y = 1.0 + math.sqrt(2.0 * var) * _GH_X
    loss = np.sum(_GH_W * np.logaddexp(0.0, -2.0 * y / var)) / math.sqrt(math.pi)
    return float(min(2.0, max(0.0, 2.0 * (1.0 - loss / math.log(2.0)))))


def capacity_sinr(bits_per_symbol: float) -> float:
    """Smallest linear SINR at which QPSK carries ``bits_per_symbol``."""
    if not 0 < bits_per_symbol < 2:
        raise InvalidInputError("QPSK carries between 0 and 2 bits/symbol")
    return brentq(lambda g: mi_per_symbol_qpsk(g) - bits_per_symbol, 1e-6, 1e4, xtol=1e-12)


# -- patterns -----------------------------------------------------------------

def canonical_pattern(pattern: Sequence[int], threshold: int) -> tuple[int, ...]:
    """Sorted degrees, anything above ``threshold`` collapsed to ``threshold + 1`` (erased)."""
    return tuple(sorted(min(int(d), threshold + 1) for d in pattern))


def pattern_label(pattern: Sequence[int]) -> str:
    return "-".join(str(d) for d in pattern)


def parse_pattern(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.strip().split("-"))
    except ValueError:
        raise InvalidInputError(f"bad pattern {text!r}") from None


def dominates(worse: Sequence[int], better: Sequence[int]) -> bool:
    """True if sorted ``worse`` is pointwise >= sorted ``better``."""
    return len(worse) == len(better) and all(
        a >= b for a, b in zip(sorted(worse), sorted(better)))


# -- FER tables ---------------------------------------------------------------

@dataclass
class FerTable:
    code_id: str
    rows: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def patterns(self) -> list[tuple[int, ...]]:
        return sorted(self.rows)

    def __contains__(self, pattern) -> bool:
        return tuple(pattern) in self.rows

    def fer(self, pattern: tuple[int, ...], es_n0_db: float) -> float:
        esn0, fer = self.rows[pattern]
        if es_n0_db <= esn0[0]:
            value = fer[0]
        elif es_n0_db >= esn0[-1]:
            value = fer[-1]
        else:
            i = int(np.searchsorted(esn0, es_n0_db))
            if esn0[i] == es_n0_db:
                return max(float(fer[i]), FER_FLOOR)  # exact row hit, no log round trip
            logf = np.log(np.maximum(fer, 1e-300))
            value = math.exp(float(np.interp(es_n0_db, esn0, logf)))
        return max(float(value), FER_FLOOR)

    def violations(self) -> list[str]:
        """Every broken invariant, as readable messages (empty when valid)."""
        out = []
        for pat, (esn0, fer) in self.rows.items():
            label = pattern_label(pat)
            if np.any((fer < 0) | (fer > 1)):
                out.append(f"{self.code_id} {label}: fer outside [0, 1]")
            if np.any(np.diff(esn0) <= 0):
                out.append(f"{self.code_id} {label}: duplicate or unsorted esn0 values")
            bad = np.nonzero(np.diff(fer) > 0)[0]
            for i in bad:
                out.append(f"{self.code_id} {label}: fer rises from {fer[i]!r} at "
                           f"{esn0[i]!r} dB to {fer[i + 1]!r} at {esn0[i + 1]!r} dB")
        for a in self.rows:
            for b in self.rows:
                if a == b or not dominates(a, b):
                    continue
                # a is the degraded pattern: at shared esn0 its fer must be >= b's
                ea, fa = self.rows[a]
                eb, fb = self.rows[b]
                common, ia, ib = np.intersect1d(ea, eb, return_indices=True)
                for x, i, j in zip(common, ia, ib):
                    if fa[i] < fb[j]:
                        out.append(f"{self.code_id}: {pattern_label(a)} has fer {fa[i]!r} < "
                                   f"{pattern_label(b)} fer {fb[j]!r} at {x!r} dB")
        return out

    def validate(self) -> None:
        if not self.rows:
            raise ConfigurationError(f"FER table for {self.code_id!r} is empty")
        problems = self.violations()
        if problems:
            raise ConfigurationError("invalid FER table: " + "; ".join(problems[:5]))


def read_fer_tables(path: str | Path, validate: bool = True) -> dict[str, FerTable]:
    """Load ``code_id,pattern,esn0_db,fer`` rows; one table per code id."""
    path = Path(path)
    raw: dict[str, dict[tuple[int, ...], list[tuple[float, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FER_HEADER:
            raise ConfigurationError(f"{path}: header must be {','.join(FER_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                code_id, pat, esn0, fer = (c.strip() for c in row)
                raw.setdefault(code_id, {}).setdefault(parse_pattern(pat), []).append(
                    (float(esn0), float(fer)))
            except (ValueError, InvalidInputError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from exc
    tables = {}
    for code_id, rows in raw.items():
        t = FerTable(code_id)
        for pat, pts in rows.items():
            pts.sort()
            t.rows[pat] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
        if validate:
            t.validate()
        tables[code_id] = t
    if not tables:
        raise ConfigurationError(f"{path}: FER table is empty")
    return tables


def write_fer_table(table: FerTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FER_HEADER)
        for pat in table.patterns():
            for x, f in zip(*table.rows[pat]):
                w.writerow([table.code_id, pattern_label(pat), repr(float(x)), repr(float(f))])


def resolve_data_path(name: str | Path) -> Path:
    p = Path(name)
    if p.exists():
        return p
    return Path(str(resources.files("musca.data").joinpath(str(name))))


def fer_lookup(table: FerTable, pattern: Sequence[int], es_n0_db: float,
               fallback: Callable[[tuple[int, ...], float], float] | None = None) -> float:
    """FER of a canonical pattern, log-linearly interpolated in Es/N0 and clamped."""
    if not table.rows:
        raise ConfigurationError(f"FER table for {table.code_id!r} is empty")
    pattern = tuple(pattern)
    if pattern in table.rows:
        return table.fer(pattern, es_n0_db)
    if fallback is None:
        raise InvalidInputError(f"no row for pattern {pattern_label(pattern)} in {table.code_id}")
    _warn_missing(table.code_id, pattern)
    return fallback(pattern, es_n0_db)


_warned: set = set()


def _warn_missing(code_id: str, pattern: tuple[int, ...]) -> None:
    key = (code_id, pattern)
    if key not in _warned:
        _warned.add(key)
        log.warning("no FER row for %s pattern %s; using mutual-information model",
                    code_id, pattern_label(pattern))


# -- decode models ------------------------------------------------------------

class PhyVariant(enum.Enum):
    COLLISION_ERASURE = "erasure"
    DEGREE_FER_TABLE = "fer-table"
    SINR_MI = "sinr-mi"


def mi_bits(pattern: Sequence[int], es_n0_db: float, symbols_per_burst: float,
            threshold: int) -> float:
    """Mutual information (bits) collected over the non-erased bursts of ``pattern``."""
    return sum(symbols_per_burst * mi_per_symbol_qpsk(burst_sinr(es_n0_db, d))
               for d in pattern if d <= threshold)


@dataclass
class PhyModel:
    variant: PhyVariant = PhyVariant.DEGREE_FER_TABLE
    margin: float | None = None
    tables: dict[str, FerTable] = field(default_factory=dict)
    min_clean_fragments: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_name(cls, name: str, **kw) -> PhyModel:
        try:
            return cls(PhyVariant(name), **kw)
        except ValueError:
            raise ConfigurationError(
                f"unknown phy model {name!r}; use one of "
                f"{', '.join(v.value for v in PhyVariant)}") from None

    def margin_for(self, code: CodeSpec) -> float:
        return code.mi_margin if self.margin is None else self.margin

    def table_for(self, code: CodeSpec) -> FerTable | None:
        if code.code_id in self.tables:
            return self.tables[code.code_id]
        if code.fer_table:
            loaded = read_fer_tables(resolve_data_path(code.fer_table))
            self.tables.update({k: v for k, v in loaded.items() if k not in self.tables})
            return self.tables.get(code.code_id)
        return None

    def codeword_decode_prob(self, pattern: Sequence[int], snr: SnrPoint | float,
                             code: CodeSpec, replicas: bool = False,
                             n_b: int | None = None) -> float:
        """Success probability of one decode attempt.

        For replica schemes every burst is an independent copy of the whole
        codeword; otherwise the pattern describes the fragments of one codeword.
        """
        if n_b is not None and len(pattern) != n_b:
            raise InvalidInputError(f"pattern has {len(pattern)} bursts, expected {n_b}")
        if not pattern:
            raise InvalidInputError("empty interference pattern")
        es_n0 = snr.es_n0_db if isinstance(snr, SnrPoint) else float(snr)
        canon = canonical_pattern(pattern, code.erasure_degree_threshold)
        # keyed by code id; a different CodeSpec under the same id resets its entries
        cached, memo = self._cache.get(code.code_id, (None, None))
        if cached is not code and cached != code:
            memo = {}
            self._cache[code.code_id] = (code, memo)
        key = (canon, es_n0, replicas)
        p = memo.get(key)
        if p is None:
            p = self._compute(canon, es_n0, code, replicas)
            memo[key] = p
        return p

    def _compute(self, canon, es_n0, code, replicas) -> float:
        if self.variant is PhyVariant.COLLISION_ERASURE:
            clean = sum(1 for d in canon if d == 0)
            if replicas:
                return 1.0 if clean >= 1 else 0.0
            need = self.min_clean_fragments or len(canon)
            return 1.0 if clean >= need else 0.0
        if replicas:
            fail = 1.0
            for d in canon:
                fail *= 1.0 - self._single((d,), es_n0, code, 1)
            return 1.0 - fail
        return self._single(canon, es_n0, code, len(canon))

    def _sinr_mi(self, canon, es_n0, code, n_fragments) -> float:
        geom = payload_partition(code, 1)
        per_burst = geom.total_symbols / n_fragments
        need = (1.0 + self.margin_for(code)) * code.info_bits
        have = mi_bits(canon, es_n0, per_burst, code.erasure_degree_threshold)
        return 1.0 if have >= need else 0.0

    def _single(self, canon, es_n0, code, n_fragments) -> float:
        mi_p = self._sinr_mi(canon, es_n0, code, n_fragments)
        if self.variant is PhyVariant.SINR_MI:
            return mi_p
        table = self.table_for(code)
        if table is None:
            return mi_p
        if canon in table:
            return 1.0 - table.fer(canon, es_n0)
        # bound by tabulated neighbours so the model stays monotone in the pattern
        log.debug("%s: pattern %s bounded by table neighbours", code.code_id, pattern_label(canon))
        lo, hi = 0.0, 1.0
        for q in table.rows:
            if len(q) != len(canon):
                continue
            if dominates(q, canon):
                lo = max(lo, 1.0 - table.fer(q, es_n0))
            if dominates(canon, q):
                hi = min(hi, 1.0 - table.fer(q, es_n0))
        return min(max(mi_p, lo), hi)


# -- calibration --------------------------------------------------------------

def fifty_percent_point(table: FerTable, pattern: tuple[int, ...]) -> float | None:
    """Es/N0 (dB) where the pattern's FER crosses 0.5, or None if it never does."""
    esn0, fer = table.rows[pattern]
    if fer[0] < 0.5 or fer[-1] > 0.5:
        return None
    i = int(np.nonzero(fer <= 0.5)[0][0])
    if i == 0 or fer[i] == 0.5:
        return float(esn0[i])
    x0, x1 = esn0[i - 1], esn0[i]
    y0, y1 = math.log(max(fer[i - 1], 1e-300)), math.log(max(fer[i], 1e-300))
    return float(x0 + (math.log(0.5) - y0) * (x1 - x0) / (y1 - y0))


def mi_threshold_esn0(pattern, code: CodeSpec, margin: float, n_fragments: int) -> float:
    """Es/N0 at which the hard mutual-information rule starts to succeed (inf if never)."""
    per_burst = payload_partition(code, 1).total_symbols / n_fragments
    need = (1.0 + margin) * code.info_bits
    thr = code.erasure_degree_threshold

    def excess(x):
        return mi_bits(pattern, x, per_burst, thr) - need

    if excess(80.0) < 0:
        return math.inf
    if excess(-40.0) >= 0:
        return -40.0
    return brentq(excess, -40.0, 80.0, xtol=1e-9)


def calibrate_margin(table: FerTable, code: CodeSpec) -> tuple[float, dict]:
    """Fit the mutual-information margin to the table's 50 %-FER points.

    Uses the uniform patterns (every burst at the same degree) whose curve crosses
    FER 0.5; returns the least-squares margin (dB error) and per-pattern details.
    """
    targets = {}
    for pat in table.patterns():
        if len(set(pat)) == 1 and pat[0] <= code.erasure_degree_threshold:
            x50 = fifty_percent_point(table, pat)
            if x50 is not None:
                targets[pat] = x50
    if not targets:
        raise ConfigurationError(f"{table.code_id}: no uniform pattern crosses FER 0.5")

    # exact per-pattern margins bracket the least-squares fit
    per_burst = payload_partition(code, 1).total_symbols
    exact = [mi_bits(p, x, per_burst / len(p), code.erasure_degree_threshold) / code.info_bits - 1.0
             for p, x in targets.items()]
    lo, hi = min(exact), max(exact)
    if hi - lo < 1e-9:
        margin = lo
    else:
        def cost(m):
            err = 0.0
            for pat, x50 in targets.items():
                t = mi_threshold_esn0(pat, code, m, len(pat))
                err += (t - x50) ** 2 if math.isfinite(t) else 1e6
            return err

        res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
        margin = float(res.x)
    detail = {pattern_label(p): {"esn0_50_db": x, "model_db": mi_threshold_esn0(p, code, margin, len(p))}
              for p, x in targets.items()}
    return margin, detail


def capacity_gap_table(code: CodeSpec, n_b: int, gap_db: float, spread_db: float,
                       esn0_grid: Sequence[float], max_degree: int | None = None) -> FerTable:
    """Synthetic waterfall curves for the uniform patterns of ``code``.

    Each curve is a Gaussian-CDF waterfall (in dB of burst SINR) centred ``gap_db``
    above the SINR at which QPSK capacity equals the code's spectral efficiency.
    """
    geom = payload_partition(code, n_b)
    eff = code.info_bits / geom.total_symbols
    centre = 10 * math.log10(capacity_sinr(eff)) + gap_db
    top = code.erasure_degree_threshold if max_degree is None else max_degree
    table = FerTable(code.code_id)
    grid = np.array(sorted(float(x) for x in esn0_grid))
    for d in range(top + 1):
        fers = []
        for x in grid:
            s = 10 * math.log10(burst_sinr(x, d))
            f = 0.5 * math.erfc((s - centre) / (spread_db * math.sqrt(2.0)))
            fers.append(float(f"{max(f, 1e-9):.4g}"))
        table.rows[(d,) * n_b] = (grid.copy(), np.array(fers))
    return table


def load_phy(name: str, fer_table: str | Path | None = None, margin: float | None = None,
             min_clean_fragments: int | None = None) -> PhyModel:
    tables = read_fer_tables(fer_table) if fer_table else {}
    return PhyModel.from_name(name, margin=margin, tables=tables,
                              min_clean_fragments=min_clean_fragments)

