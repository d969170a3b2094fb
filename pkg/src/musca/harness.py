"""Monte Carlo experiment runner: load/SNR sweeps, statistics and result files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml
from scipy.stats import norm

from .core import ConfigurationError, FrameConfig, InvalidInputError, trial_rng
from .phy import PhyModel, PhyVariant, load_phy
from .protocols import CodeSpec, Scheme, SchemeKind, get_code, make_transmissions, parse_scheme
from .receiver import SicOutcome, Status, run_sic

log = logging.getLogger(__name__)

CSV_HEADER = ["scheme", "num_slots", "n_b", "esn0_db", "load", "frames", "throughput",
              "throughput_ci95", "plr", "plr_ci95"]
Z95 = float(norm.ppf(0.975))


def default_load_grid() -> list[float]:
    return [round(0.05 * i, 2) for i in range(1, 41)]


@dataclass
class StopRule:
    """Keep adding batches of frames until ``min_failures`` lost blocks or ``max_frames``."""

    min_failures: int | None = None
    max_frames: int = 10 ** 6
    batch: int = 1000

    def __post_init__(self):
        if self.batch < 1 or self.max_frames < 1:
            raise ConfigurationError("stop rule batch and max_frames must be >= 1")


@dataclass
class ExperimentConfig:
    scheme: str = "MUSCA"
    code_id: str | None = None
    num_slots: int = 100
    n_b: int | None = None
    phy: str = "erasure"
    margin: float | None = None
    fer_table: str | None = None
    min_clean_fragments: int | None = None
    es_n0_db: list[float] = field(default_factory=lambda: [10.0])
    loads: list[float] | None = None
    num_users: list[int] | None = None
    frames_per_point: int = 1000
    base_seed: int = 1
    stop: StopRule = field(default_factory=StopRule)
    level: str = "abstract"
    d_sig: int = 1
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.stop, dict):
            self.stop = StopRule(**self.stop)
        if self.frames_per_point < 1:
            raise ConfigurationError("frames_per_point must be >= 1")
        if self.num_slots < 1:
            raise ConfigurationError("num_slots must be >= 1")
        if self.loads is not None and any(not g > 0 for g in self.loads):
            raise ConfigurationError("load values must be > 0")
        if self.num_users is not None and any(n < 0 for n in self.num_users):
            raise ConfigurationError("user counts must be >= 0")
        if self.level not in ("abstract", "signal"):
            raise ConfigurationError(f"level must be 'abstract' or 'signal', got {self.level!r}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.phy not in {v.value for v in PhyVariant}:
            raise ConfigurationError(
                f"unknown phy {self.phy!r}; use one of {[v.value for v in PhyVariant]}")
        self.resolved_scheme()

    # derived pieces

    def resolved_scheme(self) -> Scheme:
        s = parse_scheme(self.scheme)
        if self.code_id and not s.code_id:
            s = replace(s, code_id=self.code_id)
        if self.n_b is not None:
            s = s.with_n_b(self.n_b)
        return s

    def code(self) -> CodeSpec:
        return get_code(self.resolved_scheme().default_code_id())

    def user_counts(self) -> list[int]:
        if self.num_users is not None:
            return list(self.num_users)
        grid = self.loads if self.loads is not None else default_load_grid()
        return [int(round(g * self.num_slots)) for g in grid]

    def points(self) -> list[Point]:
        return [Point(float(e), n) for e in self.es_n0_db for n in self.user_counts()]

    def frame(self) -> FrameConfig:
        return FrameConfig(self.num_slots)

    def label(self) -> str:
        return str(self.resolved_scheme())

    def n_b_label(self) -> int:
        """Bursts per user; 0 when sampled per user (IRSA)."""
        return self.resolved_scheme().fixed_n_b(self.code()) or 0


@dataclass(frozen=True)
class Point:
    es_n0_db: float
    num_users: int


@dataclass
class MetricsRecord:
    scheme: str
    num_slots: int
    n_b: int
    es_n0_db: float
    load: float
    frames: int
    decoded_blocks: int
    offered_blocks: int
    throughput: float
    throughput_ci95: float
    plr: float
    plr_ci95: float

    @classmethod
    def from_counts(cls, scheme: str, num_slots: int, n_b: int, es_n0_db: float,
                    num_users: int, frames: int, decoded: int) -> MetricsRecord:
        offered = num_users * frames
        if not 0 <= decoded <= offered:
            raise InvalidInputError(f"decoded={decoded} outside [0, {offered}]")
        load = num_users / num_slots
        if offered:
            plr = 1.0 - decoded / offered
            half = wilson_halfwidth(offered - decoded, offered)
        else:
            plr, half = 0.0, 0.0
        return cls(scheme, num_slots, n_b, es_n0_db, load, frames, decoded, offered,
                   load * (1.0 - plr), load * half, plr, half)


def wilson_interval(failures: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = failures / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def wilson_halfwidth(failures: int, n: int, z: float = Z95) -> float:
    lo, hi = wilson_interval(failures, n, z)
    return (hi - lo) / 2.0


# -- trials -------------------------------------------------------------------

def _esn0_key(es_n0_db: float) -> int:
    if math.isinf(es_n0_db):
        return 1 << 40
    return int(round(es_n0_db * 1000))


def point_rng(config: ExperimentConfig, point: Point, trial_index: int) -> np.random.Generator:
    # scheme-independent: every scheme sees the same random stream per trial
    return trial_rng(config.base_seed, config.num_slots, point.num_users,
                     _esn0_key(point.es_n0_db), trial_index)


@lru_cache(maxsize=32)
def _phy_for(phy: str, fer_table: str | None, margin: float | None,
             min_clean: int | None) -> PhyModel:
    return load_phy(phy, fer_table=fer_table, margin=margin, min_clean_fragments=min_clean)


def phy_for(config: ExperimentConfig) -> PhyModel:
    return _phy_for(config.phy, config.fer_table, config.margin, config.min_clean_fragments)


def run_trial(config: ExperimentConfig, point: Point, trial_index: int) -> SicOutcome:
    """One frame; fully determined by (base_seed, point, trial_index)."""
    rng = point_rng(config, point, trial_index)
    if point.num_users == 0:
        return SicOutcome({}, 0, False, [])
    scheme = config.resolved_scheme()
    code = config.code()
    frame = config.frame()
    plans = make_transmissions(scheme, point.num_users, frame, rng, code)
    if config.level == "signal":
        from .waveform import default_codecs, run_signal_level_sic
        return run_signal_level_sic(plans, None, default_codecs(), point.es_n0_db, rng,
                                    config.d_sig)
    return run_sic(plans, frame, phy_for(config), rng, point.es_n0_db, d_sig=config.d_sig)


def _fast_path(config: ExperimentConfig) -> bool:
    s = config.resolved_scheme()
    return s.kind is SchemeKind.SA and config.phy == "erasure" and config.level == "abstract"


def sa_erasure_decoded(config: ExperimentConfig, point: Point, trial_index: int) -> int:
    """Decoded count for SA under collision erasure: the singleton slots.

    Draws the same placement as :func:`run_trial`, so the count equals the full
    receiver's result trial by trial.
    """
    if point.num_users == 0:
        return 0
    rng = point_rng(config, point, trial_index)
    slots = rng.integers(0, config.num_slots, size=(point.num_users, 1))[:, 0]
    return int(np.count_nonzero(np.bincount(slots, minlength=config.num_slots) == 1))


def _run_chunk(args) -> int:
    config, point, start, stop = args
    if _fast_path(config):
        return sum(sa_erasure_decoded(config, point, t) for t in range(start, stop))
    total = 0
    for t in range(start, stop):
        total += run_trial(config, point, t).count(Status.DECODED)
    return total


def _chunks(start: int, stop: int, pieces: int) -> list[tuple[int, int]]:
    edges = np.linspace(start, stop, max(1, pieces) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


class _Runner:
    def __init__(self, workers: int):
        self.workers = workers
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def decoded(self, config: ExperimentConfig, point: Point, start: int, stop: int) -> int:
        if self.pool is None:
            return _run_chunk((config, point, start, stop))
        jobs = [(config, point, a, b) for a, b in _chunks(start, stop, 4 * self.workers)]
        return sum(self.pool.map(_run_chunk, jobs))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def measure_point(config: ExperimentConfig, point: Point, runner: _Runner | None = None) -> MetricsRecord:
    own = runner is None
    runner = runner or _Runner(config.workers)
    try:
        frames = config.frames_per_point
        decoded = runner.decoded(config, point, 0, frames)
        rule = config.stop
        if rule.min_failures is not None:
            while (point.num_users * frames - decoded < rule.min_failures
                   and frames < rule.max_frames and point.num_users > 0):
                step = min(rule.batch, rule.max_frames - frames)
                decoded += runner.decoded(config, point, frames, frames + step)
                frames += step
    finally:
        if own:
            runner.close()
    return MetricsRecord.from_counts(config.label(), config.num_slots, config.n_b_label(),
                                     point.es_n0_db, point.num_users, frames, decoded)


def sweep_load(config: ExperimentConfig) -> list[MetricsRecord]:
    runner = _Runner(config.workers)
    try:
        out = []
        for p in config.points():
            rec = measure_point(config, p, runner)
            log.info("%s N_s=%d %.2f dB G=%.3f T=%.4f PLR=%.3g (%d frames)", rec.scheme,
                     rec.num_slots, rec.es_n0_db, rec.load, rec.throughput, rec.plr, rec.frames)
            out.append(rec)
        return out
    finally:
        runner.close()


def peak_records(records: Iterable[MetricsRecord]) -> dict[float, MetricsRecord]:
    """Highest-throughput record per Es/N0 (smallest load on ties)."""
    best: dict[float, MetricsRecord] = {}
    for r in records:
        b = best.get(r.es_n0_db)
        if b is None or r.throughput > b.throughput:
            best[r.es_n0_db] = r
    return best


def sweep_snr(config: ExperimentConfig) -> list[tuple[float, float, float]]:
    """(Es/N0, peak T, load at the peak) for every Es/N0 of the config."""
    peaks = peak_records(sweep_load(config))
    return [(e, peaks[e].throughput, peaks[e].load) for e in sorted(peaks)]


def useful_bits_per_slot(record: MetricsRecord, code: CodeSpec) -> float:
    return record.throughput * code.info_bits


# -- output files ---------------------------------------------------------------

def _row(r: MetricsRecord) -> list[str]:
    return [r.scheme, str(r.num_slots), str(r.n_b), repr(float(r.es_n0_db)), repr(float(r.load)),
            str(r.frames), repr(float(r.throughput)), repr(float(r.throughput_ci95)),
            repr(float(r.plr)), repr(float(r.plr_ci95))]


def write_csv(records: Sequence[MetricsRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow(_row(r))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_structured(records: Sequence[MetricsRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps([asdict(r) for r in records], indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_results(records: Sequence[MetricsRecord], out_dir: str | Path, fmt: str = "csv",
                 stem: str = "results") -> Path:
    """Write ``<out_dir>/<stem>.csv`` or ``<stem>.json``; returns the path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    if fmt == "csv":
        return write_csv(records, out / f"{stem}.csv")
    if fmt == "structured":
        return write_structured(records, out / f"{stem}.json")
    raise ConfigurationError(f"unknown format {fmt!r}")


def _from_csv_row(row: dict) -> MetricsRecord:
    num_slots, frames = int(row["num_slots"]), int(row["frames"])
    load, plr = float(row["load"]), float(row["plr"])
    offered = int(round(load * num_slots)) * frames
    decoded = int(round(offered * (1.0 - plr)))
    return MetricsRecord(row["scheme"], num_slots, int(row["n_b"]), float(row["esn0_db"]), load,
                         frames, decoded, offered, float(row["throughput"]),
                         float(row["throughput_ci95"]), plr, float(row["plr_ci95"]))


def load_results(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if path.suffix == ".json":
        return [MetricsRecord(**d) for d in json.loads(text)]
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames != CSV_HEADER:
        raise InvalidInputError(f"{path}: unexpected header {reader.fieldnames}")
    return [_from_csv_row(row) for row in reader]


# -- config files ----------------------------------------------------------------

_FIELDS = {f.name for f in fields(ExperimentConfig)}


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a config from a (possibly nested) mapping, e.g. a parsed YAML file.

    A ``phy`` section may be a plain variant name or a mapping with
    ``variant``, ``margin``, ``fer_table`` and ``min_clean_fragments``.
    """
    data = dict(data or {})
    phy = data.pop("phy", None)
    if isinstance(phy, dict):
        phy = dict(phy)
        data["phy"] = phy.pop("variant", "erasure")
        for k in ("margin", "fer_table", "min_clean_fragments"):
            if k in phy:
                data[k] = phy.pop(k)
        if phy:
            raise ConfigurationError(f"unknown phy keys: {sorted(phy)}")
    elif phy is not None:
        data["phy"] = phy
    for k in ("es_n0_db", "loads", "num_users"):
        if k in data and data[k] is not None and not isinstance(data[k], list):
            data[k] = [data[k]]
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    config = config_from_mapping(raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if not overrides:
        return config
    unknown = set(overrides) - _FIELDS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return replace(config, **overrides)
