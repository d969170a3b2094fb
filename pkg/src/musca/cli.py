"""Command-line front end.

    musca trial      --scheme MUSCA --slots 100 --load 1.2 --esn0 10 --phy fer-table
    musca sweep-load --scheme "CRDSA(3)" --load 0.1:1.0:0.1 --frames 2000 --out results
    musca sweep-snr  --scheme MUSCA --esn0 0:10:1 --load 0.5:1.5:0.05 --out results
    musca calibrate  --code turbo-1/6 --fer-table fer.csv
    musca validate-fer fer.csv

Exit codes: 0 success, 2 invalid configuration, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from .core import ConfigurationError, InvalidInputError
from .harness import (ExperimentConfig, Point, StopRule, config_from_mapping, emit_results,
                      load_config, peak_records, point_rng, run_trial, sweep_load)
from .phy import calibrate_margin, read_fer_tables, resolve_data_path
from .protocols import get_code, make_transmissions
from .receiver import write_trace

EXIT_CONFIG = 2
EXIT_IO = 3


def parse_grid(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (stop inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError("step must be > 0")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(max(n, 0))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from None


def parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment file; flags override its values")
    p.add_argument("--scheme", help="SA, DSA, CRDSA(3), CRDSA++(3), IRSA(2:0.5;3:0.5), CSA, MUSCA(turbo-1/6)")
    p.add_argument("--code", dest="code_id", help="code id from the catalogue")
    p.add_argument("--slots", dest="num_slots", type=int)
    p.add_argument("--nb", dest="n_b", type=int, help="bursts per user")
    p.add_argument("--esn0", dest="es_n0_db", type=parse_grid, help="Es/N0 list or start:stop:step, dB")
    p.add_argument("--load", dest="loads", type=parse_grid, help="G list or start:stop:step")
    p.add_argument("--users", dest="num_users", type=parse_ints, help="user counts instead of --load")
    p.add_argument("--seed", dest="base_seed", type=int)
    p.add_argument("--phy", choices=["erasure", "fer-table", "sinr-mi"])
    p.add_argument("--margin", type=float, help="mutual-information margin override")
    p.add_argument("--fer-table", dest="fer_table", help="FER table CSV")
    p.add_argument("--level", choices=["abstract", "signal"])
    p.add_argument("-v", "--verbose", action="store_true")


def _sweep_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", dest="frames_per_point", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--min-failures", type=int, help="adaptive stop: lost blocks per point")
    p.add_argument("--max-frames", type=int, help="adaptive stop: frame cap per point")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--format", choices=["csv", "structured"], default="csv")


_CONFIG_KEYS = ("scheme", "code_id", "num_slots", "n_b", "es_n0_db", "loads", "num_users",
                "base_seed", "phy", "margin", "fer_table", "level", "frames_per_point", "workers")


def build_config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        config = load_config(args.config, overrides)
    else:
        config = config_from_mapping(overrides)
    if "loads" in overrides and "num_users" not in overrides:
        config.num_users = None  # a load grid on the command line beats file user counts
    mf, mx = getattr(args, "min_failures", None), getattr(args, "max_frames", None)
    if mf is not None or mx is not None:
        stop = config.stop
        config.stop = StopRule(mf if mf is not None else stop.min_failures,
                               mx if mx is not None else stop.max_frames, stop.batch)
    return config


def cmd_trial(args) -> int:
    config = build_config(args)
    users = config.user_counts()[0] if (config.loads or config.num_users) else config.num_slots
    point = Point(config.es_n0_db[0], users)
    outcome = run_trial(config, point, args.trial_index)
    if args.dump_waveform:
        _dump(config, point, args)
    write_trace(outcome.trace, sys.stdout)
    decoded = len(outcome.decoded())
    print(f"# {config.label()} N_s={config.num_slots} N_u={users} Es/N0={point.es_n0_db:g} dB: "
          f"decoded {decoded}/{users}, iterations {outcome.iterations_used}, "
          f"deadlock {outcome.deadlock}", file=sys.stderr)
    return 0


def _dump(config: ExperimentConfig, point: Point, args) -> None:
    from .waveform import default_codecs, dump_waveform, simulate_signal_frame
    rng = point_rng(config, point, args.trial_index)
    plans = make_transmissions(config.resolved_scheme(), point.num_users, config.frame(), rng,
                               config.code())
    res = simulate_signal_frame(plans, None, default_codecs(), point.es_n0_db, rng, config.d_sig)
    dump_waveform(res.received, args.dump_waveform)
    print(f"# waveform: {res.received.shape[0]} slots x {res.received.shape[1]} symbols, "
          f"complex64 little-endian -> {args.dump_waveform}", file=sys.stderr)


def _print_records(records) -> None:
    for r in records:
        print(f"{r.scheme:>18} Ns={r.num_slots} {r.es_n0_db:6.2f} dB  G={r.load:.3f}  "
              f"T={r.throughput:.4f}±{r.throughput_ci95:.4f}  PLR={r.plr:.3e}  ({r.frames} frames)")


def cmd_sweep_load(args) -> int:
    config = build_config(args)
    records = sweep_load(config)
    path = emit_results(records, args.out, args.format)
    _print_records(records)
    print(f"# wrote {path}", file=sys.stderr)
    return 0


def cmd_sweep_snr(args) -> int:
    config = build_config(args)
    records = sweep_load(config)
    emit_results(records, args.out, args.format)
    peaks = peak_records(records)
    out = Path(args.out) / "peaks.csv"
    try:
        with out.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "num_slots", "esn0_db", "peak_throughput", "argmax_load"])
            for e in sorted(peaks):
                r = peaks[e]
                w.writerow([r.scheme, r.num_slots, repr(e), repr(r.throughput), repr(r.load)])
                print(f"{e:6.2f} dB  peak T={r.throughput:.4f} at G={r.load:.3f}")
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    print(f"# wrote {out}", file=sys.stderr)
    return 0


def cmd_calibrate(args) -> int:
    code = get_code(args.code)
    path = args.fer_table or code.fer_table
    if path is None:
        raise ConfigurationError(f"{args.code}: no FER table given or catalogued")
    tables = read_fer_tables(resolve_data_path(path))
    if code.code_id not in tables:
        raise ConfigurationError(f"{path}: no rows for {code.code_id}")
    margin, detail = calibrate_margin(tables[code.code_id], code)
    print(f"{code.code_id}: mi_margin = {margin:.6f}")
    for label, d in detail.items():
        print(f"  {label}: table 50% point {d['esn0_50_db']:.3f} dB, model {d['model_db']:.3f} dB")
    return 0


def cmd_validate_fer(args) -> int:
    tables = read_fer_tables(resolve_data_path(args.path), validate=False)
    bad = 0
    for code_id, table in sorted(tables.items()):
        problems = table.violations()
        bad += len(problems)
        status = "ok" if not problems else f"{len(problems)} violation(s)"
        print(f"{code_id}: {len(table.patterns())} patterns, {status}")
        for msg in problems:
            print(f"  {msg}")
    return EXIT_CONFIG if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="musca", description="Slotted random-access SIC simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trial", help="simulate one frame and print its decoding trace")
    _common(p)
    p.add_argument("--trial-index", type=int, default=0)
    p.add_argument("--dump-waveform", help="write the received frame (complex64) to this file")
    p.set_defaults(func=cmd_trial)

    p = sub.add_parser("sweep-load", help="throughput/PLR versus load")
    _common(p)
    _sweep_opts(p)
    p.set_defaults(func=cmd_sweep_load)

    p = sub.add_parser("sweep-snr", help="peak throughput versus Es/N0")
    _common(p)
    _sweep_opts(p)
    p.set_defaults(func=cmd_sweep_snr)

    p = sub.add_parser("calibrate", help="fit the mutual-information margin to a FER table")
    p.add_argument("--code", required=True)
    p.add_argument("--fer-table", dest="fer_table")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("validate-fer", help="check FER table range, monotonicity and dominance")
    p.add_argument("path")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_validate_fer)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"musca: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"musca: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
