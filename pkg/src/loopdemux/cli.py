"""Command-line entry point: simulate, analyze, schedule, explore.

Exit codes: 0 success, 1 invalid input (config, missing files), 2 infeasible
switching schedule.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import pipeline as pl
from .clock_source import ClockConfig
from .config import ConfigError, RunConfig, apply_overrides, load, paper_preset, serialize
from .control_sequencer import (InfeasibleScheduleError, TtlSchedule, build_schedule,
                                explore_variant, min_channels, validate_schedule)
from .detection import TimeTagStream

log = logging.getLogger("loopdemux")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2
MANIFEST = "manifest.json"


class InputError(Exception):
    pass


def _resolve_config(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError(["--config and --preset are mutually exclusive"])
    if args.config:
        cfg = load(args.config)
    elif args.preset == "paper":
        cfg = paper_preset()
    else:
        cfg = RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "pulses", None) is not None:
        overrides.append(f"run.n_pulses={args.pulses}")
    if args.command == "simulate" and args.out is not None:
        overrides.append(f"run.output_dir={args.out}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("simulating %d pulses, seed %d", cfg.n_pulses, cfg.seed)
    result = pl.simulate_run(cfg, shards=args.shards, workers=args.workers)
    streams = pl.measure(result)
    files = {}
    for name, stream in streams.items():
        path = out / f"{name}.csv"
        stream.to_csv(path)
        files[path.name] = {"events": len(stream), "sha256": _sha256(path)}
    # the first firings of the schedule, as a sample of what drove the cell
    n = min(cfg.run.schedule_firings, len(result.schedule))
    schedule_path = out / "schedule.csv"
    TtlSchedule(result.schedule.edges[:n], result.schedule.cycles[:n],
                result.schedule.rise, result.schedule.fall).to_csv(schedule_path)
    files[schedule_path.name] = {"events": n, "sha256": _sha256(schedule_path)}
    manifest = {
        "artifact": "loopdemux",
        "version": __version__,
        # the manifest sits in the output directory, so it names that as "."
        "config": serialize(cfg.with_run(output_dir=".")),
        "run": pl.RunInfo.from_config(cfg).as_dict(),
        "files": files,
    }
    _dump_json(manifest, out / MANIFEST)
    for ch in range(1, cfg.demux.n_slots + 1):
        n = len(streams[f"channel_{ch}"])
        print(f"channel_{ch}: {n} clicks ({n / cfg.n_pulses:.5f} per pulse)")
    print(f"wrote {len(files)} files and {MANIFEST} to {out}")
    return EXIT_OK


def _required_streams(info: pl.RunInfo, mode: str) -> list[str]:
    if mode == "auto":
        names = ["source_hbt_a", "source_hbt_b"]
        for ch in range(1, info.n_channels + 1):
            names += [f"channel_{ch}", f"channel_{ch}_hbt_a", f"channel_{ch}_hbt_b"]
        return names
    if mode == "hom":
        names = ["source_hbt_a", "source_hbt_b"]
        for i, j in info.hom_pairs:
            names += [f"hom_{i}{j}_a", f"hom_{i}{j}_b"]
        return names
    return [f"channel_{ch}" for ch in range(1, info.n_channels + 1)]


def load_run(input_dir, mode: str):
    """Run description and the streams ``mode`` needs, or InputError listing what is missing."""
    input_dir = Path(input_dir)
    manifest_path = input_dir / MANIFEST
    if not manifest_path.is_file():
        raise InputError(f"missing in {input_dir}:\n  {MANIFEST}")
    info = pl.RunInfo.from_dict(json.loads(manifest_path.read_text())["run"])
    names = _required_streams(info, mode)
    missing = [f"{n}.csv" for n in names if not (input_dir / f"{n}.csv").is_file()]
    if missing:
        raise InputError(f"missing in {input_dir}:\n  " + "\n  ".join(missing))
    streams = {n: TimeTagStream.from_csv(input_dir / f"{n}.csv", channel_id=n) for n in names}
    return info, streams


def cmd_analyze(args) -> int:
    info, streams = load_run(args.input, args.mode)
    if args.mode == "auto":
        res = pl.analyze_auto(streams, info)
    elif args.mode == "hom":
        res = pl.analyze_hom(streams, info, g2=args.g2)
    else:
        res = pl.analyze_rates(streams, info, min_counts=args.min_counts)
    if all(len(s) == 0 for s in streams.values()):
        res.warnings.append("all input streams are empty")
    out = Path(args.out) if args.out else Path(args.input) / f"analysis_{args.mode}"
    out.mkdir(parents=True, exist_ok=True)
    for name, hist in res.histograms.items():
        hist.to_csv(out / f"hist_{name}.csv")
    summary = dict(res.summary, warnings=res.warnings)
    _dump_json(summary, out / "summary.json")
    for w in res.warnings:
        log.warning(w)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _resolve_config(args)
    period = args.period or cfg.demux.switch_period_cycles
    n_firings = args.firings or cfg.run.schedule_firings
    phase = cfg.phase_cycles if cfg.phase_cycles is not None else period - 1
    schedule = build_schedule(cfg.clock, cfg.driver, period, n_firings, phase, cfg.phase_offset)
    report = validate_schedule(schedule, cfg.clock, cfg.driver)
    out = Path(args.out) if args.out else Path(cfg.run.output_dir) / "schedule.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    schedule.to_csv(out)
    print(f"period: {period} cycles = {period * cfg.clock.pulse_period:.4f} ns")
    print(f"duty: {cfg.demux.n_slots}/{period}")
    print("\n".join(report.lines()))
    print(f"wrote {out}")
    return EXIT_OK if report.ok else EXIT_INFEASIBLE


def cmd_explore(args) -> int:
    cfg = _resolve_config(args)
    rep_rate = args.rep_rate or cfg.clock.rep_rate
    switch_rate = args.switch_rate or cfg.driver.max_continuous_rate
    clock = ClockConfig(rep_rate)
    rows = []
    for doubled in ([False, True] if args.doubled else [False]):
        v = explore_variant(cfg.demux, clock, doubled,
                            replace(cfg.driver, max_continuous_rate=switch_rate))
        rows.append(v.as_dict())
    n_min = min_channels(rep_rate, switch_rate)
    if args.json:
        print(json.dumps({"n_min": n_min, "variants": rows}, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"N_min = {n_min}  (rep rate {rep_rate / 1e6:g} MHz, switch rate {switch_rate / 1e6:g} MHz)")
    cols = list(rows[0])
    print("  ".join(cols))
    for r in rows:
        print("  ".join(str(r[c]) for c in cols))
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--preset", choices=["paper"], help="bundled parameter set")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    if run_flags:
        p.add_argument("--seed", type=int)
        p.add_argument("--pulses", type=int, help="number of pump pulses")
    p.add_argument("--out", help="output directory (simulate) or file (schedule)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loopdemux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a run and write time-tag CSVs")
    _add_config_flags(p)
    p.add_argument("--shards", type=int, default=1, help="split the run into this many shards")
    p.add_argument("--workers", type=int, default=1, help="processes used for the shards")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="correlate and fit a simulated or measured run")
    p.add_argument("input", help="directory written by 'simulate'")
    p.add_argument("--mode", choices=["auto", "hom", "rates"], default="auto")
    p.add_argument("--out", help="output directory (default INPUT/analysis_MODE)")
    p.add_argument("--g2", type=float, help="g2(0) for the HOM correction (default: measured)")
    p.add_argument("--min-counts", type=int, default=100,
                   help="minimum events for an n-fold level to enter the fit")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("schedule", help="build and validate the TTL schedule")
    _add_config_flags(p, run_flags=False)
    p.add_argument("--period", type=int, help="firing period in clock cycles")
    p.add_argument("--firings", type=int, help="number of firings to emit")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("explore", help="channel count and duty of design variants")
    _add_config_flags(p, run_flags=False)
    p.add_argument("--rep-rate", type=float, help="pump repetition rate in Hz")
    p.add_argument("--switch-rate", type=float, help="maximum continuous switching rate in Hz")
    p.add_argument("--doubled", action="store_true", help="also show the doubled-rate variant")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_explore)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleScheduleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
