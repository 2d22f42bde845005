"""Command-line entry point: ``entwp <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical or
acceptance failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import acceptance as acc
from .coherence import NegativeYieldError
from .config import ConfigError, RunConfig, load_config, validate
from .events import EventFileError, UnassignedHitError
from .io import TableError
from .pipeline import (propagate_model, run_analyze, run_covmap, run_propagate, run_scan,
                       run_synth, vib_period_fs)
from .propagator import PropagationEdgeError, ZeroOverlapError
from .shaper import AliasingError

log = logging.getLogger("entwp")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _load(args) -> RunConfig:
    cfg = load_config(args.config).with_seed(args.seed)
    sc = cfg.scan
    if getattr(args, "delay_range", None):
        sc.delay_min_fs, sc.delay_max_fs, sc.delay_step_fs = args.delay_range
    if getattr(args, "phases", None):
        sc.n_phases = args.phases
    if getattr(args, "phase_delay", None) is not None:
        sc.phase_delay_fs = args.phase_delay
    validate(cfg)
    return cfg


def _save_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_used.ini").write_text(cfg.to_ini())


def cmd_propagate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    _save_config(cfg, out)
    res = run_propagate(cfg, out, ensemble=args.ensemble, threads=args.threads)
    h = res["hockey"]
    print(f"phase difference at {h.delay_fs:g} fs: leading R^2 = {h.r2:.4f}, "
          f"trailing departure = {h.departure:.3f} rad, hockey stick: {h.holds}")
    if args.ensemble:
        print(f"ensemble persistence: {res['persistence']:.0%} of {len(res['ensemble'])} members")
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    _save_config(cfg, out)
    res = run_scan(cfg, out, args.axis)
    for k in ("delay", "phase"):
        if k in res:
            print(f"{k} scan: {res[k].Y.shape[0]} KER bins x {res[k].Y.shape[1]} points")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    _save_config(cfg, out)
    axes = ("delay", "phase") if args.axis == "both" else (args.axis,)
    paths = run_synth(cfg, out, threads=args.threads, axes=axes)
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_OK


def cmd_covmap(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    maps = run_covmap(cfg, [Path(p) for p in args.events], out, args.threads)
    for name, cm in maps.items():
        print(f"{name}: {cm.cov.shape[0]} KER bins x {cm.cov.shape[1]} {cm.scan_axis} points, "
              f"{int(cm.n_shots.sum())} shots")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    res = run_analyze(cfg, [Path(p) for p in args.maps], Path(args.out))
    for name, r in res.items():
        if r["axis"] == "delay":
            print(f"{name}: dominant period {r['period']:.2f} fs")
        else:
            nsig = sum(f.significant for f in r["fits"])
            hs = r["hockey"]
            extra = "" if hs is None else (f", leading R^2 {hs.leading_r2:.4f}, "
                                           f"departure {hs.trailing_departure:.3f} rad")
            print(f"{name}: {nsig} significant bins{extra}")
    return EXIT_OK


def reproduce(cfg: RunConfig, out: Path, threads: int = 1) -> list[acc.CheckResult]:
    """Full pipeline at the configured scale followed by every acceptance check."""
    t_start = time.perf_counter()
    _save_config(cfg, out)
    log.info("propagating")
    traj = propagate_model(cfg)
    t0 = time.perf_counter()
    prop = run_propagate(cfg, out / "propagate", ensemble=True, threads=threads, traj=traj)
    t_ens = time.perf_counter() - t0
    log.info("scanning")
    scans = run_scan(cfg, out / "scan", "both", traj=traj)
    log.info("generating events")
    events = run_synth(cfg, out / "synth", scans, threads)
    log.info("covariance maps")
    run_covmap(cfg, [events["delay"], events["phase"]], out / "covmap", threads)
    log.info("analysis")
    maps = [out / "scan" / "yield_delay.dat", out / "scan" / "yield_phase.dat",
            out / "covmap" / "covmap_delay.dat", out / "covmap" / "covmap_phase.dat"]
    ana = run_analyze(cfg, maps, out / "analyze")

    log.info("acceptance checks")
    results = [acc.check_unitarity(), acc.check_oracles(), acc.check_dephasing(),
               acc.check_hockey_stick(cfg, threads, (prop["hockey"], prop["ensemble"], t_ens)),
               acc.check_harmonics(cfg), acc.check_sqrt_n(), acc.check_mask(),
               acc.check_covariance()]
    injected = vib_period_fs(cfg)
    results.append(acc.check_fourier(ana["covmap_delay"]["period"] if injected else None,
                                     injected or 0.0))
    results.append(acc.check_end_to_end(cfg, traj))
    # regenerate the phase-scan events and map with the same seed and compare
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ev = run_synth(cfg, tmp / "synth", scans, threads, axes=("phase",))
        run_covmap(cfg, [ev["phase"]], tmp / "covmap", threads)
        again = acc.file_digests(tmp)
    first = {k: v for k, v in acc.file_digests(out).items()
             if k in ("synth/events_phase.csv", "covmap/covmap_phase.dat")}
    again = {k: v for k, v in again.items() if k in first}
    runtime = time.perf_counter() - t_start
    results.append(acc.check_determinism_scale(first, again, runtime))
    results.sort(key=lambda r: r.number)
    lines = [r.line() for r in results]
    lines.append(f"total runtime {time.perf_counter() - t_start:.1f} s on {threads} worker(s)")
    (out / "acceptance.txt").write_text("\n".join(lines) + "\n")
    return results


def cmd_reproduce(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    results = reproduce(cfg, out, args.threads)
    for r in results:
        print(r.line())
    failed = [r.number for r in results if not r.passed]
    if failed:
        print(f"failed criteria: {failed}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"all {len(results)} criteria passed; summary in {out / 'acceptance.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="INI configuration file")
    common.add_argument("--out", type=Path, default=Path("entwp_out"), help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker processes (default: logical cores)")
    common.add_argument("--seed", type=int, default=None, help="override events.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="entwp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("propagate", parents=[common], help="propagate the wave-packet pair")
    sp.add_argument("--ensemble", action="store_true",
                    help="also run the perturbed-potential ensemble")
    sp.set_defaults(func=cmd_propagate)

    sp = sub.add_parser("scan", parents=[common], help="model yield versus delay and/or phase")
    sp.add_argument("--axis", choices=("delay", "phase", "both"), default="both")
    sp.add_argument("--delay-range", nargs=3, type=float, metavar=("MIN", "MAX", "STEP"))
    sp.add_argument("--phases", type=int, help="number of phase samples over 2 pi")
    sp.add_argument("--phase-delay", type=float, help="delay (fs) of the phase scan")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("synth", parents=[common], help="synthetic ion events from the model yield")
    sp.add_argument("--axis", choices=("delay", "phase", "both"), default="both")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("covmap", parents=[common], help="covariance maps from event files")
    sp.add_argument("events", nargs="+", help="event files")
    sp.set_defaults(func=cmd_covmap)

    sp = sub.add_parser("analyze", parents=[common], help="Fourier and phase-fit analysis of maps")
    sp.add_argument("maps", nargs="+", help="yield or covariance map files")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("reproduce", parents=[common],
                        help="full pipeline plus every acceptance check")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EventFileError, TableError, UnassignedHitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PropagationEdgeError as exc:
        print(f"error: {exc}\nhint: increase grid.r_max_bohr, set propagation.absorber_strength > 0 "
              "or shorten propagation.total_fs", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NegativeYieldError, ZeroOverlapError, AliasingError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
