"""Command-line entry point: ``uavmfg {validate,run,compare,slice}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, parse_config
from .diagnostics import (
    read_field_dump,
    write_field_dump,
    write_metrics,
    write_run_meta,
    write_slice_csv,
    write_slice_image,
    error_norms,
)
from .errors import ConfigError, EmptySourceRegion, FormatVersionMismatch, GeometryError, IoFailure
from .geometry import classify_cells
from .picard import run_picard
from .scenario import build_source, validate_controllability

log = logging.getLogger("uavmfg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4

SCHEMA_VERSION = 1

EPILOG = """\
exit codes:
  0  success
  1  usage error
  2  configuration or controllability validation failure
  3  non-convergence (run --strict only)
  4  I/O failure

environment:
  MFG_THREADS  worker-thread cap for numeric libraries (default 1)
"""


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uavmfg", description=__doc__, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="parse a config and check controllability")
    v.add_argument("--config", required=True, type=Path)

    r = sub.add_parser("run", help="run the coupled solver and write a run directory")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--backend", choices=("fsm", "pinn"))
    r.add_argument("--seed", type=int)
    r.add_argument("--dump-every", type=int, metavar="K", help="dump fields every K outer iterations (default: first and last)")
    r.add_argument("--strict", action="store_true", help="exit 3 if any solver did not converge")
    r.add_argument("--no-timing", action="store_true", help="write wall_time_s as 0 so metrics.csv is reproducible bit for bit")

    c = sub.add_parser("compare", help="error norms between two runs (JSON on stdout)")
    c.add_argument("--run-a", required=True, type=Path)
    c.add_argument("--run-b", required=True, type=Path)
    c.add_argument("--field", choices=("phi", "rho"), default="phi")
    c.add_argument("--iter", default="last")

    s = sub.add_parser("slice", help="export a 2D slice of a dumped field")
    s.add_argument("--run", required=True, type=Path)
    s.add_argument("--field", choices=("phi", "rho", "u"), default="phi")
    s.add_argument("--axis", choices=("x", "y", "z"), default="z")
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--iter", default="last")
    s.add_argument("--format", choices=("ppm", "csv"), default="ppm")
    s.add_argument("--out", type=Path)
    return p


def _limit_threads():
    n = max(1, int(os.environ.get("MFG_THREADS", "1")))
    try:
        import numba

        with warnings.catch_warnings():
            # numba probes optional threading layers and warns about old TBB builds
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _read_config(path: Path) -> tuple[bytes, ScenarioConfig]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc
    return raw, parse_config(raw.decode("utf-8"))


def cmd_validate(args) -> int:
    try:
        _, cfg = _read_config(args.config)
        report = validate_controllability(cfg)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(report.summary())
    if not report.passed:
        return EXIT_VALIDATION
    try:
        geom = classify_cells(cfg)
        build_source(cfg, geom)
    except (GeometryError, EmptySourceRegion) as exc:
        print(f"invalid geometry: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    counts = geom.counts()
    print(f"cells: free={counts['free']} obstacle={counts['obstacle']} target={counts['target']}")
    return EXIT_OK


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump_state(out: Path, state, bounds) -> float:
    t0 = time.perf_counter()
    k = state.outer_iter
    write_field_dump(state.phi, bounds, out / "fields" / f"phi_{k:04d}.mfg")
    write_field_dump(state.rho, bounds, out / "fields" / f"rho_{k:04d}.mfg")
    write_field_dump(state.u, bounds, out / "fields" / f"u_{k:04d}.mfg")
    return time.perf_counter() - t0


def cmd_run(args) -> int:
    started = _utc_now()
    try:
        raw, cfg = _read_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.backend is not None:
        updates["value_solver"] = cfg.value_solver.model_copy(update={"backend": args.backend})
    cfg = cfg.model_copy(update=updates)
    if args.dump_every is not None and args.dump_every < 1:
        print("--dump-every must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    report = validate_controllability(cfg)
    if not report.passed:
        print(report.summary(), file=sys.stderr)
        return EXIT_VALIDATION
    try:
        geom = classify_cells(cfg)
        source = build_source(cfg, geom)
    except (GeometryError, EmptySourceRegion) as exc:
        print(f"invalid geometry: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out: Path = args.out
    try:
        (out / "fields").mkdir(parents=True, exist_ok=True)
        (out / "slices").mkdir(exist_ok=True)
        suffix = args.config.suffix or ".yaml"
        (out / f"config_snapshot{suffix}").write_bytes(raw)
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    bounds = geom.bounds
    io_time = 0.0
    dumped: set[int] = set()

    def on_iter(state, row):
        nonlocal io_time
        k = state.outer_iter
        if (args.dump_every is None and k == 0) or (args.dump_every is not None and k % args.dump_every == 0):
            io_time += _dump_state(out, state, bounds)
            dumped.add(k)

    try:
        with _limit_threads():
            result = run_picard(cfg, geom, source.q, callback=on_iter)
        final = result.state
        if final.outer_iter not in dumped:
            io_time += _dump_state(out, final, bounds)
        t0 = time.perf_counter()
        rows = result.rows
        if args.no_timing:
            rows = [dict(r, wall_time_s=0.0) for r in rows]
        write_metrics(rows, out / "metrics.csv")
        mid = geom.shape[2] // 2
        write_slice_image(final.phi, "z", mid, out / "slices" / f"phi_{final.outer_iter:04d}_z{mid}.ppm")
        write_slice_image(final.rho, "z", mid, out / "slices" / f"rho_{final.outer_iter:04d}_z{mid}.ppm")
        io_time += time.perf_counter() - t0

        ok = result.converged and result.all_inner_converged
        status = "converged" if ok else "not_converged"
        meta = {
            "schema_version": SCHEMA_VERSION,
            "config_sha256": hashlib.sha256(raw).hexdigest(),
            "seed": int(cfg.seed),
            "backend": cfg.backend,
            "grid_shape": list(geom.shape),
            "started_utc": started,
            "finished_utc": _utc_now(),
            "phase_durations_s": {"value": result.t_value, "transport": result.t_transport, "io": io_time},
            "outer_iters": len(result.rows),
            "exit_status": status,
        }
        write_run_meta(meta, out / "run_meta.json")
    except (IoFailure, OSError) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO

    print(f"{status} after {len(result.rows)} outer iterations; artifacts in {out}")
    if args.strict and not ok:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


_DUMP_RE = re.compile(r"^(phi|rho|u)_(\d{4,})\.mfg$")


def _dump_path(run: Path, field: str, which: str) -> Path:
    fields = run / "fields"
    if which == "last":
        iters = sorted(
            int(m.group(2)) for p in fields.glob(f"{field}_*.mfg") if (m := _DUMP_RE.match(p.name)) and m.group(1) == field
        )
        if not iters:
            raise IoFailure(fields, f"no {field} dumps")
        k = iters[-1]
    else:
        k = int(which)
    return fields / f"{field}_{k:04d}.mfg"


def _snapshot_config(run: Path) -> ScenarioConfig:
    snaps = sorted(run.glob("config_snapshot.*"))
    if not snaps:
        raise IoFailure(run, "no config_snapshot in run directory")
    return _read_config(snaps[0])[1]


def cmd_compare(args) -> int:
    try:
        geom = classify_cells(_snapshot_config(args.run_a))
        a = read_field_dump(_dump_path(args.run_a, args.field, args.iter))
        b = read_field_dump(_dump_path(args.run_b, args.field, args.iter))
    except (IoFailure, FormatVersionMismatch, ConfigError, GeometryError) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    if a.values.shape != b.values.shape or a.values.shape != geom.shape:
        print("runs have different grids", file=sys.stderr)
        return EXIT_USAGE
    report = error_norms(b.values, a.values, geom.free)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_slice(args) -> int:
    try:
        path = _dump_path(args.run, args.field, args.iter)
        dump = read_field_dump(path)
    except (IoFailure, FormatVersionMismatch) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    values = np.linalg.norm(dump.values, axis=-1) if dump.is_vector else dump.values
    d = "xyz".index(args.axis)
    if not 0 <= args.index < values.shape[d]:
        print(f"--index must lie in [0, {values.shape[d]})", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or args.run / "slices" / f"{path.stem}_{args.axis}{args.index}.{args.format}"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        if args.format == "ppm":
            write_slice_image(values, args.axis, args.index, out)
        else:
            write_slice_csv(values, args.axis, args.index, out)
    except (IoFailure, OSError) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(out)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "compare": cmd_compare, "slice": cmd_slice}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except IoFailure as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)
