"""Run artifacts: metrics CSV, run metadata, binary field dumps, slices, error norms.

Field dump layout (little endian)::

    b"MFG3DF1\\0"  u32 version  u32 kind  u64 nx ny nz  f64 bounds[6]  f64 payload

``kind`` is 0 for scalar and 1 for 3-vector fields.  The payload runs with x
fastest; vector components are interleaved per cell.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import FormatVersionMismatch, IoFailure

MAGIC = b"MFG3DF1\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQQ6d")
HEADER_SIZE = _HEADER.size  # 88

METRICS_COLUMNS = (
    "outer_iter",
    "eik_res_mean",
    "eik_res_max",
    "eik_loss_final",
    "fvm_iters",
    "fvm_residual_final",
    "rho_change",
    "mass_injected",
    "mass_absorbed",
    "mass_balance_rel_err",
    "wall_time_s",
)
_INT_COLUMNS = {"outer_iter", "fvm_iters"}

RUN_META_KEYS = (
    "schema_version",
    "config_sha256",
    "seed",
    "backend",
    "grid_shape",
    "started_utc",
    "finished_utc",
    "phase_durations_s",
    "outer_iters",
    "exit_status",
)

#: values at or above this are sentinels and are excluded from slice scaling
SENTINEL_THRESHOLD = 1e29


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_metrics(rows: Iterable[dict], path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def read_metrics(path) -> list[dict]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
                raise FormatVersionMismatch(f"{path}: unexpected metrics columns {reader.fieldnames}")
            return [{k: int(v) if k in _INT_COLUMNS else float(v) for k, v in r.items()} for r in reader]
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def write_run_meta(meta: dict, path) -> None:
    missing = [k for k in RUN_META_KEYS if k not in meta]
    extra = [k for k in meta if k not in RUN_META_KEYS]
    if missing or extra:
        raise ValueError(f"run_meta keys mismatch: missing={missing} extra={extra}")
    ordered = {k: meta[k] for k in RUN_META_KEYS}
    try:
        Path(path).write_text(json.dumps(ordered, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def read_run_meta(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


@dataclass(frozen=True)
class FieldDump:
    values: np.ndarray  # (nx, ny, nz) or (nx, ny, nz, 3)
    bounds: tuple[float, ...]

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 4


def encode_field(values, bounds) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        kind = 0
        payload = values.ravel(order="F")
    elif values.ndim == 4 and values.shape[3] == 3:
        kind = 1
        # component index fastest, then x, y, z
        payload = values.transpose(3, 0, 1, 2).ravel(order="F")
    else:
        raise ValueError(f"field must be (nx,ny,nz) or (nx,ny,nz,3), got {values.shape}")
    nx, ny, nz = values.shape[:3]
    header = _HEADER.pack(MAGIC, VERSION, kind, nx, ny, nz, *map(float, bounds))
    return header + payload.astype("<f8").tobytes()


def decode_field(data: bytes, source="<bytes>") -> FieldDump:
    if len(data) < HEADER_SIZE:
        raise FormatVersionMismatch(f"{source}: truncated header")
    magic, version, kind, nx, ny, nz, *bounds = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatVersionMismatch(f"{source}: version {version}, expected {VERSION}")
    if kind not in (0, 1):
        raise FormatVersionMismatch(f"{source}: unknown kind {kind}")
    ncomp = 3 if kind else 1
    count = nx * ny * nz * ncomp
    if len(data) != HEADER_SIZE + 8 * count:
        raise FormatVersionMismatch(f"{source}: payload length {len(data) - HEADER_SIZE}, expected {8 * count}")
    flat = np.frombuffer(data, dtype="<f8", offset=HEADER_SIZE, count=count).astype(np.float64)
    if kind == 0:
        values = flat.reshape((nx, ny, nz), order="F")
    else:
        values = flat.reshape((3, nx, ny, nz), order="F").transpose(1, 2, 3, 0).copy()
    return FieldDump(values=values, bounds=tuple(bounds))


def write_field_dump(values, bounds, path) -> None:
    try:
        Path(path).write_bytes(encode_field(values, bounds))
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def read_field_dump(path) -> FieldDump:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc
    return decode_field(data, path)


_AXES = {"x": 0, "y": 1, "z": 2}


def extract_slice(values, axis, index: int) -> np.ndarray:
    """2D slice ``(n_first, n_second)`` of a scalar field at ``index`` along ``axis``."""
    d = _AXES[axis] if isinstance(axis, str) else int(axis)
    values = np.asarray(values, dtype=float)
    if not 0 <= index < values.shape[d]:
        raise IndexError(f"slice index {index} outside [0, {values.shape[d]})")
    return np.take(values, index, axis=d)


def slice_to_bytes(sl) -> np.ndarray:
    """Min-max scale to 0..255 with round-half-even; constant slices give 128.

    Sentinel cells (>= 1e29, obstacles or unreachable) are left out of the
    scaling and painted white.
    """
    sl = np.asarray(sl, dtype=float)
    sentinel = sl >= SENTINEL_THRESHOLD
    out = np.full(sl.shape, 255, dtype=np.uint8)
    vals = sl[~sentinel]
    if vals.size == 0:
        return out
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        out[~sentinel] = 128
    else:
        out[~sentinel] = np.rint((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return out


def write_slice_image(values, axis, index: int, path) -> None:
    """8-bit P5 image: columns follow the first in-plane axis, rows the second (top row = index 0)."""
    img = slice_to_bytes(extract_slice(values, axis, index)).T
    rows, cols = img.shape
    try:
        Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode() + np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


def write_slice_csv(values, axis, index: int, path) -> None:
    """Same orientation as the image; raw values with shortest round-trip formatting."""
    sl = extract_slice(values, axis, index).T
    try:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in sl:
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoFailure(path, str(exc)) from exc


@dataclass(frozen=True)
class ErrorNormReport:
    rel_l1: float
    rel_l2: float
    rel_linf: float
    rmse: float
    nrmse: Optional[float]
    pearson: Optional[float]
    n_points: int
    constant_reference: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel())


def error_norms(candidate, reference, mask=None) -> ErrorNormReport:
    """Relative and absolute error norms of ``candidate`` against ``reference`` on ``mask``.

    Sums use exactly rounded ``math.fsum`` so results do not depend on point
    order.  A constant reference yields ``nrmse = pearson = None``.
    """
    c = np.asarray(candidate, dtype=float)
    r = np.asarray(reference, dtype=float)
    if c.shape != r.shape:
        raise ValueError(f"shape mismatch {c.shape} vs {r.shape}")
    if mask is not None:
        c, r = c[mask], r[mask]
    c, r = c.ravel(), r.ravel()
    n = c.size
    if n == 0:
        raise ValueError("error_norms needs a nonempty mask")
    e = c - r
    abs_e, abs_r = np.abs(e), np.abs(r)

    def ratio(num, den):
        if den == 0.0:
            return 0.0 if num == 0.0 else math.inf
        return num / den

    rel_l1 = ratio(_fsum(abs_e), _fsum(abs_r))
    rel_l2 = ratio(math.sqrt(_fsum(e * e)), math.sqrt(_fsum(r * r)))
    rel_linf = ratio(float(abs_e.max()), float(abs_r.max()))
    rmse = math.sqrt(_fsum(e * e) / n)

    span = float(r.max() - r.min())
    constant = span == 0.0
    nrmse = pearson = None
    if not constant:
        nrmse = rmse / span
        cm, rm = _fsum(c) / n, _fsum(r) / n
        dc, dr = c - cm, r - rm
        sc, sr = math.sqrt(_fsum(dc * dc)), math.sqrt(_fsum(dr * dr))
        pearson = 0.0 if sc == 0.0 else max(-1.0, min(1.0, _fsum(dc * dr) / (sc * sr)))
    return ErrorNormReport(rel_l1, rel_l2, rel_linf, rmse, nrmse, pearson, int(n), constant)
