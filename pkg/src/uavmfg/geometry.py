"""Uniform cell-centred grid, signed distances and cell classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import NoFreeCell, NoTargetCell

#: stand-in for +infinity (no obstacles) and for unreachable/blocked cells
LARGE = 1e30


class CellClass(IntEnum):
    FREE = 0
    OBSTACLE = 1
    TARGET = 2


def sdf_target(x, center, radius):
    """Signed distance to the target sphere, negative inside."""
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - np.asarray(center, dtype=float), axis=-1) - radius


def target_distance(x, center, radius):
    """Nonnegative distance to the target, zero inside it."""
    return np.maximum(sdf_target(x, center, radius), 0.0)


def box_sdf(x, bmin, bmax):
    """Exact signed distance to a closed axis-aligned box."""
    x = np.asarray(x, dtype=float)
    bmin = np.asarray(bmin, dtype=float)
    bmax = np.asarray(bmax, dtype=float)
    center = 0.5 * (bmin + bmax)
    half = 0.5 * (bmax - bmin)
    q = np.abs(x - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def _box_pair(box):
    bmin = getattr(box, "min", None)
    if bmin is None or callable(bmin):
        return box[0], box[1]
    return bmin, box.max


def sdf_obstacles(x, boxes: Sequence) -> np.ndarray:
    """Signed distance to a union of boxes (positive in free space).

    ``boxes`` holds ``(min, max)`` pairs or objects with ``min``/``max``
    attributes.  Returns :data:`LARGE` everywhere when there are no boxes.
    """
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape[:-1], LARGE)
    for box in boxes:
        bmin, bmax = _box_pair(box)
        out = np.minimum(out, box_sdf(x, bmin, bmax))
    return out


@dataclass(frozen=True)
class GridGeometry:
    origin: np.ndarray
    upper: np.ndarray
    spacing: np.ndarray
    shape: tuple[int, int, int]
    cell_class: np.ndarray = field(repr=False)
    target_center: np.ndarray = field(repr=False)
    target_radius: float = 0.0
    boxes: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def bounds(self) -> tuple[float, ...]:
        return tuple(float(v) for v in (*self.origin, *self.upper))

    def axis_centers(self, d: int) -> np.ndarray:
        return self.origin[d] + (np.arange(self.shape[d]) + 0.5) * self.spacing[d]

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(nx, ny, nz, 3)``."""
        return np.stack(np.meshgrid(*(self.axis_centers(d) for d in range(3)), indexing="ij"), axis=-1)

    @property
    def free(self) -> np.ndarray:
        return self.cell_class == CellClass.FREE

    @property
    def obstacle(self) -> np.ndarray:
        return self.cell_class == CellClass.OBSTACLE

    @property
    def target(self) -> np.ndarray:
        return self.cell_class == CellClass.TARGET

    def counts(self) -> dict[str, int]:
        return {c.name.lower(): int(np.count_nonzero(self.cell_class == c)) for c in CellClass}

    def sdf_target(self, x) -> np.ndarray:
        return sdf_target(x, self.target_center, self.target_radius)

    def target_distance(self, x) -> np.ndarray:
        return target_distance(x, self.target_center, self.target_radius)

    def sdf_obstacles(self, x) -> np.ndarray:
        return sdf_obstacles(x, self.boxes)

    def cell_index(self, x) -> np.ndarray:
        """Integer index of the cell containing each point (clamped to the grid)."""
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.origin) / self.spacing).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.shape) - 1)


def build_geometry(
    domain_min,
    domain_max,
    shape,
    target_center,
    target_radius: float,
    boxes: Sequence = (),
) -> GridGeometry:
    origin = np.asarray(domain_min, dtype=float)
    upper = np.asarray(domain_max, dtype=float)
    shape = tuple(int(n) for n in shape)
    spacing = (upper - origin) / np.asarray(shape)
    boxes = tuple(tuple(tuple(map(float, v)) for v in _box_pair(b)) for b in boxes)

    axes = [origin[d] + (np.arange(shape[d]) + 0.5) * spacing[d] for d in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    in_obstacle = np.zeros(shape, dtype=bool)
    for bmin, bmax in boxes:
        inside = np.ones(shape, dtype=bool)
        for d in range(3):
            inside &= (pts[..., d] >= bmin[d]) & (pts[..., d] <= bmax[d])
        in_obstacle |= inside
    center = np.asarray(target_center, dtype=float)
    in_target = (np.linalg.norm(pts - center, axis=-1) <= target_radius) & ~in_obstacle

    cell_class = np.full(shape, CellClass.FREE, dtype=np.int8)
    cell_class[in_obstacle] = CellClass.OBSTACLE
    cell_class[in_target] = CellClass.TARGET
    cell_class.setflags(write=False)

    if not (cell_class == CellClass.FREE).any():
        raise NoFreeCell("every cell is obstacle or target")
    if not in_target.any():
        raise NoTargetCell("no cell centre lies inside the target sphere; enlarge target.radius or refine the grid")

    return GridGeometry(
        origin=origin,
        upper=upper,
        spacing=spacing,
        shape=shape,
        cell_class=cell_class,
        target_center=center,
        target_radius=float(target_radius),
        boxes=boxes,
    )


def classify_cells(cfg) -> GridGeometry:
    """Build the classified grid for a :class:`~uavmfg.config.ScenarioConfig`."""
    return build_geometry(
        cfg.domain.min,
        cfg.domain.max,
        cfg.grid.shape,
        cfg.target.center,
        cfg.target.radius,
        cfg.obstacles,
    )
