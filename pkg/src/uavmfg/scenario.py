"""Scenario materialisation: controllability precondition and source fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import HomingSource, P2PSource, ScenarioConfig
from .errors import EmptySourceRegion
from .fundamental import v_max_of_rho
from .geometry import GridGeometry
from .wind import eval_wind


@dataclass(frozen=True)
class ControllabilityReport:
    passed: bool
    v_max_floor: float
    max_wind: float
    eps_c: float
    margin: float
    worst_cell: tuple[int, int, int]
    worst_point: tuple[float, float, float]

    def summary(self) -> str:
        status = "pass" if self.passed else "VIOLATION"
        return (
            f"controllability {status}: v_max(rho_max)={self.v_max_floor:.6g} m/s, "
            f"max |v_w|={self.max_wind:.6g} m/s at cell {self.worst_cell} {self.worst_point}, "
            f"eps_c={self.eps_c:.6g}, margin={self.margin:.6g}"
        )


def validate_controllability(cfg: ScenarioConfig) -> ControllabilityReport:
    """Check ``v_max(rho) > |v_w(x)| + eps_c`` for all cells and densities.

    v_max is non-increasing in rho, so its minimum over ``[0, rho_max]`` is
    taken at ``rho_max``.
    """
    lo = np.asarray(cfg.domain.min, dtype=float)
    hi = np.asarray(cfg.domain.max, dtype=float)
    shape = cfg.grid.shape
    axes = [lo[d] + (np.arange(shape[d]) + 0.5) * (hi[d] - lo[d]) / shape[d] for d in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    speed = np.linalg.norm(eval_wind(cfg.wind, pts, z0=lo[2]), axis=-1)

    worst = np.unravel_index(int(np.argmax(speed)), speed.shape)
    max_wind = float(speed[worst])
    v_floor = float(v_max_of_rho(cfg.fd, cfg.picard.rho_max))
    margin = v_floor - max_wind - cfg.eps_c
    return ControllabilityReport(
        passed=margin > 0,
        v_max_floor=v_floor,
        max_wind=max_wind,
        eps_c=cfg.eps_c,
        margin=margin,
        worst_cell=tuple(int(i) for i in worst),
        worst_point=tuple(float(v) for v in pts[worst]),
    )


@dataclass(frozen=True)
class SourceField:
    q: np.ndarray  # veh/(m^3 s), cell centred
    total_rate: float  # veh/s


def build_source(cfg: ScenarioConfig, geom: GridGeometry) -> SourceField:
    src = cfg.source
    q = np.zeros(geom.shape)
    if isinstance(src, HomingSource):
        q[geom.free] = src.rate_density
        return SourceField(q=q, total_rate=float(q.sum() * geom.cell_volume))
    if isinstance(src, P2PSource):
        dist = np.linalg.norm(geom.centers() - np.asarray(src.center), axis=-1)
        covered = geom.free & (dist <= src.radius)
        n = int(np.count_nonzero(covered))
        if n == 0:
            raise EmptySourceRegion(f"source sphere at {src.center} r={src.radius} contains no free cell centre")
        q[covered] = src.total_rate / (n * geom.cell_volume)
        return SourceField(q=q, total_rate=float(src.total_rate))
    raise TypeError(f"unsupported source {type(src).__name__}")
