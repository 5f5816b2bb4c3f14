"""Lax-Friedrichs fast sweeping for ``v_max |grad phi|_eps - v_w . grad phi = 1``.

Target cells hold ``phi = 0``.  Obstacle neighbours are replaced by the
updating cell's current value and missing neighbours at the outer boundary
by the opposite (interior) neighbour, i.e. zero normal gradient on both.

Free cells start from a finite upper bound rather than the ``LARGE``
sentinel: with ``1e30`` neighbours the LF numerator cancels catastrophically
and the monotone ``min`` update can lock in garbage.  Cells the sweeps never
reach are set to ``LARGE`` at the end.  Near the target the LF dissipation
produces an O(1)*h offset for small (point-like) targets, so free cells within
``target_radius + seed_radius_cells * max(h)`` that see the target directly
are seeded with the exact constant-coefficient straight-line travel time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .fundamental import v_max_of_rho
from .geometry import LARGE, CellClass, GridGeometry
from .wind import wind_on_grid

log = logging.getLogger(__name__)

_FREE = int(CellClass.FREE)
_OBSTACLE = int(CellClass.OBSTACLE)


@dataclass
class ValueSolution:
    phi: np.ndarray
    iterations: int
    final_update_inf_norm: float
    residual_mean: float
    residual_max: float
    converged: bool = True
    update_history: list[float] = field(default_factory=list)
    residual_mean_history: list[float] = field(default_factory=list)
    residual_max_history: list[float] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    loss_final: float = -1.0


@numba.njit(cache=True, inline="always")
def _neighbour(phi, cls, i, j, k, own):
    if cls[i, j, k] == _OBSTACLE:
        return own
    return phi[i, j, k]


@numba.njit(cache=True, inline="always")
def _fill_missing(lo, hi, has_lo, has_hi):
    # a missing neighbour copies the opposite one; with neither, both stay at the cell value
    if not has_lo and has_hi:
        return hi, hi
    if not has_hi and has_lo:
        return lo, lo
    return lo, hi


@numba.njit(cache=True)
def _lf_candidate(phi, cls, i, j, k, v, w0, w1, w2, eps, hx, hy, hz):
    nx, ny, nz = phi.shape
    own = phi[i, j, k]

    lo = _neighbour(phi, cls, i - 1, j, k, own) if i > 0 else own
    hi = _neighbour(phi, cls, i + 1, j, k, own) if i < nx - 1 else own
    lo, hi = _fill_missing(lo, hi, i > 0, i < nx - 1)
    ax = v + abs(w0)
    px = (hi - lo) / (2.0 * hx)
    sx = ax * (hi + lo) / (2.0 * hx)

    lo = _neighbour(phi, cls, i, j - 1, k, own) if j > 0 else own
    hi = _neighbour(phi, cls, i, j + 1, k, own) if j < ny - 1 else own
    lo, hi = _fill_missing(lo, hi, j > 0, j < ny - 1)
    ay = v + abs(w1)
    py = (hi - lo) / (2.0 * hy)
    sy = ay * (hi + lo) / (2.0 * hy)

    lo = _neighbour(phi, cls, i, j, k - 1, own) if k > 0 else own
    hi = _neighbour(phi, cls, i, j, k + 1, own) if k < nz - 1 else own
    lo, hi = _fill_missing(lo, hi, k > 0, k < nz - 1)
    az = v + abs(w2)
    pz = (hi - lo) / (2.0 * hz)
    sz = az * (hi + lo) / (2.0 * hz)

    ham = v * np.sqrt(px * px + py * py + pz * pz + eps * eps) - (w0 * px + w1 * py + w2 * pz)
    return (1.0 - ham + sx + sy + sz) / (ax / hx + ay / hy + az / hz)


@numba.njit(cache=True)
def _sweep(phi, cls, vmax, wind, eps, h, max_rounds, tol, history):
    nx, ny, nz = phi.shape
    for r in range(max_rounds):
        biggest = 0.0
        for order in range(8):
            sx = 1 if (order & 1) == 0 else -1
            sy = 1 if (order & 2) == 0 else -1
            sz = 1 if (order & 4) == 0 else -1
            for kk in range(nz):
                k = kk if sz > 0 else nz - 1 - kk
                for jj in range(ny):
                    j = jj if sy > 0 else ny - 1 - jj
                    for ii in range(nx):
                        i = ii if sx > 0 else nx - 1 - ii
                        if cls[i, j, k] != _FREE:
                            continue
                        new = _lf_candidate(
                            phi, cls, i, j, k, vmax[i, j, k],
                            wind[i, j, k, 0], wind[i, j, k, 1], wind[i, j, k, 2],
                            eps, h[0], h[1], h[2],
                        )
                        old = phi[i, j, k]
                        if new < old:
                            if old - new > biggest:
                                biggest = old - new
                            phi[i, j, k] = new
        history[r] = biggest
        if biggest < tol:
            return r + 1
    return max_rounds


def lf_update_cell(phi, cell_class, cell, v_max: float, wind, eps_reg: float, spacing) -> float:
    """Monotone LF sweeping update of one free cell; returns ``min(old, candidate)``."""
    i, j, k = cell
    assert cell_class[i, j, k] == CellClass.FREE, "LF update applies to free cells only"
    w = np.asarray(wind, dtype=float)
    h = np.asarray(spacing, dtype=float)
    new = _lf_candidate(
        np.asarray(phi, dtype=float), np.asarray(cell_class, dtype=np.int8), i, j, k,
        float(v_max), w[0], w[1], w[2], float(eps_reg), h[0], h[1], h[2],
    )
    return min(float(phi[i, j, k]), float(new))


def straight_line_time(r, wind, v):
    """Travel time along displacement ``r`` at airspeed ``v`` in constant wind.

    Solves ``|s * r_hat - w| = v`` for the ground speed ``s``; requires
    ``v > |w|``.
    """
    r = np.asarray(r, dtype=float)
    w = np.asarray(wind, dtype=float)
    v = np.asarray(v, dtype=float)
    wr = np.sum(w * r, axis=-1)
    ww = np.sum(w * w, axis=-1)
    rr = np.sum(r * r, axis=-1)
    denom = v * v - ww
    return (-wr + np.sqrt(wr * wr + denom * rr)) / denom


def eikonal_residual_grid(phi, geom: GridGeometry, vmax, wind, eps_reg: float) -> np.ndarray:
    """Central-difference residual on interior free cells (NaN elsewhere).

    A cell is interior when all six neighbours exist, none is an obstacle,
    and no value involved is a sentinel.
    """
    phi = np.asarray(phi, dtype=float)
    ok = geom.free & (phi < 0.5 * LARGE)
    grad = np.zeros(phi.shape + (3,))
    for d in range(3):
        ok[(slice(None),) * d + (0,)] = False
        ok[(slice(None),) * d + (-1,)] = False
        lo = np.roll(phi, 1, axis=d)
        hi = np.roll(phi, -1, axis=d)
        blocked_lo = np.roll(geom.obstacle | (phi >= 0.5 * LARGE), 1, axis=d)
        blocked_hi = np.roll(geom.obstacle | (phi >= 0.5 * LARGE), -1, axis=d)
        ok &= ~blocked_lo & ~blocked_hi
        grad[..., d] = (hi - lo) / (2.0 * geom.spacing[d])
    norm = np.sqrt(np.sum(grad * grad, axis=-1) + eps_reg**2)
    res = vmax * norm - np.sum(wind * grad, axis=-1) - 1.0
    return np.where(ok, res, np.nan)


def _residual_stats(res) -> tuple[float, float]:
    vals = np.abs(res[np.isfinite(res)])
    if vals.size == 0:
        return 0.0, 0.0
    return float(vals.mean()), float(vals.max())


def _line_of_sight(geom: GridGeometry, start, cells) -> np.ndarray:
    """True where the segment from each cell centre to ``start`` avoids obstacle cells."""
    pts = geom.centers()[cells]
    if not geom.obstacle.any():
        return np.ones(len(pts), dtype=bool)
    step = 0.25 * float(np.min(geom.spacing))
    length = np.linalg.norm(pts - start, axis=-1)
    n = int(np.ceil(length.max() / step)) + 1
    clear = np.ones(len(pts), dtype=bool)
    for t in np.linspace(0.0, 1.0, n):
        idx = geom.cell_index(pts + t * (start - pts))
        clear &= ~geom.obstacle[idx[:, 0], idx[:, 1], idx[:, 2]]
    return clear


def _seed_near_target(phi, geom: GridGeometry, vmax, wind, radius_cells: float) -> None:
    if radius_cells <= 0:
        return
    c = geom.target_center
    R = geom.target_radius
    centers = geom.centers()
    dist = np.linalg.norm(centers - c, axis=-1)
    near = geom.free & (dist <= R + radius_cells * float(np.max(geom.spacing)))
    near &= np.sum(wind * wind, axis=-1) < vmax * vmax
    if not near.any():
        return
    cells = np.nonzero(near)
    clear = _line_of_sight(geom, c, cells)
    cells = tuple(ix[clear] for ix in cells)
    r = c - centers[cells]
    d = np.linalg.norm(r, axis=-1, keepdims=True)
    to_surface = r * (1.0 - R / d)
    t = straight_line_time(to_surface, wind[cells], vmax[cells])
    phi[cells] = np.minimum(phi[cells], t)


def _upper_bound(geom: GridGeometry, vmax, wind) -> float:
    free = geom.free
    ground = vmax[free] - np.linalg.norm(wind[free], axis=-1)
    floor = float(ground.min())
    if floor <= 0:
        floor = 1e-3 * float(vmax[free].min())
    return 4.0 * float(np.sum(geom.upper - geom.origin)) / floor


def initial_field(geom: GridGeometry, vmax, wind, seed_radius_cells: float = 0.0, bound: float | None = None):
    if bound is None:
        bound = _upper_bound(geom, vmax, wind) if geom.free.any() else LARGE
    phi = np.where(geom.free, bound, 0.0)
    phi[geom.obstacle] = LARGE
    _seed_near_target(phi, geom, vmax, wind, seed_radius_cells)
    return phi, bound


def solve_eikonal_fsm(
    geom: GridGeometry,
    vmax,
    wind,
    eps_reg: float,
    tol: float = 1e-10,
    max_sweep_rounds: int = 2000,
    seed_radius_cells: float = 3.0,
) -> ValueSolution:
    """Solve on the grid for given cell-centred ``vmax`` and ``wind`` arrays."""
    vmax = np.ascontiguousarray(np.broadcast_to(np.asarray(vmax, dtype=float), geom.shape))
    wind = np.ascontiguousarray(np.broadcast_to(np.asarray(wind, dtype=float), geom.shape + (3,)))
    cls = np.ascontiguousarray(geom.cell_class)
    h = np.asarray(geom.spacing, dtype=float)

    if not geom.free.any():
        phi = np.where(geom.obstacle, LARGE, 0.0)
        return ValueSolution(phi=phi, iterations=0, final_update_inf_norm=0.0, residual_mean=0.0, residual_max=0.0)

    bound = _upper_bound(geom, vmax, wind)
    for _ in range(4):
        phi, bound = initial_field(geom, vmax, wind, seed_radius_cells, bound)
        history = np.zeros(max_sweep_rounds)
        rounds = _sweep(phi, cls, vmax, wind, float(eps_reg), h, max_sweep_rounds, tol, history)
        reached = geom.free & (phi < bound)
        # a reached value close to the bound means the bound was not an upper bound
        if not reached.any() or phi[reached].max() < 0.5 * bound:
            break
        bound *= 100.0

    phi[geom.free & (phi >= bound)] = LARGE
    converged = bool(history[rounds - 1] < tol)
    if not converged:
        log.warning("FSM not converged after %d rounds (last update %.3e)", rounds, history[rounds - 1])
    mean, mx = _residual_stats(eikonal_residual_grid(phi, geom, vmax, wind, eps_reg))
    return ValueSolution(
        phi=phi,
        iterations=int(rounds),
        final_update_inf_norm=float(history[rounds - 1]),
        residual_mean=mean,
        residual_max=mx,
        converged=converged,
        update_history=[float(v) for v in history[:rounds]],
    )


def solve_value_fsm(geom: GridGeometry, wind_model, fd, rho, opts, eps_reg: float) -> ValueSolution:
    """Value field for the density ``rho`` (frozen) using config ``opts`` (FsmConfig)."""
    vmax = v_max_of_rho(fd, np.maximum(rho, 0.0))
    return solve_eikonal_fsm(
        geom,
        vmax,
        wind_on_grid(wind_model, geom),
        eps_reg,
        tol=opts.tol,
        max_sweep_rounds=opts.max_sweep_rounds,
        seed_radius_cells=opts.seed_radius_cells,
    )
