"""Conservative upwind finite volumes for the steady continuity equation.

``div(rho u - kappa grad rho) = q`` is relaxed in pseudo time with explicit
Euler (Jacobi) steps.  Only interior faces are stored: outer-boundary faces are
closed by construction.  An interior face is open when neither neighbour is an
obstacle and not both are target cells.  Target and obstacle cells are held at
``rho = 0``; the free-to-target face flux is the absorbed rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridGeometry

log = logging.getLogger(__name__)

_TINY = 1e-300


@dataclass(frozen=True)
class FaceVelocity:
    """Normal velocity on interior faces; ``vel[d]`` has ``shape[d] - 1`` entries along ``d``."""

    vel: tuple[np.ndarray, np.ndarray, np.ndarray]
    open: tuple[np.ndarray, np.ndarray, np.ndarray]
    # +1 where the face leads free -> target along +d, -1 for target -> free, else 0
    into_target: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class TransportSolution:
    rho: np.ndarray
    iters: int
    residual_history: list[float]
    mass_injected: float
    mass_absorbed: float
    mass_balance_rel_err: float
    converged: bool
    dt: float = 0.0
    residual_final: float = field(init=False)

    def __post_init__(self) -> None:
        self.residual_final = self.residual_history[-1] if self.residual_history else 0.0


@dataclass(frozen=True)
class MassBalanceReport:
    passed: bool
    reliable: bool
    mass_injected: float
    mass_absorbed: float
    rel_err: float
    threshold: float


def _lo(d: int) -> tuple:
    return (slice(None),) * d + (slice(None, -1),)


def _hi(d: int) -> tuple:
    return (slice(None),) * d + (slice(1, None),)


def face_velocities(u, geom: GridGeometry) -> FaceVelocity:
    u = np.asarray(u, dtype=float)
    obst = geom.obstacle
    targ = geom.target
    free = geom.free
    vel, opened, into = [], [], []
    for d in range(3):
        lo, hi = _lo(d), _hi(d)
        ud = u[..., d]
        vel.append(0.5 * (ud[lo] + ud[hi]))
        opened.append(~(obst[lo] | obst[hi]) & ~(targ[lo] & targ[hi]))
        into.append((free[lo] & targ[hi]).astype(np.int8) - (targ[lo] & free[hi]).astype(np.int8))
    return FaceVelocity(tuple(vel), tuple(opened), tuple(into))


def upwind_face_flux(face_v, rho_left, rho_right, kappa: float, h: float):
    """Upwind advective plus central diffusive flux density across a face (left -> right)."""
    return (
        np.maximum(face_v, 0.0) * rho_left
        + np.minimum(face_v, 0.0) * rho_right
        - kappa * (rho_right - rho_left) / h
    )


def _face_fluxes(rho, faces: FaceVelocity, geom: GridGeometry, kappa: float):
    out = []
    for d in range(3):
        f = upwind_face_flux(faces.vel[d], rho[_lo(d)], rho[_hi(d)], kappa, geom.spacing[d])
        out.append(np.where(faces.open[d], f, 0.0))
    return out


def _absorbed_rate(fluxes, faces: FaceVelocity, geom: GridGeometry) -> float:
    total = []
    for d in range(3):
        area = geom.cell_volume / geom.spacing[d]
        total.append(np.sum(fluxes[d] * faces.into_target[d]) * area)
    return math.fsum(total)


def pseudo_time_step(rho, faces: FaceVelocity, q, geom: GridGeometry, dt: float, kappa: float = 0.0, *, return_absorbed: bool = False):
    """One explicit pseudo-time step; returns ``(rho_next, residual)``.

    With ``return_absorbed`` the free-to-target rate (veh/s) evaluated at
    ``rho`` is appended, so ``M_next - M = dt * (injected - absorbed)``.
    """
    rho = np.asarray(rho, dtype=float)
    fluxes = _face_fluxes(rho, faces, geom, kappa)
    div = np.zeros(geom.shape)
    for d in range(3):
        h = geom.spacing[d]
        div[_lo(d)] += fluxes[d] / h
        div[_hi(d)] -= fluxes[d] / h
    rho_next = np.where(geom.free, rho + dt * (q - div), 0.0)
    residual = float(np.max(np.abs(rho_next - rho))) / dt
    if return_absorbed:
        return rho_next, residual, _absorbed_rate(fluxes, faces, geom)
    return rho_next, residual


def stable_dt(faces: FaceVelocity, geom: GridGeometry, kappa: float, cfl: float) -> float:
    """Largest step keeping the explicit update a convex combination, scaled by ``cfl``.

    Per free cell the outflow coefficient is the sum over its open faces of
    ``max(outward velocity, 0)/h + kappa/h**2``; ``cfl <= 1`` then keeps rho
    nonnegative.
    """
    rate = np.zeros(geom.shape)
    for d in range(3):
        h = geom.spacing[d]
        o = faces.open[d]
        v = faces.vel[d]
        rate[_lo(d)] += np.where(o, np.maximum(v, 0.0) / h + kappa / h**2, 0.0)
        rate[_hi(d)] += np.where(o, np.maximum(-v, 0.0) / h + kappa / h**2, 0.0)
    worst = float(rate[geom.free].max()) if geom.free.any() else 0.0
    if worst <= 0.0:
        # nothing moves; any step is stable, use one cell per unit speed
        return cfl * float(np.min(geom.spacing))
    return cfl / worst


def solve_density_steady(u, q, geom: GridGeometry, opts, rho0=None) -> TransportSolution:
    """Relax to steady state; ``opts`` is a TransportConfig (kappa, cfl, max_iters, tol_rel)."""
    q = np.where(geom.free, np.asarray(q, dtype=float), 0.0)
    faces = face_velocities(u, geom)
    dt = stable_dt(faces, geom, opts.kappa, opts.cfl)
    scale = float(np.max(np.abs(q))) + _TINY
    rho = np.zeros(geom.shape) if rho0 is None else np.where(geom.free, rho0, 0.0)

    history: list[float] = []
    converged = False
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        rho, res = pseudo_time_step(rho, faces, q, geom, dt, opts.kappa)
        history.append(res)
        if res / scale < opts.tol_rel:
            converged = True
            break
    if not converged:
        log.warning("transport not converged after %d steps (residual %.3e)", iters, history[-1])

    injected = math.fsum(q.ravel()) * geom.cell_volume
    absorbed = _absorbed_rate(_face_fluxes(rho, faces, geom, opts.kappa), faces, geom)
    rel = abs(injected - absorbed) / injected if injected > 0 else 0.0
    return TransportSolution(
        rho=rho,
        iters=iters,
        residual_history=history,
        mass_injected=injected,
        mass_absorbed=absorbed,
        mass_balance_rel_err=rel,
        converged=converged,
        dt=dt,
    )


def check_mass_balance(sol: TransportSolution, threshold: float = 1e-3) -> MassBalanceReport:
    return MassBalanceReport(
        passed=sol.converged and sol.mass_balance_rel_err <= threshold,
        reliable=sol.converged,
        mass_injected=sol.mass_injected,
        mass_absorbed=sol.mass_absorbed,
        rel_err=sol.mass_balance_rel_err,
        threshold=threshold,
    )
