"""Outer fixed-point loop: density -> value -> induced velocity -> density."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fsm import ValueSolution, solve_value_fsm
from .fundamental import v_max_of_rho
from .fvm import TransportSolution, solve_density_steady
from .geometry import LARGE, GridGeometry
from .pinn import PinnValueSolver
from .wind import wind_on_grid

log = logging.getLogger(__name__)

_TINY = 1e-12


def induced_velocity(phi, rho, wind, fd, eps_reg: float, geom: GridGeometry) -> np.ndarray:
    """Ground velocity ``v_w - v_max(rho) grad(phi) / |grad(phi)|_eps`` on free cells.

    ``wind`` is the cell-centred wind array.  The gradient is central where
    both neighbours are usable and one-sided toward the usable side next to
    obstacles, the outer boundary, or unreachable (sentinel) cells.
    """
    phi = np.asarray(phi, dtype=float)
    wind = np.asarray(wind, dtype=float)
    usable = ~geom.obstacle & (phi < 0.5 * LARGE)
    vals = np.where(geom.target, 0.0, phi)
    grad = np.zeros(geom.shape + (3,))
    for d in range(3):
        h = geom.spacing[d]
        n = geom.shape[d]
        pad = [(0, 0)] * 3
        pad[d] = (1, 1)
        pv = np.pad(vals, pad)
        pu = np.pad(usable, pad, constant_values=False)
        sl = lambda a, b: (slice(None),) * d + (slice(a, b),)
        lo_v, hi_v = pv[sl(0, n)], pv[sl(2, n + 2)]
        lo_ok, hi_ok = pu[sl(0, n)], pu[sl(2, n + 2)]
        central = (hi_v - lo_v) / (2.0 * h)
        forward = (hi_v - vals) / h
        backward = (vals - lo_v) / h
        grad[..., d] = np.where(
            lo_ok & hi_ok, central, np.where(hi_ok, forward, np.where(lo_ok, backward, 0.0))
        )
    grad[~usable] = 0.0
    norm = np.sqrt(np.sum(grad * grad, axis=-1) + eps_reg**2)
    safe = np.where(norm > 0.0, norm, 1.0)
    vmax = v_max_of_rho(fd, np.maximum(rho, 0.0))
    u = wind - (vmax / safe)[..., None] * grad
    u[~geom.free] = 0.0
    return u


def relaxed_update(rho_old, rho_tilde, alpha: float, rho_max: float) -> np.ndarray:
    return (1.0 - alpha) * np.asarray(rho_old, dtype=float) + alpha * np.clip(rho_tilde, 0.0, rho_max)


@dataclass
class PicardState:
    outer_iter: int
    rho: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    rho_change: float
    value: ValueSolution
    transport: TransportSolution
    t_value: float
    t_transport: float


@dataclass
class PicardResult:
    state: PicardState
    rows: list[dict] = field(default_factory=list)
    converged: bool = False
    all_inner_converged: bool = True
    t_value: float = 0.0
    t_transport: float = 0.0


def metrics_row(state: PicardState, wall_time: float) -> dict:
    tr = state.transport
    return {
        "outer_iter": state.outer_iter,
        "eik_res_mean": state.value.residual_mean,
        "eik_res_max": state.value.residual_max,
        "eik_loss_final": state.value.loss_final,
        "fvm_iters": tr.iters,
        "fvm_residual_final": tr.residual_final,
        "rho_change": state.rho_change,
        "mass_injected": tr.mass_injected,
        "mass_absorbed": tr.mass_absorbed,
        "mass_balance_rel_err": tr.mass_balance_rel_err,
        "wall_time_s": wall_time,
    }


def run_picard(
    cfg,
    geom: GridGeometry,
    q,
    backend: Optional[str] = None,
    callback: Optional[Callable[[PicardState, dict], None]] = None,
    seed: Optional[int] = None,
) -> PicardResult:
    """Run the coupled loop from ``rho = 0``; ``callback`` sees each state and its metrics row."""
    backend = backend or cfg.value_solver.backend
    seed = cfg.seed if seed is None else seed
    pc = cfg.picard
    wind = wind_on_grid(cfg.wind, geom)
    pinn = None
    if backend == "pinn":
        pinn = PinnValueSolver(geom, cfg.wind, cfg.fd, cfg.eps_reg, cfg.value_solver.pinn, seed=seed)
    elif backend != "fsm":
        raise ValueError(f"unknown value backend {backend!r}")

    rho = np.zeros(geom.shape)
    result = PicardResult(state=None)  # type: ignore[arg-type]
    for k in range(pc.max_outer):
        t0 = time.perf_counter()
        if pinn is None:
            value = solve_value_fsm(geom, cfg.wind, cfg.fd, rho, cfg.value_solver.fsm, cfg.eps_reg)
        else:
            value = pinn.solve(rho)
        t1 = time.perf_counter()
        u = induced_velocity(value.phi, rho, wind, cfg.fd, cfg.eps_reg, geom)
        transport = solve_density_steady(u, q, geom, cfg.transport)
        t2 = time.perf_counter()

        new = relaxed_update(rho, transport.rho, pc.alpha, pc.rho_max)
        assert new.min() >= 0.0 and new.max() <= pc.rho_max
        change = float(np.linalg.norm(new - rho) / max(float(np.linalg.norm(rho)), _TINY))
        rho = new

        state = PicardState(k, rho, value.phi, u, change, value, transport, t1 - t0, t2 - t1)
        row = metrics_row(state, t2 - t0)
        result.state = state
        result.rows.append(row)
        result.t_value += t1 - t0
        result.t_transport += t2 - t1
        result.all_inner_converged &= bool(value.converged and transport.converged)
        if callback is not None:
            callback(state, row)
        log.info("outer %d: rho_change=%.3e fvm_iters=%d", k, change, transport.iters)
        if change < pc.rho_change_tol:
            result.converged = True
            break
    return result
