"""Static background wind models.

``vortex`` is a Rankine-type horizontal vortex: solid-body rotation inside
``core_radius``, decaying as ``(core_radius / r)**2`` outside, so the speed
peaks at ``omega * core_radius``.  ``shear`` grows linearly with height above
the domain floor: ``rate * (z - z0) * axis_dir``.
"""

from __future__ import annotations

import numpy as np

from .config import NoWind, ShearWind, UniformWind, VortexWind


def eval_wind(model, x, z0: float = 0.0) -> np.ndarray:
    """Wind velocity at points ``x`` (shape ``(..., 3)``).

    ``z0`` is the height of the domain floor, used only by the shear model.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    if isinstance(model, NoWind):
        return out
    if isinstance(model, UniformWind):
        out[...] = model.v
        return out
    if isinstance(model, VortexWind):
        dx = x[..., 0] - model.center_xy[0]
        dy = x[..., 1] - model.center_xy[1]
        r2 = dx * dx + dy * dy
        rc2 = model.core_radius**2
        with np.errstate(divide="ignore"):
            factor = np.where(r2 <= rc2, 1.0, rc2 / np.where(r2 > 0, r2, 1.0))
        out[..., 0] = -model.omega * factor * dy
        out[..., 1] = model.omega * factor * dx
        return out
    if isinstance(model, ShearWind):
        out[...] = (model.rate * (x[..., 2] - z0))[..., None] * np.asarray(model.axis_dir)
        return out
    raise TypeError(f"unsupported wind model {type(model).__name__}")


def wind_on_grid(model, geom) -> np.ndarray:
    """Wind at every cell centre, shape ``(nx, ny, nz, 3)``."""
    return eval_wind(model, geom.centers(), z0=float(geom.origin[2]))


def max_wind_speed(model, geom) -> float:
    return float(np.max(np.linalg.norm(wind_on_grid(model, geom), axis=-1)))
