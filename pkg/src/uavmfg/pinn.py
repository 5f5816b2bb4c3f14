"""Neural value solver: tanh MLP with hard absorbing boundary and obstacle barrier.

The trial function is

    phi_hat(x) = d(x)**p * softplus(n(x)) + d(x)**p * C * softplus(-k * d_obs(x))

with ``d`` the clamped target distance, so ``phi_hat`` vanishes exactly on the
target.  The spatial gradient in the residual comes from central differences of
``phi_hat``; parameter gradients are exact reverse-mode derivatives of the
loss built from those stencil evaluations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import EmptyCollocation, NonFiniteLoss
from .fsm import ValueSolution
from .fundamental import softplus, v_max_of_rho
from .geometry import LARGE, GridGeometry
from .wind import eval_wind

log = logging.getLogger(__name__)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class ValueNetwork:
    """Fully connected ``3 -> hidden... -> 1`` tanh network in float64.

    Inputs are affinely mapped from the box ``[lo, hi]`` to ``[-1, 1]^3``.
    """

    def __init__(self, hidden, lo, hi, seed: int = 0) -> None:
        self.widths = (3, *tuple(int(w) for w in hidden), 1)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        i = 0
        for p in self.params:
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size

    def zero_(self) -> "ValueNetwork":
        for p in self.params:
            p[...] = 0.0
        return self

    def _normalise(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo) - 1.0

    def forward(self, x, cache: bool = False):
        a = self._normalise(x)
        acts = [a]
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = a @ W + b
            a = z if layer == n_layers - 1 else np.tanh(z)
            acts.append(a)
        out = a[:, 0]
        return (out, acts) if cache else out

    __call__ = forward

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Parameter gradients given ``dL/d(out)`` per row."""
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        delta = np.asarray(grad_out, dtype=float)[:, None]
        n_layers = len(self.params) // 2
        for layer in reversed(range(n_layers)):
            grads[2 * layer] = acts[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.params[2 * layer].T) * (1.0 - acts[layer] ** 2)
        return grads


def barrier_obs(d_obs, C_height: float, k: float):
    return C_height * softplus(-k * np.asarray(d_obs, dtype=float))


def compose_phi_hat(net, x, geom: GridGeometry, p: float, C_height: float, k: float):
    """Trial value at points ``x``; exactly zero on and inside the target."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dp = geom.target_distance(x) ** p
    return dp * softplus(net(x)) + dp * barrier_obs(geom.sdf_obstacles(x), C_height, k)


def _stencil(x, step: float) -> np.ndarray:
    """Points ``x + s e_d`` then ``x - s e_d`` for d = 0..2, shape ``(6, N, 3)``."""
    offs = np.concatenate([np.eye(3), -np.eye(3)]) * step
    return x[None, :, :] + offs[:, None, :]


def _residual_from_grad(g, v, w, eps_reg: float):
    norm = np.sqrt(np.sum(g * g, axis=-1) + eps_reg**2)
    return v * norm - np.sum(w * g, axis=-1) - 1.0, norm


def eikonal_residual(
    phi,
    x,
    v_max_local,
    v_w_local,
    eps_reg: float,
    fd_step_h: float,
    *,
    d_obs=None,
    mask_delta: float | None = None,
):
    """Residual of the regularised anisotropic Eikonal equation for any ``phi`` callable.

    ``phi`` maps an ``(N, 3)`` array to ``(N,)`` values.  When ``d_obs`` and
    ``mask_delta`` are given, every point must lie outside the masked band.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if d_obs is not None and mask_delta is not None:
        assert np.all(np.asarray(d_obs) > mask_delta), "residual evaluated at a masked point"
    st = _stencil(x, fd_step_h)
    vals = np.asarray(phi(st.reshape(-1, 3)), dtype=float).reshape(6, -1)
    g = ((vals[:3] - vals[3:]) / (2.0 * fd_step_h)).T
    res, _ = _residual_from_grad(g, np.asarray(v_max_local, dtype=float), np.asarray(v_w_local, dtype=float), eps_reg)
    return res


@dataclass(frozen=True)
class CollocationSet:
    interior: np.ndarray
    near_geom: np.ndarray
    seed: int
    mask_delta: float

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.interior, self.near_geom])


def _admissible(geom: GridGeometry, pts, delta: float):
    return (geom.sdf_obstacles(pts) > delta) & (geom.target_distance(pts) > 0.0)


def sample_collocation(
    geom: GridGeometry,
    n_interior: int,
    n_near_geom: int,
    seed: int,
    mask_delta: float,
    band: float,
) -> CollocationSet:
    """Seeded rejection sampling of the free region plus bands around target and obstacles."""
    rng = np.random.default_rng(seed)
    lo, hi = geom.origin, geom.upper

    def draw(n, boxes, keep):
        out = []
        have = 0
        vols = np.array([np.prod(b[1] - b[0]) for b in boxes])
        for _ in range(200):
            if have >= n:
                break
            m = max(4 * (n - have), 64)
            which = rng.choice(len(boxes), size=m, p=vols / vols.sum())
            bl = np.array([boxes[i][0] for i in which])
            bh = np.array([boxes[i][1] for i in which])
            pts = bl + rng.random((m, 3)) * (bh - bl)
            pts = pts[keep(pts)]
            out.append(pts[: n - have])
            have += len(out[-1])
        return np.concatenate(out) if out else np.zeros((0, 3))

    interior = draw(n_interior, [(lo, hi)], lambda p: _admissible(geom, p, mask_delta)) if n_interior else np.zeros((0, 3))

    near = np.zeros((0, 3))
    if n_near_geom:
        c, r = geom.target_center, geom.target_radius
        boxes = [(np.maximum(c - r - band, lo), np.minimum(c + r + band, hi))]
        for bmin, bmax in geom.boxes:
            b0 = np.maximum(np.asarray(bmin) - band - mask_delta, lo)
            b1 = np.minimum(np.asarray(bmax) + band + mask_delta, hi)
            if np.all(b1 > b0):
                boxes.append((b0, b1))

        def keep(p):
            ok = _admissible(geom, p, mask_delta)
            return ok & ((geom.target_distance(p) < band) | (geom.sdf_obstacles(p) < mask_delta + band))

        near = draw(n_near_geom, boxes, keep)

    if len(interior) + len(near) == 0:
        raise EmptyCollocation("no admissible collocation point could be drawn")
    return CollocationSet(interior=interior, near_geom=near, seed=seed, mask_delta=mask_delta)


class PinnProblem:
    """Loss and exact parameter gradient for a fixed collocation set and frozen density."""

    def __init__(self, geom: GridGeometry, pts, v, w, eps_reg: float, opts, fd_step: float, mask_delta: float) -> None:
        self.geom = geom
        self.pts = np.asarray(pts, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.eps_reg = float(eps_reg)
        self.p = opts.bc_power_p
        self.fd_step = fd_step
        d_obs = geom.sdf_obstacles(self.pts)
        assert np.all(d_obs > mask_delta), "collocation point inside the masked band"
        st = _stencil(self.pts, fd_step).reshape(-1, 3)
        self.stencil = st
        self.dp = geom.target_distance(st) ** self.p
        self.barrier = self.dp * barrier_obs(geom.sdf_obstacles(st), opts.barrier_C, opts.barrier_k)

    def residual(self, net: ValueNetwork):
        n = net(self.stencil)
        vals = (self.dp * softplus(n) + self.barrier).reshape(6, -1)
        g = ((vals[:3] - vals[3:]) / (2.0 * self.fd_step)).T
        return _residual_from_grad(g, self.v, self.w, self.eps_reg)[0]

    def loss_and_grad(self, net: ValueNetwork):
        n, acts = net.forward(self.stencil, cache=True)
        vals = (self.dp * softplus(n) + self.barrier).reshape(6, -1)
        g = ((vals[:3] - vals[3:]) / (2.0 * self.fd_step)).T
        r, norm = _residual_from_grad(g, self.v, self.w, self.eps_reg)
        N = len(r)
        loss = float(np.mean(r * r))
        safe = np.where(norm > 0.0, norm, 1.0)
        dr_dg = np.where(norm[:, None] > 0.0, self.v[:, None] * g / safe[:, None], 0.0) - self.w
        dL_dg = (2.0 / N) * r[:, None] * dr_dg
        dL_dvals = np.concatenate([dL_dg.T, -dL_dg.T]) / (2.0 * self.fd_step)
        dL_dn = dL_dvals.ravel() * self.dp * _sigmoid(n)
        return loss, r, net.backward(acts, dL_dn)


def weight_gradient_check(net: ValueNetwork, problem: PinnProblem, step: float = 1e-6, atol: float = 1e-8) -> float:
    """Max over parameters of ``|g_rev - g_fd| / max(|g_rev|, |g_fd|, atol)``."""
    _, _, grads = problem.loss_and_grad(net)
    rev = np.concatenate([gr.ravel() for gr in grads])
    flat = net.get_flat()
    fd = np.empty_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        net.set_flat(flat)
        up = float(np.mean(problem.residual(net) ** 2))
        flat[i] = saved - step
        net.set_flat(flat)
        down = float(np.mean(problem.residual(net) ** 2))
        flat[i] = saved
        fd[i] = (up - down) / (2.0 * step)
    net.set_flat(flat)
    denom = np.maximum(np.maximum(np.abs(rev), np.abs(fd)), atol)
    return float(np.max(np.abs(rev - fd) / denom))


def interpolate_rho(geom: GridGeometry, rho, pts):
    """Trilinear interpolation of cell-centred ``rho``; points are clamped to the centre hull."""
    axes = tuple(geom.axis_centers(d) for d in range(3))
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    interp = RegularGridInterpolator(axes, np.asarray(rho, dtype=float), method="linear")
    return interp(np.clip(pts, lo, hi))


def _defaults(geom: GridGeometry, opts) -> tuple[float, float, float]:
    hmin = float(np.min(geom.spacing))
    fd_step = opts.fd_step_h if opts.fd_step_h is not None else 0.5 * hmin
    delta = opts.mask_delta if opts.mask_delta is not None else 0.5 * hmin
    band = opts.near_band if opts.near_band is not None else 3.0 * float(np.max(geom.spacing))
    return fd_step, delta, band


class PinnValueSolver:
    """Owns one network and one collocation set; ``solve`` may be called repeatedly (warm start)."""

    def __init__(self, geom: GridGeometry, wind_model, fd, eps_reg: float, opts, seed: int = 0) -> None:
        self.geom = geom
        self.fd = fd
        self.eps_reg = float(eps_reg)
        self.opts = opts
        self.seed = int(seed)
        self.fd_step, self.mask_delta, band = _defaults(geom, opts)
        self.colloc = sample_collocation(geom, opts.n_interior, opts.n_near_geom, self.seed, self.mask_delta, band)
        pts = self.colloc.points
        self.wind_pts = eval_wind(wind_model, pts, z0=float(geom.origin[2]))
        self.net = ValueNetwork(opts.hidden_layers, geom.origin, geom.upper, seed=self.seed)

    def reset(self) -> None:
        self.net = ValueNetwork(self.opts.hidden_layers, self.geom.origin, self.geom.upper, seed=self.seed)

    def problem(self, rho) -> PinnProblem:
        pts = self.colloc.points
        v = v_max_of_rho(self.fd, np.maximum(interpolate_rho(self.geom, rho, pts), 0.0))
        return PinnProblem(self.geom, pts, v, self.wind_pts, self.eps_reg, self.opts, self.fd_step, self.mask_delta)

    def phi_on_grid(self) -> np.ndarray:
        geom = self.geom
        o = self.opts
        phi = compose_phi_hat(self.net, geom.centers().reshape(-1, 3), geom, o.bc_power_p, o.barrier_C, o.barrier_k)
        phi = phi.reshape(geom.shape)
        phi[geom.target] = 0.0
        phi[geom.obstacle] = LARGE
        return phi

    def solve(self, rho) -> ValueSolution:
        if not self.opts.warm_start:
            self.reset()
        prob = self.problem(rho)
        epochs = self.opts.epochs
        means: list[float] = []
        maxes: list[float] = []
        losses: list[float] = []
        for epoch in range(epochs):
            loss, r, grads = prob.loss_and_grad(self.net)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            means.append(float(np.mean(np.abs(r))))
            maxes.append(float(np.max(np.abs(r))))
            losses.append(loss)
            lr = self.opts.lr
            if self.opts.cosine_decay and epochs > 1:
                lr *= 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
            for p, gr in zip(self.net.params, grads):
                p -= lr * gr
            if not all(np.all(np.isfinite(p)) for p in self.net.params):
                raise NonFiniteLoss(epoch, float("nan"))

        r = prob.residual(self.net)
        loss_final = float(np.mean(r * r))
        if not math.isfinite(loss_final):
            raise NonFiniteLoss(epochs, loss_final)
        return ValueSolution(
            phi=self.phi_on_grid(),
            iterations=epochs,
            final_update_inf_norm=0.0,
            residual_mean=float(np.mean(np.abs(r))),
            residual_max=float(np.max(np.abs(r))),
            residual_mean_history=means,
            residual_max_history=maxes,
            loss_history=losses,
            loss_final=loss_final,
        )


def train_value_pinn(geom: GridGeometry, wind_model, fd, rho, opts, eps_reg: float, seed: int = 0) -> ValueSolution:
    """One-shot training from a fresh network."""
    return PinnValueSolver(geom, wind_model, fd, eps_reg, opts, seed=seed).solve(rho)
