from __future__ import annotations

import math

import numpy as np
import pytest

from uavmfg.config import FundamentalDiagramConfig, NoWind, PinnConfig, UniformWind
from uavmfg.errors import EmptyCollocation, NonFiniteLoss
from uavmfg.geometry import LARGE, build_geometry
from uavmfg.pinn import (
    PinnProblem,
    PinnValueSolver,
    ValueNetwork,
    barrier_obs,
    compose_phi_hat,
    eikonal_residual,
    interpolate_rho,
    sample_collocation,
    train_value_pinn,
    weight_gradient_check,
)

FD = FundamentalDiagramConfig(v_max0=1.0, v_min=0.2, rho_jam=1.0, beta=20.0, clip_lo=0.3, clip_hi=1.0)
NOWIND = NoWind(type="none")


@pytest.fixture
def geom():
    return build_geometry((0, 0, 0), (1, 1, 1), (9, 9, 9), (0.5, 0.5, 0.5), 0.12)


@pytest.fixture
def geom_obs():
    return build_geometry((0, 0, 0), (1, 1, 1), (10, 10, 10), (0.8, 0.8, 0.5), 0.12, boxes=[((0.3, 0.3, 0.0), (0.5, 0.5, 0.6))])


def small_opts(**kw):
    base = dict(hidden_layers=(8, 8), n_interior=300, n_near_geom=60, epochs=300, lr=0.2)
    base.update(kw)
    return PinnConfig(**base)


def test_barrier_examples():
    assert barrier_obs(LARGE, 1.0, 20.0) <= 1e-12
    assert barrier_obs(-0.1, 5.0, 10.0) == pytest.approx(5 * math.log1p(math.e), rel=1e-15)
    assert barrier_obs(-0.1, 5.0, 10.0) == pytest.approx(6.5664, abs=1e-4)
    assert barrier_obs(0.0, 2.0, 7.0) == pytest.approx(2 * math.log(2), rel=1e-15)


def test_compose_examples(geom):
    zero = ValueNetwork((4,), geom.origin, geom.upper).zero_()
    c, r = geom.target_center, geom.target_radius
    surface = c + r * np.array([[1.0, 0, 0], [0, -1.0, 0], [0.6, 0, 0.8]])
    assert np.all(compose_phi_hat(zero, surface, geom, 1.0, 1.0, 20.0) == 0.0)
    assert compose_phi_hat(zero, c[None], geom, 1.0, 1.0, 20.0)[0] == 0.0
    far = build_geometry((0, 0, 0), (4, 4, 4), (4, 4, 4), (1.5, 1.5, 1.5), 0.5)
    net = ValueNetwork((4,), far.origin, far.upper).zero_()
    x = np.array([[1.5, 1.5, 4.0]])  # distance 2.5 - 0.5 = 2
    assert compose_phi_hat(net, x, far, 1.0, 1.0, 20.0)[0] == pytest.approx(2 * math.log(2), rel=1e-15)


def test_hard_bc_bitwise_zero_and_nonnegative(geom_obs, rng):
    net = ValueNetwork((16, 16), geom_obs.origin, geom_obs.upper, seed=3)
    for p in net.params:
        p *= 5.0
    c, r = geom_obs.target_center, geom_obs.target_radius
    d = rng.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = c + d * (r * rng.random((1000, 1)) ** (1 / 3))
    for p_exp in (0.5, 1.0, 2.0):
        vals = compose_phi_hat(net, pts, geom_obs, p_exp, 3.0, 40.0)
        assert np.all(vals == 0.0)
    anywhere = rng.uniform(-0.2, 1.2, (2000, 3))
    assert np.all(compose_phi_hat(net, anywhere, geom_obs, 1.0, 3.0, 40.0) >= 0.0)


def test_residual_with_injected_linear_field():
    phi = lambda x: x[:, 0]
    x = np.array([[0.3, 0.2, 0.1], [0.7, 0.4, 0.9]])
    r0 = eikonal_residual(phi, x, 1.0, np.zeros(3), 0.0, 1e-3)
    assert np.max(np.abs(r0)) <= 1e-10
    r1 = eikonal_residual(phi, x, 1.0, np.array([0.5, 0.0, 0.0]), 0.0, 1e-3)
    assert r1 == pytest.approx([-0.5, -0.5], abs=1e-10)


def test_residual_rejects_masked_points():
    with pytest.raises(AssertionError):
        eikonal_residual(lambda x: x[:, 0], np.zeros((1, 3)), 1.0, np.zeros(3), 0.0, 1e-3, d_obs=np.array([0.01]), mask_delta=0.05)


def test_collocation_respects_mask_and_seed(geom_obs):
    delta, band = 0.05, 0.15
    a = sample_collocation(geom_obs, 400, 200, seed=9, mask_delta=delta, band=band)
    b = sample_collocation(geom_obs, 400, 200, seed=9, mask_delta=delta, band=band)
    assert np.array_equal(a.points, b.points)
    assert a.interior.shape == (400, 3) and a.near_geom.shape == (200, 3)
    pts = a.points
    assert np.all(geom_obs.sdf_obstacles(pts) > delta)
    assert np.all(geom_obs.target_distance(pts) > 0)
    assert np.all((pts >= 0) & (pts <= 1))
    near = a.near_geom
    assert np.all((geom_obs.target_distance(near) < band) | (geom_obs.sdf_obstacles(near) < delta + band))
    c = sample_collocation(geom_obs, 400, 200, seed=10, mask_delta=delta, band=band)
    assert not np.array_equal(a.points, c.points)


def test_empty_collocation(geom):
    with pytest.raises(EmptyCollocation):
        sample_collocation(geom, 0, 0, seed=0, mask_delta=0.01, band=0.1)


def test_weight_init_bounds():
    net = ValueNetwork((7, 5), np.zeros(3), np.ones(3), seed=2)
    assert [p.shape for p in net.params] == [(3, 7), (7,), (7, 5), (5,), (5, 1), (1,)]
    assert net.n_params == 3 * 7 + 7 + 7 * 5 + 5 + 5 + 1
    for fan_in, (W, b) in zip((3, 7, 5), zip(net.params[::2], net.params[1::2])):
        bound = 1 / math.sqrt(fan_in)
        assert np.all(np.abs(W) <= bound) and np.all(np.abs(b) <= bound)


def _problem(geom, n=4, wind=(0.2, -0.1, 0.05), seed=0):
    opts = small_opts(barrier_C=2.0, barrier_k=15.0, bc_power_p=1.0)
    col = sample_collocation(geom, n, 0, seed=seed, mask_delta=0.05, band=0.2)
    v = np.full(n, 0.9)
    w = np.tile(np.asarray(wind), (n, 1))
    return PinnProblem(geom, col.points, v, w, 1e-3, opts, 0.04, 0.05)


def test_gradient_check_random_net(geom_obs):
    net = ValueNetwork((8, 8), geom_obs.origin, geom_obs.upper, seed=5)
    assert net.n_params <= 200
    assert weight_gradient_check(net, _problem(geom_obs)) <= 1e-5


def test_gradient_check_zero_net(geom_obs):
    net = ValueNetwork((6, 6), geom_obs.origin, geom_obs.upper).zero_()
    prob = _problem(geom_obs)
    _, _, grads = prob.loss_and_grad(net)
    rev = np.concatenate([g.ravel() for g in grads])
    flat = net.get_flat()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = 1e-6
        net.set_flat(flat + e)
        up = np.mean(prob.residual(net) ** 2)
        net.set_flat(flat - e)
        down = np.mean(prob.residual(net) ** 2)
        assert abs((up - down) / 2e-6 - rev[i]) <= 1e-6
    net.set_flat(flat)


def test_taylor_single_parameter(geom_obs):
    net = ValueNetwork((8, 8), geom_obs.origin, geom_obs.upper, seed=11)
    prob = _problem(geom_obs, n=6)
    loss0, _, grads = prob.loss_and_grad(net)
    flat = net.get_flat()
    g = np.concatenate([gr.ravel() for gr in grads])
    i = int(np.argmax(np.abs(g)))
    errs = []
    for eps in (1e-2, 5e-3):
        pert = flat.copy()
        pert[i] += eps
        net.set_flat(pert)
        errs.append(abs(float(np.mean(prob.residual(net) ** 2)) - loss0 - g[i] * eps))
    # first-order term removed: remainder shrinks like eps^2
    assert errs[1] < 0.3 * errs[0]


def test_training_reduces_residual(geom):
    sol = train_value_pinn(geom, NOWIND, FD, np.zeros(geom.shape), small_opts(), 1e-3, seed=1)
    assert len(sol.residual_mean_history) == 300
    assert sol.residual_mean_history[0] >= 5 * sol.residual_mean
    assert np.all(sol.phi[geom.target] == 0.0)
    assert sol.loss_final >= 0 and np.isfinite(sol.phi).all()


def test_zero_epochs_is_untrained_composition(geom):
    solver = PinnValueSolver(geom, NOWIND, FD, 1e-3, small_opts(epochs=0), seed=4)
    fresh = ValueNetwork((8, 8), geom.origin, geom.upper, seed=4)
    sol = solver.solve(np.zeros(geom.shape))
    assert sol.residual_mean_history == [] and sol.residual_max_history == []
    expected = compose_phi_hat(fresh, geom.centers().reshape(-1, 3), geom, 1.0, 1.0, 20.0).reshape(geom.shape)
    expected[geom.target] = 0.0
    assert np.array_equal(sol.phi, expected)


def test_jammed_density_uses_clip_floor(geom):
    solver = PinnValueSolver(geom, NOWIND, FD, 1e-3, small_opts(epochs=20), seed=0)
    rho = np.full(geom.shape, FD.rho_jam)
    assert np.all(solver.problem(rho).v == FD.clip_lo)
    sol = solver.solve(rho)
    assert np.all(np.isfinite(sol.phi[geom.free]))


def test_non_finite_loss_raises(geom):
    solver = PinnValueSolver(geom, NOWIND, FD, 1e-3, small_opts(epochs=3), seed=0)
    with pytest.raises(NonFiniteLoss) as exc:
        solver.solve(np.full(geom.shape, np.nan))
    assert exc.value.epoch == 0


def test_seeded_runs_are_bit_identical(geom):
    w = UniformWind(type="uniform", v=(0.2, 0.0, 0.0))
    a = train_value_pinn(geom, w, FD, np.zeros(geom.shape), small_opts(epochs=30), 1e-3, seed=8)
    b = train_value_pinn(geom, w, FD, np.zeros(geom.shape), small_opts(epochs=30), 1e-3, seed=8)
    assert np.array_equal(a.phi, b.phi)
    assert a.loss_history == b.loss_history


def test_warm_start_continues_training(geom):
    solver = PinnValueSolver(geom, NOWIND, FD, 1e-3, small_opts(epochs=20), seed=2)
    first = solver.solve(np.zeros(geom.shape))
    second = solver.solve(np.zeros(geom.shape))
    assert second.residual_mean_history[0] == pytest.approx(first.residual_mean, rel=1e-12)
    cold = PinnValueSolver(geom, NOWIND, FD, 1e-3, small_opts(epochs=20, warm_start=False), seed=2)
    a = cold.solve(np.zeros(geom.shape))
    b = cold.solve(np.zeros(geom.shape))
    assert np.array_equal(a.phi, b.phi)


def test_interpolation_reproduces_linear_fields(geom, rng):
    c = geom.centers()
    rho = 0.3 + 0.2 * c[..., 0] - 0.1 * c[..., 1] + 0.05 * c[..., 2]
    inner = rng.uniform(geom.axis_centers(0)[0], geom.axis_centers(0)[-1], (100, 3))
    got = interpolate_rho(geom, rho, inner)
    assert got == pytest.approx(0.3 + 0.2 * inner[:, 0] - 0.1 * inner[:, 1] + 0.05 * inner[:, 2], abs=1e-12)
    # outside the centre hull the value is clamped to the nearest hull point
    corner = interpolate_rho(geom, rho, np.array([[0.0, 0.0, 0.0]]))
    assert corner[0] == pytest.approx(rho[0, 0, 0], abs=1e-14)
