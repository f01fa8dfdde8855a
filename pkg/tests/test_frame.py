"""Moving-frame reconstruction, interface distributions, weak identity."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mbsolve.frame import (
    MovingFrameField,
    TestFunction,
    bump_family,
    eval_L1,
    eval_L2,
    master_for,
    to_moving_frame,
    toy_verify,
    weak_residual,
)
from mbsolve.grid import make_grid
from mbsolve.model import CoefficientSet
from mbsolve.solver import CenteredState, PathRecord, SolverConfig, StopReason, run


def quiet_coeffs(eta=1.0, kappa=1.0, sigma_star=0.0):
    zero_mu = lambda x, p, y, z: np.zeros_like(y)
    zero_sigma = lambda x, p, y: np.zeros_like(y)
    return CoefficientSet(
        eta_plus=eta,
        eta_minus=eta,
        kappa_plus=kappa,
        kappa_minus=kappa,
        sigma_star=sigma_star,
        mu_plus=zero_mu,
        mu_minus=zero_mu,
        sigma_plus=zero_sigma,
        sigma_minus=zero_sigma,
        rho=lambda yp, ym: 0.0,
        kernel=None,
        name="quiet",
    )


# ---------------------------------------------------------------- bumps


def test_bump_value_at_center_and_half_width():
    phi = TestFunction(center=0.3, width=0.5)
    assert phi(0.3) == pytest.approx(math.exp(-1.0), rel=1e-14)
    # s = 1/2 -> exp(-1 / (3/4)) = exp(-4/3)
    assert phi(0.3 + 0.25) == pytest.approx(math.exp(-4.0 / 3.0), rel=1e-14)
    assert phi(0.3 - 0.25) == pytest.approx(math.exp(-4.0 / 3.0), rel=1e-14)


def test_bump_vanishes_outside_support():
    phi = TestFunction(center=-0.2, width=0.4)
    for x in [-0.6, 0.2, -0.61, 0.3, 5.0, -5.0]:
        assert phi(x) == 0.0
        assert phi.derivative(x) == 0.0
        assert phi.second_derivative(x) == 0.0


def test_bump_derivative_matches_finite_difference():
    phi = TestFunction(center=0.1, width=0.7)
    xs = np.array([-0.4, -0.1, 0.1, 0.35, 0.6])
    h = 1e-6
    fd = (phi(xs + h) - phi(xs - h)) / (2 * h)
    assert np.allclose(phi.derivative(xs), fd, rtol=1e-7, atol=1e-10)


def test_bump_second_derivative_matches_finite_difference():
    phi = TestFunction(center=0.0, width=1.0)
    xs = np.array([-0.5, -0.2, 0.0, 0.3, 0.55])
    h = 1e-5
    fd = (phi(xs + h) - 2 * phi(xs) + phi(xs - h)) / (h * h)
    assert np.allclose(phi.second_derivative(xs), fd, rtol=1e-5, atol=1e-8)


def test_bump_rejects_nonpositive_width():
    with pytest.raises(ValueError, match="width"):
        TestFunction(center=0.0, width=0.0)


def test_antiderivative_table_matches_adaptive_quadrature():
    phi = TestFunction(center=0.2, width=0.6)
    xs, anti = phi.antiderivative_table()
    total, _ = quad(phi, *phi.support, epsabs=1e-13)
    assert anti[-1] == pytest.approx(total, abs=1e-11)
    # interior checkpoint
    mid = 0.2 + 0.17
    part, _ = quad(phi, phi.support[0], mid, epsabs=1e-13)
    assert np.interp(mid, xs, anti) == pytest.approx(part, abs=1e-10)


def test_bump_family_tiles_interval_at_two_widths():
    fam = bump_family(2.0)
    assert len(fam) == 7
    widths = sorted({phi.width for phi in fam})
    assert len(widths) == 2
    for phi in fam:
        lo, hi = phi.support
        assert -2.0 <= lo and hi <= 2.0
    # every interior point is seen by at least one bump
    probes = np.linspace(-1.35, 1.35, 61)
    cover = np.zeros_like(probes)
    for phi in fam:
        cover += np.asarray(phi(probes))
    assert np.all(cover > 1e-8)


# ------------------------------------------------- frame reconstruction


def test_master_for_margin_and_rejection():
    grid = make_grid(1.0, 64)
    full = master_for(grid)
    assert full.half_length == pytest.approx(1.0)
    shrunk = master_for(grid, margin=0.1)
    assert shrunk.half_length <= 0.9 + 1e-12
    assert shrunk.half_length == pytest.approx(shrunk.n_half * grid.h)
    with pytest.raises(ValueError, match="master"):
        master_for(grid, margin=0.99)


def test_to_moving_frame_zero_shift_reflects_phases():
    grid = make_grid(1.0, 32)
    x = grid.nodes
    u1 = np.exp(-x)
    u2 = np.cos(x)
    state = CenteredState(u1, u2, 0.0, 0.0)
    field = to_moving_frame(state, grid, master_for(grid))
    xs = field.master.nodes
    right = xs >= 0
    assert np.allclose(field.values[right], np.exp(-xs[right]), atol=1e-14)
    assert np.allclose(field.values[~right], np.cos(-xs[~right]), atol=1e-14)
    assert field.v_plus == pytest.approx(1.0)
    assert field.v_minus == pytest.approx(1.0)
    assert field.jump == pytest.approx(0.0)


def test_to_moving_frame_lattice_shift_is_node_exact():
    grid = make_grid(1.0, 32)
    x = grid.nodes
    u1 = x**2 + 1.0
    u2 = 3.0 * x
    p = 4 * grid.h  # interface sits exactly on a master node
    state = CenteredState(u1, u2, p, 0.0)
    master = master_for(grid, margin=5 * grid.h)
    field = to_moving_frame(state, grid, master)
    xs = field.master.nodes
    right = xs >= p
    assert np.allclose(field.values[right], (xs[right] - p) ** 2 + 1.0, atol=1e-13)
    assert np.allclose(field.values[~right], 3.0 * (p - xs[~right]), atol=1e-13)
    assert field.v_plus == pytest.approx(1.0)
    assert field.v_minus == pytest.approx(0.0)
    assert field.jump == pytest.approx(1.0)


def test_to_moving_frame_coverage_error():
    grid = make_grid(1.0, 16)
    state = CenteredState(np.ones(17), np.ones(17), 0.3, 0.0)
    with pytest.raises(ValueError, match="coverage"):
        to_moving_frame(state, grid, master_for(grid))


def test_interface_distributions_hand_values():
    master = master_for(make_grid(1.0, 16), margin=0.2)
    field = MovingFrameField(
        master=master,
        p=0.1,
        values=np.zeros(master.n_half * 2 + 1),
        v_plus=2.0,
        v_minus=-1.0,
        grad_plus=0.5,
        grad_minus=0.2,
    )
    phi = TestFunction(center=0.0, width=0.8)
    val = float(phi(0.1))
    dval = float(phi.derivative(0.1))
    assert eval_L1(field, phi) == pytest.approx(-3.0 * val, rel=1e-13)
    assert eval_L2(field, phi) == pytest.approx(-3.0 * dval - 0.3 * val, rel=1e-13)


# ------------------------------------------------------- weak residual


def heat_record(n, dt, t_final):
    grid = make_grid(1.0, n)
    x = grid.nodes
    u0 = np.exp(x - x * x)  # satisfies the interface flux condition for kappa=1
    config = SolverConfig(
        grid=grid,
        dt=dt,
        t_final=t_final,
        initial_u1=u0,
        initial_u2=0.5 * u0,
        retain_increments=True,
        snapshot_stride=1,
    )
    return grid, run(quiet_coeffs(eta=1.0, kappa=1.0), config, seed=0)


def test_weak_residual_shrinks_under_refinement_deterministic():
    phi = TestFunction(center=0.15, width=0.6)
    grid_c, rec_c = heat_record(24, 4e-3, 0.1)
    grid_f, rec_f = heat_record(96, 1e-3, 0.1)
    r_c = np.max(np.abs(weak_residual(rec_c, quiet_coeffs(), None, phi, grid_c)))
    r_f = np.max(np.abs(weak_residual(rec_f, quiet_coeffs(), None, phi, grid_f)))
    scale = abs(quad(phi, -1, 1)[0])
    assert r_c < 0.05 * scale
    assert r_c / r_f > 2.0


def test_weak_residual_requires_snapshots_and_increments():
    grid = make_grid(1.0, 16)
    u0 = np.exp(-grid.nodes)
    config = SolverConfig(
        grid=grid, dt=1e-3, t_final=0.01, initial_u1=u0, initial_u2=u0
    )
    rec = run(quiet_coeffs(), config, seed=0)
    phi = TestFunction(center=0.0, width=0.5)
    with pytest.raises(ValueError, match="snapshot"):
        weak_residual(rec, quiet_coeffs(), None, phi, grid)


def test_weak_residual_support_coverage_error():
    grid, rec = heat_record(16, 4e-3, 0.008)
    phi = TestFunction(center=0.9, width=0.5)  # support reaches past x = L
    with pytest.raises(ValueError, match="support"):
        weak_residual(rec, quiet_coeffs(), None, phi, grid)


def synthetic_indicator_record(grid, p_path, dt):
    """Record of the degenerate configuration: field one right of the
    interface, zero left, carried rigidly along p."""
    nsteps = len(p_path) - 1
    ones = np.ones(grid.n + 1)
    zeros = np.zeros(grid.n + 1)
    return PathRecord(
        times=np.arange(nsteps + 1) * dt,
        p=np.asarray(p_path, dtype=float),
        y_plus=np.ones(nsteps + 1),
        y_minus=np.zeros(nsteps + 1),
        g_plus=np.zeros(nsteps + 1),
        g_minus=np.zeros(nsteps + 1),
        l2_sq=np.full(nsteps + 1, np.nan),
        grad_sq=np.full(nsteps + 1, np.nan),
        lap_sq=np.full(nsteps + 1, np.nan),
        stop=StopReason("completed"),
        snapshots=[(m, ones, zeros) for m in range(nsteps + 1)],
        d_b=np.diff(np.asarray(p_path, dtype=float)),
        d_beta=np.zeros((nsteps, 0)),
    )


def test_weak_residual_reproduces_toy_identity():
    """On the degenerate configuration the weak residual must agree with
    the closed-form Ito expansion up to pairing quadrature error."""
    sigma_star = 0.3
    dt = 1e-3
    t_final = 0.25
    phi = TestFunction(center=0.1, width=0.5)
    toy = toy_verify(sigma_star, t_final, dt, seed=11, phi=phi, check_exact=False)
    grid = make_grid(1.0, 256)
    rec = synthetic_indicator_record(grid, toy["p"], dt)
    r = weak_residual(rec, quiet_coeffs(sigma_star=sigma_star), None, phi, grid)
    assert np.max(np.abs(r - toy["residual"])) < 2e-4


# ------------------------------------------------------------ toy oracle


def test_toy_exact_identity_dual_quadrature():
    phi = TestFunction(center=0.1, width=0.6)
    out = toy_verify(0.5, 1.0, 1e-2, seed=7, phi=phi)
    assert out["exact_ok"]
    assert out["max_exact_mismatch"] < 1e-8


def test_toy_frozen_interface_zero_residual():
    phi = TestFunction(center=0.0, width=0.5)
    out = toy_verify(0.0, 1.0, 1e-2, seed=3, phi=phi, check_exact=False)
    assert np.all(out["p"] == 0.0)
    assert out["max_ito_residual"] == 0.0


def test_toy_residual_shrinks_with_coupled_increments():
    phi = TestFunction(center=0.0, width=0.7)
    sigma_star = 0.5
    t_final = 1.0
    ratios = []
    for seed in (1, 2, 3):
        rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
        fine_db = rng.standard_normal(1000) * math.sqrt(1e-3)
        coarse_db = fine_db.reshape(100, 10).sum(axis=1)
        r_f = toy_verify(
            sigma_star, t_final, 1e-3, seed, phi, d_b=fine_db, check_exact=False
        )["max_ito_residual"]
        r_c = toy_verify(
            sigma_star, t_final, 1e-2, seed, phi, d_b=coarse_db, check_exact=False
        )["max_ito_residual"]
        ratios.append(r_c / r_f)
    assert np.mean(ratios) > 1.8
    assert sum(r > 1.0 for r in ratios) >= 2


def test_toy_rejects_negative_volatility():
    with pytest.raises(ValueError, match="volatility"):
        toy_verify(-0.1, 1.0, 1e-2, 0, TestFunction(0.0, 0.5))
