"""Moving-frame reconstruction and the weak-identity verifiers.

The solver works in the interface frame; physical space wants
v(t, x) = u(t, x - p(t)).  This module rebuilds v on the symmetric
master lattice, evaluates the two distribution-valued interface terms

    <L1, phi> = -(v(p+) - v(p-)) phi(p)
    <L2, phi> = -(v(p+) - v(p-)) phi'(p) - (grad v(p+) - grad v(p-)) phi(p),

and certifies simulated paths against the weak form of the dynamics: the
pairing <v(t) - v(0), phi> must match the accumulated drift, noise,
interface-transport (L1 dp) and interface-Ito (L2 d[p]) sums for smooth
compactly supported test functions.  Interface jump data always comes
from the solver's traces; interpolating across the discontinuity would
destroy exactly the quantities L1 and L2 measure.

A closed-form degenerate configuration -- pure Brownian interface
carrying an indicator profile -- provides an exact oracle: the pairing
reduces to an antiderivative difference, checkable both directly and
through its Ito expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, quad

from .grid import Grid, MasterGrid, node_gradient, second_diff
from .model import CoefficientSet, TraceValues
from .noise import ModeExpansion, eval_modes
from .solver import CenteredState, PathRecord, run, trace

__all__ = [
    "TestFunction",
    "bump_family",
    "MovingFrameField",
    "master_for",
    "to_moving_frame",
    "eval_L1",
    "eval_L2",
    "weak_residual",
    "weak_refinement_study",
    "toy_verify",
]


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported bump with two evaluable derivatives.

    Profile exp(-1/(1 - s^2)) on |s| < 1 with s = (x - center)/width,
    zero outside; infinitely differentiable at the support edges.
    """

    __test__ = False  # tells pytest the Test- prefix is not a test case

    center: float
    width: float

    def __post_init__(self) -> None:
        if self.width <= 0.0:
            raise ValueError(f"bump width must be positive, got {self.width}")

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.width, self.center + self.width)

    def _s(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.width

    def __call__(self, x):
        s = self._s(x)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        out[inside] = np.exp(-1.0 / (1.0 - si * si))
        return out if out.ndim else float(out)

    def derivative(self, x):
        s = self._s(x)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        g = 1.0 - si * si
        out[inside] = np.exp(-1.0 / g) * (-2.0 * si / (g * g)) / self.width
        return out if out.ndim else float(out)

    def second_derivative(self, x):
        s = self._s(x)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        g = 1.0 - si * si
        phi = np.exp(-1.0 / g)
        first = -2.0 * si / (g * g)
        second = first * first - 2.0 * (1.0 + 3.0 * si * si) / (g * g * g)
        out[inside] = phi * second / (self.width * self.width)
        return out if out.ndim else float(out)

    def antiderivative_table(self, points: int = 32769) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative integral of the bump from its left support edge."""
        lo, hi = self.support
        xs = np.linspace(lo, hi, points)
        vals = np.asarray(self(xs))
        anti = np.concatenate([[0.0], cumulative_simpson(vals, x=xs)])
        return xs, anti


def bump_family(half_length: float, count: int = 7) -> list[TestFunction]:
    """Bumps tiling (-half_length, half_length) at two alternating widths."""
    centers = np.linspace(-0.7, 0.7, count) * half_length
    out = []
    for j, c in enumerate(centers):
        w = (0.28 if j % 2 == 0 else 0.5) * half_length
        out.append(TestFunction(float(c), float(w)))
    return out


@dataclass(frozen=True)
class MovingFrameField:
    """Physical-frame field on the master lattice plus interface jump data."""

    master: MasterGrid
    p: float
    values: np.ndarray
    v_plus: float
    v_minus: float
    grad_plus: float
    grad_minus: float

    @property
    def jump(self) -> float:
        return self.v_plus - self.v_minus

    @property
    def grad_jump(self) -> float:
        return self.grad_plus - self.grad_minus


def master_for(grid: Grid, margin: float = 0.0) -> MasterGrid:
    """Master lattice on [-L + margin, L - margin], rounded to whole cells.

    A nonzero margin leaves coverage headroom for interface excursions:
    reconstruction needs |p| + half_length <= L.
    """
    cells = grid.n - int(math.ceil(margin / grid.h))
    if cells < 2:
        raise ValueError(f"margin {margin} leaves no master lattice on [0, {grid.length}]")
    return MasterGrid(cells * grid.h, cells)


def to_moving_frame(
    state: CenteredState, grid: Grid, master: MasterGrid
) -> MovingFrameField:
    """Assemble v(x) = u(x - p) on the master lattice.

    Master nodes right of the interface read phase "+" at offset x - p,
    nodes left of it read the reflected phase at p - x, both by linear
    interpolation on the phase grid (node-exact when p lies on the
    lattice).  A node exactly at the interface stores the right-side
    value in the lattice array; both one-sided values and gradients are
    carried separately from the solver's traces.
    """
    p = state.p
    if abs(p) + master.half_length > grid.length * (1.0 + 1e-12):
        raise ValueError(
            f"interface at {p:g} pushes the master lattice of half-length "
            f"{master.half_length:g} outside the phase coverage [0, {grid.length:g}]"
        )
    xs = master.nodes
    values = np.empty_like(xs)
    right = xs >= p
    values[right] = np.interp(xs[right] - p, grid.nodes, state.u1)
    values[~right] = np.interp(p - xs[~right], grid.nodes, state.u2)
    tv = trace(state, grid)
    return MovingFrameField(
        master, p, values, tv.y_plus, tv.y_minus, tv.g_plus, tv.g_minus
    )


def eval_L1(field: MovingFrameField, phi: TestFunction) -> float:
    """Dirac interface term: -jump * phi(p)."""
    return -field.jump * float(phi(field.p))


def eval_L2(field: MovingFrameField, phi: TestFunction) -> float:
    """Dipole interface term: -jump * phi'(p) - gradient-jump * phi(p)."""
    return -field.jump * float(phi.derivative(field.p)) - field.grad_jump * float(
        phi(field.p)
    )


def _pair_sides(
    grid: Grid, p: float, f_plus: np.ndarray, f_minus: np.ndarray, phi: TestFunction
) -> float:
    """<f, phi> over both phases by trapezoid on the phase lattices.

    Right phase integrates f(p + xi) phi(p + xi) d xi, left phase the
    reflection; the lattices meet exactly at the interface, so the jump
    needs no special handling.
    """
    w = grid.weights
    right = float(np.dot(w, f_plus * phi(p + grid.nodes)))
    left = float(np.dot(w, f_minus * phi(p - grid.nodes)))
    return right + left


def weak_residual(
    record: PathRecord,
    coeffs: CoefficientSet,
    expansion: ModeExpansion | None,
    phi: TestFunction,
    grid: Grid,
) -> np.ndarray:
    """Residual time series of the weak identity along a recorded path.

    R(t_N) = <v(t_N) - v(0), phi>
             - sum_m dt <eta v'' + mu(.), phi>
             - sum_m sum_k <sigma(.) psi_k, phi> dbeta_k
             - sum_m <L1> dp_m  -  (sigma_star^2 / 2) sum_m <L2> dt,

    with every sum evaluated at the left point (the predictable side of
    the Ito integrals), second derivatives one-sided on each side of the
    interface, and pairings by trapezoid quadrature on the phase grids.
    Needs a record with per-step snapshots and retained increments.
    """
    nsteps = record.times.size - 1
    if len(record.snapshots) != nsteps + 1:
        raise ValueError(
            "weak residual needs per-step field snapshots (snapshot_stride=1)"
        )
    if record.d_b is None:
        raise ValueError("weak residual needs retained noise increments")
    lo, hi = phi.support
    p_min, p_max = float(np.min(record.p)), float(np.max(record.p))
    if lo < p_max - grid.length or hi > p_min + grid.length:
        raise ValueError(
            f"test function support ({lo:g}, {hi:g}) is not covered by the "
            f"phase grids along the path (p in [{p_min:g}, {p_max:g}])"
        )

    x = grid.nodes
    pair0 = None
    resid = np.zeros(nsteps + 1)
    acc = 0.0
    for m in range(nsteps + 1):
        _, u1, u2 = record.snapshots[m]
        p = float(record.p[m])
        pair_m = _pair_sides(grid, p, u1, u2, phi)
        if m == 0:
            pair0 = pair_m
        resid[m] = pair_m - pair0 - acc
        if m == nsteps:
            break

        dt = float(record.times[m + 1] - record.times[m])
        d1 = node_gradient(u1, grid)
        d2 = node_gradient(u2, grid)
        dd1 = second_diff(u1, grid)
        dd2 = second_diff(u2, grid)
        mu1 = coeffs.eta_plus * dd1 + coeffs.mu_plus(x, p, u1, d1)
        mu2 = coeffs.eta_minus * dd2 + coeffs.mu_minus(-x, p, u2, -d2)
        acc += dt * _pair_sides(grid, p, mu1, mu2, phi)

        if expansion is not None and record.d_beta is not None and record.d_beta.size:
            w = grid.weights
            s1 = w * coeffs.sigma_plus(x, p, u1) * phi(p + x)
            s2 = w * coeffs.sigma_minus(-x, p, u2) * phi(p - x)
            psi_r = eval_modes(expansion, p + x)
            psi_l = eval_modes(expansion, p - x)
            acc += float((psi_r @ s1 + psi_l @ s2) @ record.d_beta[m])

        jump = float(record.y_plus[m] - record.y_minus[m])
        grad_jump = float(record.g_plus[m] - record.g_minus[m])
        dp = float(record.p[m + 1] - record.p[m])
        acc += (-jump * float(phi(p))) * dp
        l2_term = -jump * float(phi.derivative(p)) - grad_jump * float(phi(p))
        acc += 0.5 * coeffs.sigma_star**2 * l2_term * dt

    return resid


def weak_refinement_study(
    coeffs: CoefficientSet,
    length: float,
    n_coarse: int,
    dt_coarse: float,
    t_final: float,
    seeds: list[int],
    bumps: list[TestFunction],
    initial_profile,
    initial_p: float = 0.0,
    noise_modes: int = 32,
    z_max: float | None = None,
    refine_t: int = 4,
    refine_x: int = 2,
) -> dict:
    """Max weak residual per test function at two coupled resolutions.

    For each seed, one Wiener realization is drawn at the fine step and
    block-summed for the coarse level, so both runs see the same noise;
    the grids differ by ``refine_x`` and the steps by ``refine_t``.  A
    consistent discretization must shrink the residual for every test
    function on every seed.  Paths that stop early void the comparison
    and raise.
    """
    from .grid import make_grid
    from .noise import NoiseSampler, build_expansion, sample_increments
    from .solver import SolverConfig

    expansion = None
    if coeffs.kernel is not None:
        if z_max is None:
            z_max = length + 3.0 * coeffs.kernel.ell
        expansion = build_expansion(coeffs.kernel, noise_modes, z_max)
    modes = expansion.modes if expansion is not None else 0

    levels = [
        (make_grid(length, n_coarse), dt_coarse),
        (make_grid(length, n_coarse * refine_x), dt_coarse / refine_t),
    ]
    n_fine_steps = int(round(t_final / levels[1][1]))

    rows = []
    for seed in seeds:
        sampler = NoiseSampler(modes=modes, dt=levels[1][1], seed=seed, path_index=0)
        db_f, dbeta_f = sample_increments(sampler, n_fine_steps)
        incs = {
            1: (db_f, dbeta_f),
            0: (
                db_f.reshape(-1, refine_t).sum(axis=1),
                dbeta_f.reshape(-1, refine_t, modes).sum(axis=1),
            ),
        }
        residuals = []
        for lvl, (grid, dt) in enumerate(levels):
            u0 = np.asarray(initial_profile(grid.nodes), dtype=float)
            config = SolverConfig(
                grid=grid,
                dt=dt,
                t_final=t_final,
                initial_u1=u0,
                initial_u2=u0,
                initial_p=initial_p,
                snapshot_stride=1,
                retain_increments=True,
                noise_modes=noise_modes,
                z_max=z_max,
            )
            rec = run(coeffs, config, seed, expansion=expansion, increments=incs[lvl])
            if rec.stop.kind != "completed":
                raise RuntimeError(
                    f"refinement study path stopped early (seed {seed}, "
                    f"level {lvl}): {rec.stop}"
                )
            residuals.append(
                [
                    float(np.max(np.abs(weak_residual(rec, coeffs, expansion, phi, grid))))
                    for phi in bumps
                ]
            )
        for j, phi in enumerate(bumps):
            rows.append(
                {
                    "phi_center": phi.center,
                    "phi_width": phi.width,
                    "seed": seed,
                    "resid_coarse": residuals[0][j],
                    "resid_fine": residuals[1][j],
                    "improved": residuals[1][j] < residuals[0][j],
                }
            )
    # per test function: worst residual across seeds at each level
    per_phi = []
    for j, phi in enumerate(bumps):
        mine = [r for r in rows if r["phi_center"] == phi.center and r["phi_width"] == phi.width]
        worst_c = max(r["resid_coarse"] for r in mine)
        worst_f = max(r["resid_fine"] for r in mine)
        per_phi.append(
            {
                "phi_center": phi.center,
                "phi_width": phi.width,
                "resid_coarse": worst_c,
                "resid_fine": worst_f,
                "improved": worst_f < worst_c,
            }
        )
    return {
        "rows": rows,
        "per_phi": per_phi,
        "all_improved": all(r["improved"] for r in per_phi),
        "levels": [
            {"n": g.n, "dt": dt, "h": g.h} for g, dt in levels
        ],
    }


def toy_verify(
    sigma_star: float,
    t_final: float,
    dt: float,
    seed: int,
    phi: TestFunction,
    d_b: np.ndarray | None = None,
    check_exact: bool = True,
    exact_tol: float = 1e-8,
) -> dict:
    """Exact oracle: Brownian interface carrying a unit indicator profile.

    The interface moves as p(t) = sigma_star * B(t) and the profile is
    identically one right of it, zero left.  Then the pairing collapses
    to an antiderivative difference:

        (a)  <v(t) - v(0), phi> = Phi(0) - Phi(p(t))      exactly,
        (b)  Phi(0) - Phi(p(t_N)) ~ -sum phi(p_m) dp_m
                                    - (sigma_star^2/2) sum phi'(p_m) dt,

    where (a) is checked against adaptive quadrature at every step (two
    independent integration routes) and (b) is the Ito expansion whose
    residual must vanish at the Euler-Maruyama strong rate as dt -> 0.
    ``d_b`` supplies precomputed Brownian increments for refinement
    studies that couple levels; by default the (seed, 0) stream is used.
    """
    if sigma_star < 0.0:
        raise ValueError(f"interface volatility must be nonnegative, got {sigma_star}")
    nsteps = int(round(t_final / dt))
    if d_b is None:
        rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
        d_b = rng.standard_normal(nsteps) * math.sqrt(dt)
    else:
        d_b = np.asarray(d_b, dtype=float)[:nsteps]
    dp = sigma_star * d_b
    p = np.concatenate([[0.0], np.cumsum(dp)])

    xs, anti = phi.antiderivative_table()

    def big_phi(q: np.ndarray) -> np.ndarray:
        return np.interp(q, xs, anti, left=0.0, right=anti[-1])

    exact = big_phi(np.zeros(1))[0] - big_phi(p)

    max_mismatch = 0.0
    if check_exact:
        for m in range(nsteps + 1):
            direct, _ = quad(phi, 0.0, p[m], epsabs=1e-12, epsrel=1e-12, limit=200)
            max_mismatch = max(max_mismatch, abs(-direct - exact[m]))
            if max_mismatch > exact_tol:
                break

    phi_p = np.asarray(phi(p[:-1]))
    dphi_p = np.asarray(phi.derivative(p[:-1]))
    ito = np.concatenate(
        [[0.0], np.cumsum(-phi_p * dp - 0.5 * sigma_star**2 * dphi_p * dt)]
    )
    resid = exact - ito
    return {
        "p": p,
        "exact_pairing": exact,
        "ito_sum": ito,
        "residual": resid,
        "max_ito_residual": float(np.max(np.abs(resid))),
        "max_exact_mismatch": float(max_mismatch),
        "exact_ok": (not check_exact) or max_mismatch <= exact_tol,
    }
