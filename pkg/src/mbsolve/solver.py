"""Semi-implicit Euler-Maruyama stepping of the centered two-phase system.

State is X = (u1, u2, p): both phases pulled back to the fixed half-line
grid (phase "-" by reflection) plus the interface position.  Per step,
the stiff linear part -- diffusivity eta +/- sigma_star^2/2 with the
Robin boundary condition -- is treated implicitly by one tridiagonal
solve per phase, while the nonlinear drift, the trace-driven transport,
and both noise terms are explicit:

    (I + dt*N) u_new = u + dt*(mu + rho*Du) + sigma*dxi + sigma_star*Du*dB
    p_new = p + rho*dt + sigma_star*dB.

The reflected phase carries the sign flips: its drift sees (-x, p, u2,
-Du2), its transport and gradient-noise terms enter with -Du2, and its
field noise is evaluated at p - x.  The analysis shift c cancels between
the linear and nonlinear parts and is omitted from stepping entirely.

Explicit gradient noise is only mean-square stable under a step bound,
so runs enforce dt <= h^2 / (2 sigma_star^2 + eps) in addition to the
unconditional stability of the implicit part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import Grid, cell_inner, discrete_inner, forward_diff, node_gradient, second_diff
from .model import CoefficientSet, TraceValues
from .noise import (
    ModeExpansion,
    NoiseSampler,
    WienerIncrement,
    build_expansion,
    eval_xi_increment,
    sample_increment,
)
from .operators import RobinOperator, build_robin_operator, _form_matrix

__all__ = [
    "CenteredState",
    "StopReason",
    "PathRecord",
    "SolverConfig",
    "assemble_linear_part",
    "step",
    "run",
    "trace",
    "StepWork",
    "make_step_work",
]

GUARD_EPSILON = 1e-12


@dataclass(frozen=True)
class CenteredState:
    """Both phase fields on the half-line grid plus the interface position."""

    u1: np.ndarray
    u2: np.ndarray
    p: float
    t: float


@dataclass(frozen=True)
class StopReason:
    """Why a path ended: ran to completion, tripped the trace threshold,
    or produced non-finite values."""

    kind: str  # "completed" | "blowup" | "nonfinite"
    threshold: float | None = None
    time: float | None = None

    def __str__(self) -> str:
        if self.kind == "completed":
            return "completed"
        if self.kind == "blowup":
            return f"blowup(N={self.threshold:g}, t={self.time:.6g})"
        return f"nonfinite(t={self.time:.6g})"


@dataclass
class PathRecord:
    """Per-step time series of one path plus optional retained data."""

    times: np.ndarray
    p: np.ndarray
    y_plus: np.ndarray
    y_minus: np.ndarray
    g_plus: np.ndarray
    g_minus: np.ndarray
    l2_sq: np.ndarray  # ||u1||^2 + ||u2||^2 per recorded step
    grad_sq: np.ndarray  # ||Du1||^2 + ||Du2||^2
    lap_sq: np.ndarray  # ||DDu1||^2 + ||DDu2||^2
    stop: StopReason
    snapshots: list = field(default_factory=list)  # (step index, u1, u2)
    d_b: np.ndarray | None = None  # retained interface increments
    d_beta: np.ndarray | None = None  # retained mode increments (steps, modes)
    meta: dict = field(default_factory=dict)

    @property
    def l2_u(self) -> np.ndarray:
        return np.sqrt(self.l2_sq)

    @property
    def h1_u(self) -> np.ndarray:
        return np.sqrt(self.l2_sq + self.grad_sq)

    @property
    def final_state(self) -> CenteredState:
        idx, u1, u2 = self.snapshots[-1]
        return CenteredState(u1, u2, float(self.p[idx]), float(self.times[idx]))


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping, stopping, and retention choices for one run."""

    grid: Grid
    dt: float
    t_final: float
    initial_u1: np.ndarray
    initial_u2: np.ndarray
    initial_p: float = 0.0
    n_max: float = math.inf
    retain_increments: bool = False
    snapshot_stride: int = 0  # 0: first/last only; s>0: every s-th step too
    presmooth: bool = True
    noise_modes: int = 64
    z_max: float | None = None
    guard_epsilon: float = GUARD_EPSILON

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValueError(f"step size must be positive, got {self.dt}")
        if self.t_final < 0.0:
            raise ValueError(f"final time must be nonnegative, got {self.t_final}")
        n = self.grid.n
        for name, u in (("initial_u1", self.initial_u1), ("initial_u2", self.initial_u2)):
            u = np.asarray(u, dtype=float)
            if u.shape != (n + 1,):
                raise ValueError(f"{name} must have {n + 1} nodes, got shape {u.shape}")
            if not np.all(np.isfinite(u)):
                raise ValueError(f"{name} contains non-finite values")
        if self.snapshot_stride < 0:
            raise ValueError("snapshot stride must be nonnegative")

    def stability_guard(self, sigma_star: float) -> float:
        return self.grid.h**2 / (2.0 * sigma_star**2 + self.guard_epsilon)


def assemble_linear_part(coeffs: CoefficientSet, grid: Grid) -> tuple[RobinOperator, RobinOperator]:
    """Robin operators of the implicit part, one per phase.

    Effective diffusivity is eta +/- sigma_star^2/2 (the gradient-noise
    correction).  The shift c only matters for the operator verification
    suite; the default picks the smallest round value strictly above the
    max(eta * kappa^2) threshold the second gradient bound needs.
    """
    boost = 0.5 * coeffs.sigma_star**2
    c = 1.01 * max(
        coeffs.eta_plus * coeffs.kappa_plus**2,
        coeffs.eta_minus * coeffs.kappa_minus**2,
        1.0,
    )
    op_plus = build_robin_operator(grid, coeffs.eta_plus + boost, coeffs.kappa_plus, c)
    op_minus = build_robin_operator(grid, coeffs.eta_minus + boost, coeffs.kappa_minus, c)
    return op_plus, op_minus


def _implicit_matrix(grid: Grid, eta: float, kappa: float, dt: float) -> np.ndarray:
    """Banded form of I + dt * W^{-1} K0 with K0 the shift-free form matrix."""
    main, off = _form_matrix(grid, eta, kappa, c=0.0)
    w = grid.weights
    ab = np.zeros((3, grid.n + 1))
    ab[1] = 1.0 + dt * main / w
    ab[0, 1:] = dt * off / w[:-1]
    ab[2, :-1] = dt * off / w[1:]
    return ab


@dataclass(frozen=True)
class StepWork:
    """Precomputed per-run data: implicit solves, nodes, diagnostics."""

    grid: Grid
    dt: float
    coeffs: CoefficientSet
    expansion: ModeExpansion | None
    ab_plus: np.ndarray
    ab_minus: np.ndarray

    def solve_plus(self, rhs: np.ndarray) -> np.ndarray:
        # check_finite off: the run loop detects non-finite states itself
        return solve_banded((1, 1), self.ab_plus, rhs, check_finite=False)

    def solve_minus(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.ab_minus, rhs, check_finite=False)


def make_step_work(
    coeffs: CoefficientSet,
    grid: Grid,
    dt: float,
    expansion: ModeExpansion | None = None,
) -> StepWork:
    boost = 0.5 * coeffs.sigma_star**2
    ab_p = _implicit_matrix(grid, coeffs.eta_plus + boost, coeffs.kappa_plus, dt)
    ab_m = _implicit_matrix(grid, coeffs.eta_minus + boost, coeffs.kappa_minus, dt)
    return StepWork(grid, dt, coeffs, expansion, ab_p, ab_m)


def trace(state: CenteredState, grid: Grid) -> TraceValues:
    """One-sided boundary values and gradients in moving-frame convention.

    The reflected phase flips its spatial axis, so the left gradient at
    the interface is minus the reflected phase's boundary gradient.
    """
    g1 = float(node_gradient(state.u1, grid)[0])
    g2 = float(node_gradient(state.u2, grid)[0])
    return TraceValues(
        y_plus=float(state.u1[0]),
        y_minus=float(state.u2[0]),
        g_plus=g1,
        g_minus=-g2,
    )


def step(
    state: CenteredState,
    work: StepWork,
    increment: WienerIncrement | None = None,
) -> CenteredState:
    """One semi-implicit Euler-Maruyama step; see the module docstring."""
    grid = work.grid
    coeffs = work.coeffs
    dt = work.dt
    x = grid.nodes
    u1, u2, p = state.u1, state.u2, state.p

    d1 = node_gradient(u1, grid)
    d2 = node_gradient(u2, grid)
    rho_val = float(coeffs.rho(float(u1[0]), float(u2[0])))

    rhs1 = u1 + dt * (coeffs.mu_plus(x, p, u1, d1) + rho_val * d1)
    rhs2 = u2 + dt * (coeffs.mu_minus(-x, p, u2, -d2) - rho_val * d2)

    d_b = 0.0
    if increment is not None:
        d_b = increment.d_b
        if work.expansion is not None:
            xi1 = eval_xi_increment(work.expansion, increment.d_beta, p + x)
            xi2 = eval_xi_increment(work.expansion, increment.d_beta, p - x)
            rhs1 = rhs1 + coeffs.sigma_plus(x, p, u1) * xi1
            rhs2 = rhs2 + coeffs.sigma_minus(-x, p, u2) * xi2
        if coeffs.sigma_star > 0.0:
            rhs1 = rhs1 + coeffs.sigma_star * d1 * d_b
            rhs2 = rhs2 - coeffs.sigma_star * d2 * d_b

    u1_new = work.solve_plus(rhs1)
    u2_new = work.solve_minus(rhs2)
    p_new = p + rho_val * dt + coeffs.sigma_star * d_b
    return CenteredState(u1_new, u2_new, float(p_new), state.t + dt)


def _presmooth(u: np.ndarray, grid: Grid, eta: float, kappa: float) -> np.ndarray:
    ab = _implicit_matrix(grid, eta, kappa, grid.h**2)
    return solve_banded((1, 1), ab, u, check_finite=False)


def _robin_residual_scaled(u: np.ndarray, grid: Grid, kappa: float) -> float:
    du0 = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * grid.h)
    return abs(du0 - kappa * u[0]) / max(float(np.max(np.abs(u))), 1.0)


def run(
    coeffs: CoefficientSet,
    config: SolverConfig,
    seed: int,
    path_index: int = 0,
    expansion: ModeExpansion | None = None,
    increments: tuple[np.ndarray, np.ndarray] | None = None,
) -> PathRecord:
    """Integrate one path to t_final or to a stop condition.

    The path stops early when the summed absolute boundary traces exceed
    ``config.n_max`` (threshold stop) or when any state value turns
    non-finite.  ``increments`` overrides the sampler with precomputed
    (d_b[steps], d_beta[steps, modes]) arrays -- used by refinement
    studies that couple noise across step sizes.  Reproducibility: the
    pair (seed, path_index) keys the noise stream, so identical
    arguments give bitwise identical records.
    """
    grid = config.grid
    dt = config.dt
    guard = config.stability_guard(coeffs.sigma_star)
    if dt > guard * (1.0 + 1e-12):
        raise ValueError(
            f"dt={dt:g} exceeds the gradient-noise stability guard {guard:g} "
            f"(h^2 / (2 sigma_star^2 + eps))"
        )

    needs_field_noise = coeffs.kernel is not None
    if needs_field_noise and expansion is None:
        z_max = config.z_max
        if z_max is None:
            z_max = grid.length + 3.0 * coeffs.kernel.ell
        expansion = build_expansion(coeffs.kernel, config.noise_modes, z_max)
    modes = expansion.modes if expansion is not None else 0
    stochastic = needs_field_noise or coeffs.sigma_star > 0.0

    sampler = None
    if stochastic and increments is None:
        sampler = NoiseSampler(modes=modes, dt=dt, seed=seed, path_index=path_index)

    nsteps = int(round(config.t_final / dt))
    if abs(nsteps * dt - config.t_final) > 1e-9 * max(config.t_final, 1.0):
        nsteps = int(math.ceil(config.t_final / dt - 1e-12))
    if increments is not None and len(increments[0]) < nsteps:
        raise ValueError(
            f"supplied increments cover {len(increments[0])} steps, need {nsteps}"
        )

    u1 = np.array(config.initial_u1, dtype=float)
    u2 = np.array(config.initial_u2, dtype=float)
    meta = {"presmooth": config.presmooth, "t_final": nsteps * dt, "stability_guard": guard}
    if config.presmooth:
        u1 = _presmooth(u1, grid, coeffs.eta_plus, coeffs.kappa_plus)
        u2 = _presmooth(u2, grid, coeffs.eta_minus, coeffs.kappa_minus)

    state = CenteredState(u1, u2, float(config.initial_p), 0.0)
    work = make_step_work(coeffs, grid, dt, expansion)

    times = np.zeros(nsteps + 1)
    p_path = np.zeros(nsteps + 1)
    y_p = np.zeros(nsteps + 1)
    y_m = np.zeros(nsteps + 1)
    g_p = np.zeros(nsteps + 1)
    g_m = np.zeros(nsteps + 1)
    l2_sq = np.zeros(nsteps + 1)
    grad_sq = np.zeros(nsteps + 1)
    lap_sq = np.zeros(nsteps + 1)
    d_b_kept = np.zeros(nsteps) if config.retain_increments else None
    d_beta_kept = np.zeros((nsteps, modes)) if config.retain_increments else None
    snapshots: list = []
    max_resid = 0.0

    def record(m: int, s: CenteredState) -> TraceValues:
        tv = trace(s, grid)
        times[m] = s.t
        p_path[m] = s.p
        y_p[m] = tv.y_plus
        y_m[m] = tv.y_minus
        g_p[m] = tv.g_plus
        g_m[m] = tv.g_minus
        l2_sq[m] = discrete_inner(s.u1, s.u1, grid) + discrete_inner(s.u2, s.u2, grid)
        du1 = forward_diff(s.u1, grid)
        du2 = forward_diff(s.u2, grid)
        grad_sq[m] = cell_inner(du1, du1, grid) + cell_inner(du2, du2, grid)
        dd1 = second_diff(s.u1, grid)
        dd2 = second_diff(s.u2, grid)
        lap_sq[m] = discrete_inner(dd1, dd1, grid) + discrete_inner(dd2, dd2, grid)
        return tv

    def snapshot(m: int, s: CenteredState) -> None:
        take = (
            m == 0
            or m == nsteps
            or (config.snapshot_stride > 0 and m % config.snapshot_stride == 0)
        )
        if take:
            snapshots.append((m, s.u1.copy(), s.u2.copy()))

    def finish(stop: StopReason, last: int, last_state: CenteredState) -> PathRecord:
        meta["max_robin_residual_scaled"] = max_resid
        if snapshots and snapshots[-1][0] != last:
            snapshots.append((last, last_state.u1.copy(), last_state.u2.copy()))
        sl = slice(0, last + 1)
        return PathRecord(
            times[sl].copy(),
            p_path[sl].copy(),
            y_p[sl].copy(),
            y_m[sl].copy(),
            g_p[sl].copy(),
            g_m[sl].copy(),
            l2_sq[sl].copy(),
            grad_sq[sl].copy(),
            lap_sq[sl].copy(),
            stop,
            snapshots,
            d_b_kept[:last].copy() if d_b_kept is not None else None,
            d_beta_kept[:last].copy() if d_beta_kept is not None else None,
            meta,
        )

    tv = record(0, state)
    snapshot(0, state)
    if abs(tv.y_plus) + abs(tv.y_minus) > config.n_max:
        return finish(StopReason("blowup", config.n_max, 0.0), 0, state)

    good = state
    for m in range(nsteps):
        inc = None
        if increments is not None:
            inc = WienerIncrement(np.asarray(increments[1][m], dtype=float), float(increments[0][m]))
        elif sampler is not None:
            inc = sample_increment(sampler)
        if config.retain_increments:
            d_b_kept[m] = inc.d_b if inc is not None else 0.0
            if inc is not None and modes:
                d_beta_kept[m] = inc.d_beta

        state = step(state, work, inc)

        if not (
            np.all(np.isfinite(state.u1))
            and np.all(np.isfinite(state.u2))
            and np.isfinite(state.p)
        ):
            return finish(StopReason("nonfinite", None, state.t), m, good)

        good = state
        max_resid = max(
            max_resid,
            _robin_residual_scaled(state.u1, grid, coeffs.kappa_plus),
            _robin_residual_scaled(state.u2, grid, coeffs.kappa_minus),
        )
        tv = record(m + 1, state)
        snapshot(m + 1, state)
        if abs(tv.y_plus) + abs(tv.y_minus) > config.n_max:
            return finish(StopReason("blowup", config.n_max, state.t), m + 1, state)

    return finish(StopReason("completed"), nsteps, state)
