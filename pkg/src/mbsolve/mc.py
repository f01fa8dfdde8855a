"""Monte Carlo ensemble harness and convergence-order estimation.

Runs independent paths of the interface system in a thread pool, keyed
by (base seed, path index) counter-based RNG substreams so results do
not depend on scheduling order.  Aggregates the a-priori moment
functional

    sup_{t <= T} ( |p(t)|^2 + ||v||_h^2 + ||grad v||_h^2 )
    + integral_0^T ||lap v||_h^2 dt,

whose expectation stays bounded in the bounded-drift, linear-growth
regime; the normalized estimate K_hat = estimate / (1 + initial norm)
is reported with a bootstrap confidence interval.  Also provides the
blow-up threshold scan (stop times must be monotone in the threshold on
identical noise) and least-squares convergence-order fitting, including
the deterministic heat-equation oracle with a closed-form
eigen-expansion reference.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .grid import cell_inner, discrete_inner, forward_diff, make_grid
from .model import CoefficientSet
from .noise import ModeExpansion, build_expansion
from .solver import PathRecord, SolverConfig, StopReason, run

__all__ = [
    "PathSummary",
    "EnsembleStats",
    "initial_moment_norm",
    "ensemble",
    "ExplosionScan",
    "explosion_scan",
    "ConvergenceReport",
    "fit_order",
    "robin_eigenvalue",
    "heat_convergence_study",
]


@dataclass(frozen=True)
class PathSummary:
    """Scalar digest of one path at each checkpoint time."""

    path_index: int
    stop: StopReason
    sup_moment: np.ndarray  # per checkpoint
    dissipation: np.ndarray  # per checkpoint
    final_p: float
    final_time: float


@dataclass
class EnsembleStats:
    """Aggregates over an ensemble of independently seeded paths."""

    n_paths: int
    base_seed: int
    checkpoints: np.ndarray
    sup_moment: np.ndarray  # (paths, checkpoints)
    dissipation: np.ndarray  # (paths, checkpoints)
    mean_sup: np.ndarray
    se_sup: np.ndarray
    mean_dissipation: np.ndarray
    se_dissipation: np.ndarray
    blowup_fraction: float
    mean_blowup_time: float  # nan when no path blew up
    initial_norm: float
    k_hat: np.ndarray | None  # normalized moment estimate per checkpoint
    k_hat_ci: np.ndarray | None  # (2, checkpoints) bootstrap 95% band
    summaries: list[PathSummary] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)
    records: list[PathRecord] | None = None


def _moment_series(rec: PathRecord) -> np.ndarray:
    return rec.p**2 + rec.l2_sq + rec.grad_sq


def _summarize(rec: PathRecord, checkpoints: np.ndarray, path_index: int) -> PathSummary:
    m = _moment_series(rec)
    sup = np.empty(checkpoints.size)
    diss = np.empty(checkpoints.size)
    for j, ck in enumerate(checkpoints):
        # include every recorded step up to the checkpoint; a path that
        # stopped early contributes everything it produced
        idx = int(np.searchsorted(rec.times, ck * (1.0 + 1e-12), side="right"))
        idx = max(idx, 1)
        sup[j] = float(np.max(m[:idx]))
        diss[j] = float(trapezoid(rec.lap_sq[:idx], rec.times[:idx]))
    return PathSummary(
        path_index=path_index,
        stop=rec.stop,
        sup_moment=sup,
        dissipation=diss,
        final_p=float(rec.p[-1]),
        final_time=float(rec.times[-1]),
    )


def initial_moment_norm(config: SolverConfig) -> float:
    """|p0|^2 + ||u0||_h^2 + ||grad u0||_h^2 summed over both phases."""
    g = config.grid
    total = config.initial_p**2
    for u in (config.initial_u1, config.initial_u2):
        u = np.asarray(u, dtype=float)
        du = forward_diff(u, g)
        total += discrete_inner(u, u, g) + cell_inner(du, du, g)
    return float(total)


def ensemble(
    coeffs: CoefficientSet,
    config: SolverConfig,
    n_paths: int,
    seed: int,
    threads: int | None = None,
    checkpoints: list[float] | None = None,
    bootstrap: int = 1000,
    keep_records: bool = False,
) -> EnsembleStats:
    """Run ``n_paths`` independent paths and aggregate their moments.

    Path ``i`` uses the RNG substream keyed by (seed, i); the thread
    pool only affects wall time, never results, because every reduction
    is over arrays indexed by path.  Exceptions inside a path are
    collected into ``errors`` rather than aborting the ensemble.  The
    normalized estimate ``k_hat`` is attached when the coefficient set
    declares the bounded-drift linear-growth regime.
    """
    if n_paths < 2:
        raise ValueError(f"need at least 2 paths for statistics, got {n_paths}")
    cks = np.asarray(
        checkpoints if checkpoints is not None else [config.t_final], dtype=float
    )
    if np.any(cks <= 0.0) or np.any(cks > config.t_final * (1 + 1e-12)):
        raise ValueError(f"checkpoints must lie in (0, t_final], got {cks}")

    expansion: ModeExpansion | None = None
    if coeffs.kernel is not None:
        z_max = config.z_max
        if z_max is None:
            z_max = config.grid.length + 3.0 * coeffs.kernel.ell
        expansion = build_expansion(coeffs.kernel, config.noise_modes, z_max)

    results: list[PathRecord | Exception | None] = [None] * n_paths

    def one(i: int) -> None:
        try:
            results[i] = run(coeffs, config, seed, path_index=i, expansion=expansion)
        except Exception as exc:  # aggregated, never aborts the ensemble
            results[i] = exc

    workers = threads if threads is not None else 4
    if workers <= 1:
        for i in range(n_paths):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(n_paths)))

    summaries: list[PathSummary] = []
    errors: list[tuple[int, str]] = []
    records: list[PathRecord] = []
    for i, res in enumerate(results):
        if isinstance(res, Exception):
            errors.append((i, f"{type(res).__name__}: {res}"))
            continue
        assert res is not None
        summaries.append(_summarize(res, cks, i))
        if keep_records:
            records.append(res)

    n_ok = len(summaries)
    if n_ok < 2:
        raise RuntimeError(
            f"only {n_ok} of {n_paths} paths produced statistics; errors: {errors}"
        )
    sup = np.stack([s.sup_moment for s in summaries])
    diss = np.stack([s.dissipation for s in summaries])
    mean_sup = np.mean(sup, axis=0)
    mean_diss = np.mean(diss, axis=0)
    se_sup = np.std(sup, axis=0, ddof=1) / math.sqrt(n_ok)
    se_diss = np.std(diss, axis=0, ddof=1) / math.sqrt(n_ok)

    blown = [s for s in summaries if s.stop.kind == "blowup"]
    blowup_fraction = len(blown) / n_ok
    mean_blowup_time = (
        float(np.mean([s.stop.time for s in blown])) if blown else math.nan
    )

    init_norm = initial_moment_norm(config)
    k_hat = None
    k_ci = None
    if coeffs.bounded_rho and coeffs.linear_growth:
        per_path = (sup + diss) / (1.0 + init_norm)
        k_hat = np.mean(per_path, axis=0)
        if bootstrap > 0:
            rng = np.random.Generator(np.random.Philox(key=[seed, 2**31]))
            draws = rng.integers(0, n_ok, size=(bootstrap, n_ok))
            boot = np.mean(per_path[draws], axis=1)  # (bootstrap, checkpoints)
            k_ci = np.percentile(boot, [2.5, 97.5], axis=0)

    return EnsembleStats(
        n_paths=n_paths,
        base_seed=seed,
        checkpoints=cks,
        sup_moment=sup,
        dissipation=diss,
        mean_sup=mean_sup,
        se_sup=se_sup,
        mean_dissipation=mean_diss,
        se_dissipation=se_diss,
        blowup_fraction=blowup_fraction,
        mean_blowup_time=mean_blowup_time,
        initial_norm=init_norm,
        k_hat=k_hat,
        k_hat_ci=k_ci,
        summaries=summaries,
        errors=errors,
        records=records if keep_records else None,
    )


@dataclass
class ExplosionScan:
    """Stop-time table across trace thresholds on identical noise."""

    thresholds: np.ndarray  # ascending; may end with inf
    tau: np.ndarray  # (thresholds, paths); inf = never tripped
    blowup_fraction: np.ndarray  # per threshold
    mean_tau: np.ndarray  # per threshold, nan when no path tripped
    monotone: bool  # tau nondecreasing in the threshold, path by path
    stop_kinds: list[list[str]] = field(default_factory=list)


def explosion_scan(
    coeffs: CoefficientSet,
    config: SolverConfig,
    thresholds: list[float],
    n_paths: int,
    seed: int,
    threads: int | None = None,
) -> ExplosionScan:
    """Rerun the same noise at each trace threshold and tabulate stop times.

    The first-passage definition makes the stop time nondecreasing in
    the threshold on a fixed noise realization; the scan checks exactly
    that, path by path, and reports the blow-up fraction per threshold.
    """
    if n_paths < 2:
        raise ValueError(f"need at least 2 paths, got {n_paths}")
    thr = np.asarray(sorted(thresholds), dtype=float)
    if thr.size < 1 or np.any(thr <= 0.0):
        raise ValueError(f"thresholds must be positive, got {thresholds}")

    tau = np.full((thr.size, n_paths), np.inf)
    kinds: list[list[str]] = []
    for row, n_max in enumerate(thr):
        cfg = dataclasses.replace(config, n_max=float(n_max))
        stats = ensemble(
            coeffs, cfg, n_paths, seed, threads=threads, bootstrap=0
        )
        row_kinds = []
        for s in stats.summaries:
            row_kinds.append(s.stop.kind)
            if s.stop.kind == "blowup":
                tau[row, s.path_index] = s.stop.time
        kinds.append(row_kinds)

    frac = np.mean(np.isfinite(tau), axis=1)
    with np.errstate(invalid="ignore"):
        mean_tau = np.array(
            [
                float(np.mean(t[np.isfinite(t)])) if np.any(np.isfinite(t)) else math.nan
                for t in tau
            ]
        )
    monotone = bool(np.all(tau[:-1] <= tau[1:] + 1e-12)) if thr.size > 1 else True
    return ExplosionScan(
        thresholds=thr,
        tau=tau,
        blowup_fraction=frac,
        mean_tau=mean_tau,
        monotone=monotone,
        stop_kinds=kinds,
    )


@dataclass(frozen=True)
class ConvergenceReport:
    """Fitted convergence order from a refinement ladder."""

    levels: np.ndarray  # step sizes or mesh widths, any order
    errors: np.ndarray
    label: str  # "dt" or "h"
    order: float | None  # None when errors vanish identically
    order_ci: tuple[float, float] | None  # 95% band from the fit residuals
    exact: bool  # all errors at rounding level


def fit_order(levels, errors, label: str = "dt", atol: float = 0.0) -> ConvergenceReport:
    """Least-squares slope of log error against log level.

    Needs at least three levels.  When every error is at or below
    ``atol`` the data carries no rate information and the report sets
    the exact-match flag instead of a slope.
    """
    lv = np.asarray(levels, dtype=float)
    er = np.asarray(errors, dtype=float)
    if lv.size != er.size or lv.size < 3:
        raise ValueError(f"need >= 3 matching levels, got {lv.size} and {er.size}")
    if np.any(lv <= 0.0):
        raise ValueError("levels must be positive")
    if np.any(er < 0.0):
        raise ValueError("errors must be nonnegative")
    if np.all(er <= atol):
        return ConvergenceReport(lv, er, label, None, None, True)
    if np.any(er <= atol):
        raise ValueError(
            "mixed zero and nonzero errors; tighten atol or drop exact levels"
        )
    x = np.log(lv)
    y = np.log(er)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(lv.size - 2, 1)
    sxx = float(np.sum((x - np.mean(x)) ** 2))
    se = math.sqrt(float(np.sum(resid**2)) / dof / sxx)
    return ConvergenceReport(
        lv, er, label, float(slope), (float(slope - 1.96 * se), float(slope + 1.96 * se)), False
    )


def _quiet_heat_coeffs(eta: float, kappa: float) -> CoefficientSet:
    zero_mu = lambda x, p, y, z: np.zeros_like(y)
    zero_sigma = lambda x, p, y: np.zeros_like(y)
    return CoefficientSet(
        eta_plus=eta,
        eta_minus=eta,
        kappa_plus=kappa,
        kappa_minus=kappa,
        sigma_star=0.0,
        mu_plus=zero_mu,
        mu_minus=zero_mu,
        sigma_plus=zero_sigma,
        sigma_minus=zero_sigma,
        rho=lambda yp, ym: 0.0,
        kernel=None,
        name="heat-oracle",
    )


def robin_eigenvalue(kappa: float, length: float) -> float:
    """Lowest frequency of the flux-balance mode: w tan(w L) = kappa."""
    if kappa <= 0.0 or length <= 0.0:
        raise ValueError("kappa and length must be positive")
    hi = math.pi / (2.0 * length) * (1.0 - 1e-12)
    return float(brentq(lambda w: w * math.tan(w * length) - kappa, 1e-12, hi))


def heat_convergence_study(
    kind: str,
    eta: float = 1.0,
    kappa: float = 1.0,
    length: float = 1.0,
    temporal_dts: tuple = (0.02, 0.01, 0.005),
    temporal_n: int = 512,
    temporal_t: float = 0.5,
    spatial_ns: tuple = (16, 32, 64),
    spatial_dt: float = 4e-6,
    spatial_t: float = 0.05,
) -> ConvergenceReport:
    """Convergence ladder against the closed-form decaying mode.

    The mode cos(w0 (L - x)) with w0 tan(w0 L) = kappa satisfies both
    the interface flux condition and the far-end no-flux condition and
    decays exactly like exp(-eta w0^2 t); errors are relative discrete
    L2 norms at the final time.  ``kind`` selects which discretization
    parameter is refined while the other is held fine enough not to
    pollute the fit.
    """
    w0 = robin_eigenvalue(kappa, length)
    lam = eta * w0 * w0
    coeffs = _quiet_heat_coeffs(eta, kappa)

    def one_error(n: int, dt: float, t_final: float) -> float:
        grid = make_grid(length, n)
        u0 = np.cos(w0 * (length - grid.nodes))
        config = SolverConfig(
            grid=grid,
            dt=dt,
            t_final=t_final,
            initial_u1=u0,
            initial_u2=u0,
            presmooth=False,  # the mode is already compatible and smooth
        )
        rec = run(coeffs, config, seed=0)
        t_end = rec.meta["t_final"]
        exact = math.exp(-lam * t_end) * u0
        _, u1, _ = rec.snapshots[-1]
        diff = u1 - exact
        return float(
            math.sqrt(discrete_inner(diff, diff, grid))
            / math.sqrt(discrete_inner(exact, exact, grid))
        )

    if kind == "temporal":
        errors = [one_error(temporal_n, dt, temporal_t) for dt in temporal_dts]
        return fit_order(temporal_dts, errors, label="dt")
    if kind == "spatial":
        hs = [length / n for n in spatial_ns]
        errors = [one_error(n, spatial_dt, spatial_t) for n in spatial_ns]
        return fit_order(hs, errors, label="h")
    raise ValueError(f"kind must be 'temporal' or 'spatial', got {kind!r}")
