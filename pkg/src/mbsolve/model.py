"""Coefficient sets for the two-phase interface system, presets, and validation.

A coefficient set packages the phase diffusivities and boundary
coefficients, the interface volatility, the drift and noise coefficient
functions of both phases, the interface drift responding to the boundary
traces, and the noise kernel.  Coefficient functions are black-box
vectorized callables; the analytic assumption classes behind them
(local Lipschitz continuity, linear growth envelopes, boundedness) can
only be spot-checked numerically, which is what ``validate`` does: it
scans a probe box, estimates finite-difference Lipschitz constants and
growth ratios, and reports violations with the offending sample points.

Sign conventions: phase "+" lives on the right of the interface and its
functions receive the signed offset x >= 0; phase "-" lives on the left
and receives x <= 0.  The interface drift takes the pair of boundary
traces (y_plus, y_minus).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import NoiseKernel

__all__ = [
    "CoefficientSet",
    "TraceValues",
    "ProbeBox",
    "preset_stefan",
    "preset_burgers",
    "preset_lob",
    "validate",
]

DriftFn = Callable[[np.ndarray, float, np.ndarray, np.ndarray], np.ndarray]
NoiseFn = Callable[[np.ndarray, float, np.ndarray], np.ndarray]
RhoFn = Callable[[float, float], float]


@dataclass(frozen=True)
class CoefficientSet:
    """Evaluable model coefficients plus declared metadata flags."""

    eta_plus: float
    eta_minus: float
    kappa_plus: float
    kappa_minus: float
    sigma_star: float
    mu_plus: DriftFn
    mu_minus: DriftFn
    sigma_plus: NoiseFn
    sigma_minus: NoiseFn
    rho: RhoFn
    kernel: NoiseKernel | None = None
    bounded_rho: bool = False
    linear_growth: bool = False
    name: str = "custom"

    def __post_init__(self) -> None:
        if not (self.eta_plus > 0.0 and self.eta_minus > 0.0):
            raise ValueError(
                f"diffusivities must be positive, got {self.eta_plus}, {self.eta_minus}"
            )
        if self.kappa_plus < 0.0 or self.kappa_minus < 0.0:
            raise ValueError(
                f"boundary coefficients must be nonnegative, got "
                f"{self.kappa_plus}, {self.kappa_minus}"
            )
        if self.sigma_star < 0.0:
            raise ValueError(f"interface volatility must be nonnegative, got {self.sigma_star}")


@dataclass(frozen=True)
class TraceValues:
    """One-sided boundary values and gradients in the moving frame."""

    y_plus: float
    y_minus: float
    g_plus: float = 0.0
    g_minus: float = 0.0

    def __post_init__(self) -> None:
        vals = (self.y_plus, self.y_minus, self.g_plus, self.g_minus)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"trace values must be finite, got {vals}")


def _zero_drift(x, p, y, z):
    return np.zeros_like(np.asarray(y, dtype=float))


def preset_stefan(
    rho: float,
    sigma: float,
    kappa: float,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    sigma_star: float = 0.0,
    kernel: NoiseKernel | None = None,
) -> CoefficientSet:
    """Two-phase Stefan-type model: zero bulk drift, multiplicative noise
    sigma*y, interface drift rho*(y_minus - y_plus)."""
    if kappa <= 0.0:
        raise ValueError(f"this preset needs a positive boundary coefficient, got {kappa}")
    if rho <= 0.0:
        raise ValueError(f"interface response rate must be positive, got {rho}")

    def noise_coeff(x, p, y):
        return sigma * np.asarray(y, dtype=float)

    return CoefficientSet(
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        kappa_plus=kappa,
        kappa_minus=kappa,
        sigma_star=sigma_star,
        mu_plus=_zero_drift,
        mu_minus=_zero_drift,
        sigma_plus=noise_coeff,
        sigma_minus=noise_coeff,
        rho=lambda y_plus, y_minus: rho * (y_minus - y_plus),
        kernel=kernel,
        bounded_rho=False,
        linear_growth=True,
        name="stefan",
    )


def preset_burgers(
    rho: float,
    sigma: float,
    kappa: float,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    sigma_star: float = 0.0,
    kernel: NoiseKernel | None = None,
) -> CoefficientSet:
    """Viscous Burgers-type variant of the Stefan preset: drift y * grad."""
    base = preset_stefan(rho, sigma, kappa, eta_plus, eta_minus, sigma_star, kernel)

    def advection(x, p, y, z):
        return np.asarray(y, dtype=float) * np.asarray(z, dtype=float)

    return CoefficientSet(
        eta_plus=base.eta_plus,
        eta_minus=base.eta_minus,
        kappa_plus=base.kappa_plus,
        kappa_minus=base.kappa_minus,
        sigma_star=base.sigma_star,
        mu_plus=advection,
        mu_minus=advection,
        sigma_plus=base.sigma_plus,
        sigma_minus=base.sigma_minus,
        rho=base.rho,
        kernel=base.kernel,
        bounded_rho=False,
        linear_growth=True,
        name="burgers",
    )


def preset_lob(
    f_plus: Callable[[np.ndarray, np.ndarray], np.ndarray],
    f_minus: Callable[[np.ndarray, np.ndarray], np.ndarray],
    alpha_plus: float,
    alpha_minus: float,
    g_plus: Callable[[np.ndarray], np.ndarray],
    g_minus: Callable[[np.ndarray], np.ndarray],
    sigma_plus: Callable[[np.ndarray], np.ndarray],
    sigma_minus: Callable[[np.ndarray], np.ndarray],
    rho_imbalance: Callable[[float], float],
    sigma_star: float,
    eta_plus: float = 1.0,
    eta_minus: float = 1.0,
    kappa_plus: float = 1.0,
    kappa_minus: float = 1.0,
    kernel: NoiseKernel | None = None,
    abs_gradient: bool = False,
    bounded_rho: bool = True,
    linear_growth: bool = True,
) -> CoefficientSet:
    """Mesoscopic order-book density model.

    Sell-side density is positive right of the price, buy-side negative
    left of it.  Per unit time, volume drifts toward the price at rate
    f(distance, density) per unit gradient, orders are cancelled
    proportionally at rate alpha, new orders arrive with profile
    g(distance) (negative sign on the buy side), and the price reacts to
    the volume imbalance -y_minus - y_plus through ``rho_imbalance``
    (which must vanish at zero imbalance).  ``abs_gradient`` switches the
    transport term to |grad| for the variant where order flow responds to
    book steepness regardless of direction.
    """
    if alpha_plus < 0.0 or alpha_minus < 0.0:
        raise ValueError(
            f"cancellation rates must be nonnegative, got {alpha_plus}, {alpha_minus}"
        )
    if abs(rho_imbalance(0.0)) > 0.0:
        raise ValueError("price response must vanish at zero imbalance")

    def mu_p(x, p, y, z):
        dist = np.abs(np.asarray(x, dtype=float))
        grad = np.abs(z) if abs_gradient else np.asarray(z, dtype=float)
        return f_plus(dist, y) * grad - alpha_plus * np.asarray(y, dtype=float) + g_plus(dist)

    def mu_m(x, p, y, z):
        dist = np.abs(np.asarray(x, dtype=float))
        grad = np.abs(z) if abs_gradient else np.asarray(z, dtype=float)
        return -f_minus(dist, y) * grad - alpha_minus * np.asarray(y, dtype=float) - g_minus(dist)

    def sig_p(x, p, y):
        return sigma_plus(np.abs(np.asarray(x, dtype=float))) * np.asarray(y, dtype=float)

    def sig_m(x, p, y):
        return sigma_minus(np.abs(np.asarray(x, dtype=float))) * np.asarray(y, dtype=float)

    return CoefficientSet(
        eta_plus=eta_plus,
        eta_minus=eta_minus,
        kappa_plus=kappa_plus,
        kappa_minus=kappa_minus,
        sigma_star=sigma_star,
        mu_plus=mu_p,
        mu_minus=mu_m,
        sigma_plus=sig_p,
        sigma_minus=sig_m,
        rho=lambda y_plus, y_minus: rho_imbalance(-y_minus - y_plus),
        kernel=kernel,
        bounded_rho=bounded_rho,
        linear_growth=linear_growth,
        name="lob",
    )


@dataclass(frozen=True)
class ProbeBox:
    """Finite scan ranges for the numeric coefficient checks."""

    x: tuple[float, float] = (0.0, 5.0)
    p: tuple[float, float] = (-1.0, 1.0)
    y: tuple[float, float] = (-5.0, 5.0)
    z: tuple[float, float] = (-5.0, 5.0)
    samples: int = 9


def _lattice(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _lipschitz_scan(fn, points, deltas=(1e-2, 1e-4, 1e-6)):
    """Max finite-difference slope at shrinking separations.

    A locally Lipschitz function shows saturating slopes; a jump shows
    slopes growing like 1/delta.  Returns the slopes and the sample point
    of the worst final-level slope.
    """
    slopes = []
    worst_point = None
    for d in deltas:
        worst = 0.0
        for pt in points:
            hi = fn(pt + d)
            lo = fn(pt - d)
            s = abs(hi - lo) / (2.0 * d)
            if s > worst:
                worst = s
                if d == deltas[-1]:
                    worst_point = pt
        slopes.append(worst)
    return slopes, worst_point


def validate(coeffs: CoefficientSet, box: ProbeBox = ProbeBox()) -> dict:
    """Numeric spot checks of the coefficient assumptions on a probe box.

    Report-only: violations are listed, nothing raises.  Checks the
    interface drift for local Lipschitz continuity near zero traces, the
    drifts for a linear growth envelope when the flag is declared (ratio
    must not keep growing when the box doubles), the drift boundedness
    when ``bounded_rho`` is declared, and the noise coefficients for
    Lipschitz continuity in the trace and interface arguments.
    """
    violations: list[str] = []
    report: dict = {"violations": violations}

    ys = _lattice(*box.y, box.samples)
    trace_pts = [0.0, 0.1, -0.1, 0.5, -0.5, 1.0, -1.0]
    slopes_a, worst_a = _lipschitz_scan(lambda t: coeffs.rho(t, 0.0), trace_pts)
    slopes_b, worst_b = _lipschitz_scan(lambda t: coeffs.rho(0.0, t), trace_pts)
    slopes = [max(a, b) for a, b in zip(slopes_a, slopes_b)]
    worst = worst_a if slopes_a[-1] >= slopes_b[-1] else worst_b
    growth = slopes[-1] / max(slopes[0], 1e-300)
    report["rho_lipschitz"] = {"slopes": slopes, "worst_point": worst}
    if growth > 10.0 and slopes[-1] > 1e3:
        violations.append(
            f"interface drift not locally Lipschitz near trace {worst!r}: "
            f"finite-difference slopes {slopes}"
        )

    if coeffs.bounded_rho:
        grid = np.linspace(-50.0, 50.0, 201)
        vals = np.array([coeffs.rho(a, b) for a in grid[::20] for b in grid[::20]])
        inner = np.array([coeffs.rho(a, b) for a in grid[80:121:8] for b in grid[80:121:8]])
        sup_full = float(np.max(np.abs(vals)))
        sup_inner = float(np.max(np.abs(inner)))
        report["rho_bound"] = {"sup_wide": sup_full, "sup_inner": sup_inner}
        if sup_full > 2.0 * sup_inner + 1e-12:
            violations.append(
                f"interface drift declared bounded but grows with the trace box "
                f"(sup {sup_full:.3g} on the wide box vs {sup_inner:.3g} inside)"
            )

    xs = _lattice(*box.x, box.samples)
    ps = _lattice(*box.p, 3)
    zs = _lattice(*box.z, box.samples)
    for label, mu in (("mu_plus", coeffs.mu_plus), ("mu_minus", coeffs.mu_minus)):
        sign = 1.0 if label == "mu_plus" else -1.0

        def ratio_on(scale: float) -> tuple[float, tuple]:
            worst_ratio = 0.0
            worst_at = None
            for p in ps:
                for y in ys * scale:
                    for z in zs * scale:
                        yv = np.full(xs.shape, y)
                        zv = np.full(xs.shape, z)
                        vals = np.abs(mu(sign * xs, p, yv, zv))
                        env = 1.0 + abs(y) + abs(z)
                        i = int(np.argmax(vals))
                        if vals[i] / env > worst_ratio:
                            worst_ratio = vals[i] / env
                            worst_at = (sign * xs[i], p, y, z)
            return worst_ratio, worst_at

        r1, at1 = ratio_on(1.0)
        r2, at2 = ratio_on(2.0)
        report[f"{label}_growth"] = {"ratio": r1, "ratio_doubled_box": r2, "at": at2}
        if coeffs.linear_growth and r2 > 1.5 * r1 + 1e-12:
            violations.append(
                f"{label} declared linear-growth but the ratio |mu|/(1+|y|+|z|) grows "
                f"with the box: {r1:.3g} -> {r2:.3g} at sample {at2}"
            )

    for label, sig in (("sigma_plus", coeffs.sigma_plus), ("sigma_minus", coeffs.sigma_minus)):
        sign = 1.0 if label == "sigma_plus" else -1.0
        x_mid = sign * 0.5 * (box.x[0] + box.x[1])
        slopes_y, wy = _lipschitz_scan(
            lambda t: float(np.asarray(sig(np.array([x_mid]), 0.0, np.array([t])))[0]),
            trace_pts,
        )
        slopes_p, wp = _lipschitz_scan(
            lambda t: float(np.asarray(sig(np.array([x_mid]), t, np.array([1.0])))[0]),
            [0.0, 0.25, -0.25],
        )
        report[f"{label}_lipschitz"] = {
            "slopes_y": slopes_y,
            "slopes_p": slopes_p,
            "worst_y": wy,
            "worst_p": wp,
        }
        if slopes_y[-1] / max(slopes_y[0], 1e-300) > 10.0 and slopes_y[-1] > 1e3:
            violations.append(f"{label} not Lipschitz in the trace argument near {wy!r}")
        if slopes_p[-1] / max(slopes_p[0], 1e-300) > 10.0 and slopes_p[-1] > 1e3:
            violations.append(f"{label} not Lipschitz in the interface argument near {wp!r}")

    report["passed"] = not violations
    return report
