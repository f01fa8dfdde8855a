"""Spatially colored Gaussian noise and the independent interface Brownian motion.

The field noise is an integral-kernel smoothing of a cylindrical Wiener
process: xi_t(z) = int zeta(z, y) W_t(dy).  We expand W over an
orthonormal cosine/sine family e_k on a truncated interval [-R_y, R_y]
and tabulate the smoothed modes psi_k = int zeta(., y) e_k(y) dy on a
master lattice, so one expansion serves both simulation (increments of
xi at moving points) and verification (the individual mode paths).  A
Parseval tail bound controls the truncation in k: the captured energy
sum_{k<=K} psi_k(z)^2 must account for 99% of ||zeta(z, .)||^2 on the
lattice.

Randomness comes from counter-based Philox streams keyed by (seed, path
index), so ensemble paths are reproducible bit-for-bit regardless of
scheduling order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RangeError",
    "NoiseKernel",
    "gaussian_convolution_kernel",
    "custom_kernel",
    "gaussian_covariance",
    "check_kernel_regularity",
    "ModeExpansion",
    "build_expansion",
    "eval_modes",
    "eval_xi_increment",
    "WienerIncrement",
    "NoiseSampler",
    "sample_increment",
    "sample_increments",
]


class RangeError(ValueError):
    """Requested evaluation point lies outside the tabulated range."""


@dataclass(frozen=True)
class NoiseKernel:
    """Smoothing kernel zeta(z, y); either a convolution profile or a table.

    ``kind`` is "gaussian-convolution" (zeta(z, y) = amplitude *
    exp(-(z+y)^2 / (2 ell^2))) or "custom" (bilinear interpolation of a
    tabulated zeta).  ``ell`` is the correlation length used to size
    lattices and default windows.
    """

    kind: str
    ell: float
    amplitude: float
    table: tuple | None = None  # (z_nodes, y_nodes, values) for "custom"

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian-convolution", "custom"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (self.ell > 0.0 and np.isfinite(self.ell)):
            raise ValueError(f"correlation length must be positive, got {self.ell}")
        if self.kind == "custom" and self.table is None:
            raise ValueError("custom kernel needs a (z, y, values) table")

    def evaluate(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix zeta(z_i, y_j), shape (len(z), len(y))."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.kind == "gaussian-convolution":
            s = np.add.outer(z, y)
            return self.amplitude * np.exp(-(s * s) / (2.0 * self.ell**2))
        zn, yn, vals = self.table
        zi = np.interp(z, zn, np.arange(len(zn)))
        yi = np.interp(y, yn, np.arange(len(yn)))
        z0 = np.clip(zi.astype(int), 0, len(zn) - 2)
        y0 = np.clip(yi.astype(int), 0, len(yn) - 2)
        tz = (zi - z0)[:, None]
        ty = (yi - y0)[None, :]
        v00 = vals[np.ix_(z0, y0)]
        v01 = vals[np.ix_(z0, y0 + 1)]
        v10 = vals[np.ix_(z0 + 1, y0)]
        v11 = vals[np.ix_(z0 + 1, y0 + 1)]
        return (1 - tz) * ((1 - ty) * v00 + ty * v01) + tz * ((1 - ty) * v10 + ty * v11)


def gaussian_convolution_kernel(ell: float, amplitude: float = 1.0) -> NoiseKernel:
    return NoiseKernel("gaussian-convolution", float(ell), float(amplitude))


def custom_kernel(
    z_nodes: np.ndarray, y_nodes: np.ndarray, values: np.ndarray, ell: float
) -> NoiseKernel:
    z_nodes = np.asarray(z_nodes, dtype=float)
    y_nodes = np.asarray(y_nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (z_nodes.size, y_nodes.size):
        raise ValueError("kernel table shape must match its node lattices")
    return NoiseKernel("custom", float(ell), 1.0, (z_nodes, y_nodes, values))


def gaussian_covariance(kernel: NoiseKernel, dx: np.ndarray | float) -> np.ndarray | float:
    """Closed-form stationary covariance of the Gaussian convolution preset.

    q(x, x') = int zeta(x, y) zeta(x', y) dy
             = amplitude^2 * ell * sqrt(pi) * exp(-(x - x')^2 / (4 ell^2)).
    """
    if kernel.kind != "gaussian-convolution":
        raise ValueError("closed-form covariance only exists for the Gaussian preset")
    dx = np.asarray(dx, dtype=float)
    out = kernel.amplitude**2 * kernel.ell * math.sqrt(math.pi) * np.exp(
        -(dx * dx) / (4.0 * kernel.ell**2)
    )
    return float(out) if out.ndim == 0 else out


def check_kernel_regularity(
    kernel: NoiseKernel, z_window: float, y_window: float, n_probe: int = 33
) -> dict:
    """Numeric spot check of the smoothing assumption on the kernel.

    Estimates sup_z of the L2-in-y norms of zeta and its first two
    z-derivatives on a probe lattice; all three must be finite.
    """
    z = np.linspace(-z_window, z_window, n_probe)
    dy = kernel.ell / 16.0
    y = np.arange(-y_window, y_window + dy / 2, dy)
    dz = kernel.ell / 64.0
    sups = []
    vals = kernel.evaluate(z, y)
    vp = kernel.evaluate(z + dz, y)
    vm = kernel.evaluate(z - dz, y)
    for deriv in (vals, (vp - vm) / (2 * dz), (vp - 2 * vals + vm) / dz**2):
        norms = np.sqrt(np.sum(deriv * deriv, axis=1) * dy)
        sups.append(float(np.max(norms)))
    finite = all(np.isfinite(s) for s in sups)
    return {"sup_norms": sups, "finite": finite}


@dataclass(frozen=True)
class ModeExpansion:
    """Tabulated smoothed modes psi_k on the master lattice [-Z, Z]."""

    kernel: NoiseKernel
    modes: int
    z_max: float
    r_y: float
    lattice: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)  # shape (modes, lattice size)
    tail_fraction: float = 0.0

    def coverage(self, points: np.ndarray) -> None:
        points = np.asarray(points, dtype=float)
        if points.size and (points.min() < -self.z_max or points.max() > self.z_max):
            raise RangeError(
                f"evaluation points reach [{points.min():.4g}, {points.max():.4g}] "
                f"outside the tabulated range [-{self.z_max:.4g}, {self.z_max:.4g}]"
            )


def _basis_matrix(y: np.ndarray, r_y: float, modes: int) -> np.ndarray:
    """Orthonormal cosine/sine family on [-r_y, r_y], rows are e_k(y)."""
    e = np.empty((modes, y.size))
    e[0] = 1.0 / math.sqrt(2.0 * r_y)
    for k in range(1, modes):
        m = (k + 1) // 2
        arg = m * math.pi * y / r_y
        if k % 2 == 1:
            e[k] = np.cos(arg) / math.sqrt(r_y)
        else:
            e[k] = np.sin(arg) / math.sqrt(r_y)
    return e


def _tabulate(kernel: NoiseKernel, modes: int, z_max: float, r_y: float, dz: float):
    nz = max(int(round(2.0 * z_max / dz)), 8)
    lattice = np.linspace(-z_max, z_max, nz + 1)
    wavelength = 2.0 * r_y / max(modes // 2, 1)
    dy = min(kernel.ell / 8.0, wavelength / 8.0)
    ny = max(int(round(2.0 * r_y / dy)), 8)
    y = np.linspace(-r_y, r_y, ny + 1)
    wy = np.full(ny + 1, y[1] - y[0])
    wy[0] *= 0.5
    wy[-1] *= 0.5
    zeta = kernel.evaluate(lattice, y)  # (nz+1, ny+1)
    basis = _basis_matrix(y, r_y, modes)  # (modes, ny+1)
    table = basis @ (zeta * wy).T  # (modes, nz+1)
    total = np.sum(zeta * zeta * wy, axis=1)  # ||zeta(z,.)||^2 per lattice z
    captured = np.sum(table * table, axis=0)
    wz = np.full(lattice.size, lattice[1] - lattice[0])
    wz[0] *= 0.5
    wz[-1] *= 0.5
    total_mass = float(np.dot(wz, total))
    captured_mass = float(np.dot(wz, captured))
    tail = max(total_mass - captured_mass, 0.0)
    frac = tail / captured_mass if captured_mass > 0.0 else 0.0
    return lattice, table, frac, captured_mass


def build_expansion(
    kernel: NoiseKernel,
    modes: int,
    z_max: float,
    r_y: float | None = None,
    points_per_ell: int = 8,
    tail_tolerance: float = 0.01,
) -> ModeExpansion:
    """Tabulate psi_k = T_zeta e_k for k = 1..modes on [-z_max, z_max].

    Fails with an explicit mode-count suggestion when the Parseval tail
    exceeds ``tail_tolerance`` of the captured energy.
    """
    if modes < 8:
        raise ValueError(f"need at least 8 modes, got {modes}")
    if r_y is None:
        r_y = z_max + 6.0 * kernel.ell
    dz = kernel.ell / points_per_ell
    lattice, table, frac, captured = _tabulate(kernel, modes, z_max, r_y, dz)
    if captured > 0.0 and frac > tail_tolerance:
        k_need = modes
        while k_need < 4096:
            k_need *= 2
            _, _, frac_need, cap2 = _tabulate(kernel, k_need, z_max, r_y, dz)
            if cap2 > 0.0 and frac_need <= tail_tolerance:
                raise ValueError(
                    f"mode truncation tail {frac:.3%} exceeds {tail_tolerance:.0%} "
                    f"of captured energy at K={modes}; K={k_need} suffices"
                )
        raise ValueError(
            f"mode truncation tail {frac:.3%} exceeds {tail_tolerance:.0%} at K={modes}"
        )
    return ModeExpansion(kernel, modes, float(z_max), float(r_y), lattice, table, frac)


def eval_modes(expansion: ModeExpansion, points: np.ndarray) -> np.ndarray:
    """psi_k at the points by linear interpolation; shape (modes, len(points))."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    expansion.coverage(points)
    lat = expansion.lattice
    dz = lat[1] - lat[0]
    pos = (points - lat[0]) / dz
    idx = np.clip(pos.astype(int), 0, lat.size - 2)
    theta = pos - idx
    return expansion.table[:, idx] * (1.0 - theta) + expansion.table[:, idx + 1] * theta


def eval_xi_increment(
    expansion: ModeExpansion, d_beta: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Field increment d xi at the points: sum_k psi_k(points) d beta_k."""
    d_beta = np.asarray(d_beta, dtype=float)
    if d_beta.shape != (expansion.modes,):
        raise ValueError(
            f"increment has {d_beta.shape} entries, expansion holds {expansion.modes} modes"
        )
    return eval_modes(expansion, points).T @ d_beta


@dataclass(frozen=True)
class WienerIncrement:
    """One time step of driving noise: mode increments and the interface term."""

    d_beta: np.ndarray  # shape (modes,), each Normal(0, dt)
    d_b: float  # Normal(0, dt), independent of d_beta


@dataclass
class NoiseSampler:
    """Per-path stream of Wiener increments (counter-based, reproducible)."""

    modes: int
    dt: float
    seed: int
    path_index: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dt < 0.0:
            raise ValueError(f"step size must be nonnegative, got {self.dt}")
        bits = np.random.Philox(key=[self.seed, self.path_index])
        self._rng = np.random.Generator(bits)


def sample_increment(sampler: NoiseSampler) -> WienerIncrement:
    """Draw the next (d_beta, d_B) pair and advance the stream."""
    z = sampler._rng.standard_normal(sampler.modes + 1)
    scale = math.sqrt(sampler.dt)
    return WienerIncrement(scale * z[1:], float(scale * z[0]))


def sample_increments(sampler: NoiseSampler, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``count`` successive increments: (d_b[count], d_beta[count, modes])."""
    d_b = np.empty(count)
    d_beta = np.empty((count, sampler.modes))
    for i in range(count):
        inc = sample_increment(sampler)
        d_b[i] = inc.d_b
        d_beta[i] = inc.d_beta
    return d_b, d_beta
