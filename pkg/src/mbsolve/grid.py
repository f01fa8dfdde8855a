"""Uniform grids on the truncated half-line and the symmetric master lattice.

Each phase of the interface problem lives on the half-line [0, inf); we
truncate to [0, L] and close the far end with a homogeneous Neumann
condition.  The truncation is an artifact of the discretization: states of
interest decay on the noise correlation scale, so L defaults to several
correlation lengths in the driver configs and the far-field choice is
documented rather than hidden.  The master grid is the symmetric lattice
on [-L, L] used to assemble moving-frame output from the two phases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "MasterGrid",
    "make_grid",
    "make_master_grid",
    "discrete_inner",
    "discrete_norm",
    "cell_inner",
    "forward_diff",
    "node_gradient",
    "second_diff",
    "h1_norm_sq",
]


@dataclass(frozen=True)
class Grid:
    """Uniform nodes 0 = x_0 < x_1 < ... < x_n = L with spacing h = L/n."""

    length: float
    n: int

    def __post_init__(self) -> None:
        if not (self.length > 0.0 and np.isfinite(self.length)):
            raise ValueError(f"grid length must be positive and finite, got {self.length}")
        if self.n < 4:
            raise ValueError(f"grid needs at least 4 cells, got n={self.n}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights: h/2 at both ends, h inside."""
        w = np.full(self.n + 1, self.h)
        w[0] = 0.5 * self.h
        w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True)
class MasterGrid:
    """Symmetric lattice {-L, ..., -h, 0, h, ..., L} with the phase spacing."""

    half_length: float
    n_half: int

    @property
    def h(self) -> float:
        return self.half_length / self.n_half

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.half_length, self.half_length, 2 * self.n_half + 1)


def make_grid(length: float, n: int, min_cells: int = 8) -> Grid:
    """Build the uniform phase grid on [0, length] with n cells.

    The default floor n >= 8 keeps difference stencils meaningful; tests
    may relax it through ``min_cells``.
    """
    if n < min_cells:
        raise ValueError(f"n={n} below the minimum cell count {min_cells}")
    return Grid(float(length), int(n))


def make_master_grid(grid: Grid) -> MasterGrid:
    return MasterGrid(grid.length, grid.n)


def discrete_inner(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """Trapezoid-weighted inner product of node vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (grid.n + 1,) or v.shape != (grid.n + 1,):
        raise ValueError(
            f"node vectors must have length {grid.n + 1}, got {u.shape} and {v.shape}"
        )
    return float(np.dot(grid.weights * u, v))


def discrete_norm(u: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(discrete_inner(u, u, grid), 0.0)))


def cell_inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    """Midpoint inner product of cell vectors (length n), weight h per cell."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (grid.n,) or b.shape != (grid.n,):
        raise ValueError(f"cell vectors must have length {grid.n}, got {a.shape} and {b.shape}")
    return float(grid.h * np.dot(a, b))


def forward_diff(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Forward differences (u_{i+1} - u_i)/h, one value per cell."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 2:
        raise ValueError("need at least two nodes")
    return np.diff(u, axis=-1) / grid.h


def node_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Node-valued gradient: central differences inside, 2nd-order one-sided ends.

    Works on a single node vector or a batch with nodes on the last axis.
    """
    u = np.asarray(u, dtype=float)
    h = grid.h
    g = np.empty_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * h)
    g[..., 0] = (-3.0 * u[..., 0] + 4.0 * u[..., 1] - u[..., 2]) / (2.0 * h)
    g[..., -1] = (3.0 * u[..., -1] - 4.0 * u[..., -2] + u[..., -3]) / (2.0 * h)
    return g


def second_diff(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Node-valued second differences; 2nd-order one-sided at both ends."""
    u = np.asarray(u, dtype=float)
    h2 = grid.h * grid.h
    s = np.empty_like(u)
    s[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / h2
    s[..., 0] = (2.0 * u[..., 0] - 5.0 * u[..., 1] + 4.0 * u[..., 2] - u[..., 3]) / h2
    s[..., -1] = (2.0 * u[..., -1] - 5.0 * u[..., -2] + 4.0 * u[..., -3] - u[..., -4]) / h2
    return s


def h1_norm_sq(u: np.ndarray, grid: Grid) -> float:
    """Discrete H1 seminorm-completed square: ||u||_h^2 + ||Du||_h^2 (cell D)."""
    du = forward_diff(u, grid)
    return discrete_inner(u, u, grid) + cell_inner(du, du, grid)
