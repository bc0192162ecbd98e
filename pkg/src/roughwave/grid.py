"""Periodic grids on flat tori: sampled fields, finite differences, quadrature,
and periodic convolution.

Everything downstream (metrics, norms, solvers) works on node samples of a
uniform periodic grid in 1 or 2 dimensions.  The quadrature rule is the node
sum weighted by the cell volume and the grid's density ``gamma``, which is
spectrally accurate for smooth periodic integrands.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SCHEMES = ("centered2", "forward1", "backward1")


class GridError(ValueError):
    """Raised for inconsistent grid/field combinations."""


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on a flat torus of 1 or 2 dimensions.

    Attributes:
        shape: nodes per axis, each >= 8.
        lengths: circumference per axis (default 2*pi).
        gamma: positive density weight per node; the measure is
            ``gamma * dx`` (default identically 1).
    """

    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    gamma: np.ndarray = field(repr=False, default=None)

    def __init__(self, points_per_axis, circumference=None, density_gamma=None):
        shape = tuple(int(n) for n in np.atleast_1d(points_per_axis))
        if len(shape) not in (1, 2):
            raise GridError(f"only dim 1 or 2 supported, got {len(shape)}")
        if any(n < 8 for n in shape):
            raise GridError(f"need at least 8 points per axis, got {shape}")
        if circumference is None:
            lengths = (2.0 * np.pi,) * len(shape)
        else:
            lens = np.atleast_1d(np.asarray(circumference, dtype=float))
            if lens.size == 1:
                lengths = (float(lens[0]),) * len(shape)
            else:
                lengths = tuple(float(v) for v in lens)
        if len(lengths) != len(shape) or any(v <= 0 for v in lengths):
            raise GridError(f"bad circumference {circumference} for shape {shape}")
        if density_gamma is None:
            gamma = np.ones(shape)
        else:
            gamma = np.asarray(density_gamma, dtype=float)
            if gamma.shape != shape:
                raise GridError("density_gamma shape does not match grid")
            if not np.all(gamma > 0):
                raise GridError("density_gamma must be strictly positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "gamma", gamma)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.arange(self.shape[axis]) * self.spacing[axis]

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Node coordinates as broadcastable meshgrid arrays (indexing 'ij')."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def torus_distance(self, center: Sequence[float] | float = 0.0) -> np.ndarray:
        """Geodesic distance on the flat torus from ``center`` to every node."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if center.size == 1 and self.dim > 1:
            center = np.repeat(center, self.dim)
        parts = []
        for a, (xs, L) in enumerate(zip(self.mesh(), self.lengths)):
            d = np.abs(xs - center[a]) % L
            parts.append(np.minimum(d, L - d))
        if self.dim == 1:
            return parts[0]
        return np.sqrt(parts[0] ** 2 + parts[1] ** 2)

    def __eq__(self, other):
        return (
            isinstance(other, PeriodicGrid)
            and self.shape == other.shape
            and self.lengths == other.lengths
            and np.array_equal(self.gamma, other.gamma)
        )

    def __hash__(self):
        return hash((self.shape, self.lengths))


@dataclass
class GridFunction:
    """Real scalar field sampled at the nodes of a :class:`PeriodicGrid`.

    ``time_tag`` optionally records the time the slice lives at.
    """

    grid: PeriodicGrid
    values: np.ndarray
    time_tag: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise GridError("GridFunction values must be finite")

    @classmethod
    def from_callable(cls, grid: PeriodicGrid, func, time_tag: float | None = None):
        vals = np.broadcast_to(np.asarray(func(*grid.mesh()), dtype=float), grid.shape)
        return cls(grid, vals.copy(), time_tag)

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float, time_tag: float | None = None):
        return cls(grid, np.full(grid.shape, float(value)), time_tag)

    def copy(self) -> "GridFunction":
        return replace(self, values=self.values.copy())

    def __add__(self, other):
        return GridFunction(self.grid, self.values + _vals(other), self.time_tag)

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - _vals(other), self.time_tag)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * _vals(other), self.time_tag)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values, self.time_tag)


def _vals(x):
    return x.values if isinstance(x, GridFunction) else x


def diff_values(values: np.ndarray, spacing: float, axis: int, scheme: str = "centered2") -> np.ndarray:
    """Periodic finite difference on a raw array (helper for hot paths)."""
    if scheme == "centered2":
        return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * spacing)
    if scheme == "forward1":
        return (np.roll(values, -1, axis) - values) / spacing
    if scheme == "backward1":
        return (values - np.roll(values, 1, axis)) / spacing
    raise GridError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def diff(f: GridFunction, axis: int = 0, scheme: str = "centered2") -> GridFunction:
    """Periodic finite difference of ``f`` along ``axis``.

    ``centered2`` is second-order on smooth fields; the one-sided schemes are
    first-order and exist to probe Lipschitz fields near kinks.
    """
    if not 0 <= axis < f.grid.dim:
        raise GridError(f"axis {axis} out of range for dim {f.grid.dim}")
    vals = diff_values(f.values, f.grid.spacing[axis], axis, scheme)
    return GridFunction(f.grid, vals, f.time_tag)


def gradient_values(values: np.ndarray, grid: PeriodicGrid, scheme: str = "centered2"):
    return tuple(diff_values(values, grid.spacing[a], a, scheme) for a in range(grid.dim))


def integrate(f: GridFunction, with_density: bool = True) -> float:
    """Integral of ``f`` over the torus by the node-sum rule.

    With ``with_density`` the measure is ``gamma * dx``; otherwise plain
    Lebesgue (used e.g. for mollifier normalization).
    """
    w = f.grid.gamma if with_density else 1.0
    return float(np.sum(f.values * w) * f.grid.cell_volume)


def integrate_values(values: np.ndarray, grid: PeriodicGrid, with_density: bool = True) -> float:
    w = grid.gamma if with_density else 1.0
    return float(np.sum(values * w) * grid.cell_volume)


class KernelError(ValueError):
    """Raised when a convolution kernel violates its normalization contract."""


def convolve_values(values: np.ndarray, kernel: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Periodic convolution (integral convention: result includes cell volume)."""
    axes = tuple(range(grid.dim))
    fh = np.fft.rfftn(values, axes=axes)
    kh = np.fft.rfftn(kernel, axes=axes)
    out = np.fft.irfftn(fh * kh, s=grid.shape, axes=axes)
    return out * grid.cell_volume


def convolve_periodic(f: GridFunction, kernel: GridFunction) -> GridFunction:
    """Convolve ``f`` with a nonnegative unit-mass kernel on the torus.

    The kernel must integrate to 1 against the Lebesgue weight within 1e-12.
    Constants are preserved exactly and the Lebesgue mean of ``f`` is
    preserved.
    """
    if f.grid != kernel.grid:
        raise GridError("f and kernel must share a grid")
    if np.min(kernel.values) < -1e-13:
        raise KernelError("kernel must be nonnegative")
    mass = integrate(kernel, with_density=False)
    if abs(mass - 1.0) > 1e-12:
        raise KernelError(f"kernel not normalized: mass={mass!r}")
    return GridFunction(f.grid, convolve_values(f.values, kernel.values, f.grid), f.time_tag)
