"""Regularization machinery: discrete mollifiers, spatial mollification of
solution families, the commutator defect between multiplying and mollifying,
and space-time regularization of rough coefficients.

The mollifier is a polynomial bump ``(1 - (r/R)^2)^2`` truncated at radius
``R = base_radius / k`` and normalized on the grid, so unit mass holds exactly
by construction and every convolution is a convex average (coefficient
regularization can therefore never enlarge an ellipticity envelope).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import FirstOrderOperator, MetricField
from .grid import (
    GridFunction,
    PeriodicGrid,
    convolve_periodic,
    convolve_values,
    gradient_values,
    integrate_values,
)


@dataclass
class Mollifier:
    """Nonnegative unit-mass bump of support radius ``base_radius / level_k``."""

    profile: GridFunction
    level_k: int
    width: float

    @classmethod
    def build(cls, grid: PeriodicGrid, level_k: int, base_radius: float | None = None) -> "Mollifier":
        if level_k < 1:
            raise ValueError("mollifier level must be >= 1")
        if base_radius is None:
            base_radius = min(grid.lengths) / 8.0
        if base_radius > min(grid.lengths) / 4.0 + 1e-12:
            raise ValueError("mollifier base radius exceeds a quarter circumference")
        radius = base_radius / level_k
        r = grid.torus_distance(0.0)
        vals = np.where(r < radius, (1.0 - (r / radius) ** 2) ** 2, 0.0)
        mass = integrate_values(vals, grid, with_density=False)
        if mass <= 0:
            # support below one cell: degenerate to the discrete delta
            vals = np.zeros(grid.shape)
            vals[(0,) * grid.dim] = 1.0 / grid.cell_volume
        else:
            vals = vals / mass
        return cls(GridFunction(grid, vals), int(level_k), float(radius))

    @property
    def grid(self) -> PeriodicGrid:
        return self.profile.grid

    def derivative_kernels(self) -> tuple[np.ndarray, ...]:
        return gradient_values(self.profile.values, self.grid)

    def constant(self) -> float:
        """Profile constant for the commutator bound: the support radius of
        the differenced kernel times the L1 norms of its derivatives."""
        grid = self.grid
        reach = self.width + max(grid.spacing)
        total = 0.0
        for dk in self.derivative_kernels():
            total += integrate_values(np.abs(dk), grid, with_density=False)
        return float(np.sqrt(grid.dim) * reach * total)


def mollify_space(w, k: int, base_radius: float | None = None):
    """Convolve each time slice of ``w`` with the level-k mollifier.

    ``w`` may be a single GridFunction or a sequence of slices; the structure
    is preserved.
    """
    single = isinstance(w, GridFunction)
    slices: Sequence[GridFunction] = [w] if single else list(w)
    if not slices:
        return w
    moll = Mollifier.build(slices[0].grid, k, base_radius)
    out = [convolve_periodic(s, moll.profile) for s in slices]
    return out[0] if single else out


def lipschitz_envelope(metric: MetricField, sample_times: int = 17) -> float:
    """Discrete Lipschitz constant of the metric components: the largest
    one-sided node-to-node slope over sampled times."""
    grid = metric.grid
    ts = (
        [metric.window[0]]
        if metric.time_independent
        else np.linspace(metric.window[0], metric.window[1], sample_times)
    )
    worst = 0.0
    for t in ts:
        m = metric.matrix(t)
        for i in range(grid.dim):
            for j in range(grid.dim):
                comp = m[..., i, j]
                for a in range(grid.dim):
                    slope = (np.roll(comp, -1, a) - comp) / grid.spacing[a]
                    worst = max(worst, float(np.max(np.abs(slope))))
    return worst


def commutator_defect(
    h_metric: MetricField,
    w,
    k: int,
    t: float = 0.0,
    base_radius: float | None = None,
) -> tuple[GridFunction, float]:
    """Defect between multiplying by the rough coefficient before vs after
    mollifying:

        F_k = h^{ab} [(d_b w) * d_a rho_k] - (h^{ab} d_b w) * (d_a rho_k)

    Returns the defect field and its L2 norm.  The norm is bounded by
    ``commutator_bound``; the field vanishes identically for spatially
    constant coefficients and is linear in ``w``.
    """
    w_slice = w if isinstance(w, GridFunction) else _slice_at(w, t)
    grid = w_slice.grid
    moll = Mollifier.build(grid, k, base_radius)
    m = h_metric.matrix(t)
    grads = gradient_values(w_slice.values, grid)
    dkernels = moll.derivative_kernels()
    out = np.zeros(grid.shape)
    for a in range(grid.dim):
        for b in range(grid.dim):
            hab = m[..., a, b]
            conv_grad = convolve_values(grads[b], dkernels[a], grid)
            conv_prod = convolve_values(hab * grads[b], dkernels[a], grid)
            out += hab * conv_grad - conv_prod
    field = GridFunction(grid, out, t)
    from .norms import hk_norm

    return field, hk_norm(field, 0)


def commutator_bound(
    h_metric: MetricField,
    w,
    k: int,
    t: float = 0.0,
    base_radius: float | None = None,
) -> float:
    """Provable bound ``C(rho) * Lip(h) * |w|_{H1}`` on the defect L2 norm.

    ``C(rho)`` depends only on the mollifier profile (per level).
    """
    from .norms import hk_norm

    w_slice = w if isinstance(w, GridFunction) else _slice_at(w, t)
    moll = Mollifier.build(w_slice.grid, k, base_radius)
    return moll.constant() * lipschitz_envelope(h_metric) * hk_norm(w_slice, 1)


def _slice_at(w, t):
    if callable(w):
        return w(t)
    for s in w:
        if s.time_tag is not None and abs(s.time_tag - t) < 1e-12:
            return s
    raise ValueError(f"no slice of the family carries time_tag {t}")


def regularize_coefficients(
    metric: MetricField,
    op: FirstOrderOperator,
    k: int,
    base_radius: float | None = None,
    time_samples: int = 33,
) -> tuple[MetricField, FirstOrderOperator]:
    """Space-time mollification of rough coefficients at level ``k``.

    Space and time are convolved jointly (a bump in each); the sampled time
    window is padded by reflection, which keeps every output value a convex
    combination of input values and therefore preserves two-sided ellipticity
    envelopes.  The returned metric is tagged smooth and interpolates its
    mollified samples linearly in time.
    """
    grid = metric.grid
    moll = Mollifier.build(grid, k, base_radius)

    def smooth_space(arr):
        return convolve_values(arr, moll.profile.values, grid)

    if metric.time_independent:
        m0 = metric.matrix(0.0)
        sm = np.empty_like(m0)
        for i in range(grid.dim):
            for j in range(grid.dim):
                sm[..., i, j] = smooth_space(m0[..., i, j])
        metric_k = MetricField(
            grid,
            lambda t, _sm=sm: _sm,
            regularity="smooth",
            window=metric.window,
            time_independent=True,
            matrix_of_tx=lambda times, _sm=sm: _sm,
            name=f"{metric.name}~k{k}",
        )
    else:
        t0, t1 = metric.window
        ts = np.linspace(t0, t1, time_samples)
        dt_s = ts[1] - ts[0]
        samples = np.stack([metric.matrix(t) for t in ts])
        for idx in np.ndindex((grid.dim, grid.dim)):
            for m_i in range(len(ts)):
                samples[(m_i, Ellipsis) + idx] = smooth_space(samples[(m_i, Ellipsis) + idx])
        tk = _time_kernel(dt_s, (t1 - t0) / 8.0 / k)
        samples = _reflect_convolve_time(samples, tk)
        metric_k = MetricField(
            grid,
            _time_lerp(ts, samples),
            regularity="smooth",
            window=metric.window,
            time_independent=False,
            name=f"{metric.name}~k{k}",
        )

    def smooth_family(fam):
        if fam is None:
            return None
        if op.time_independent:
            arr = smooth_space(np.broadcast_to(np.asarray(fam(0.0), float), grid.shape))
            return lambda t, _a=arr: _a
        t0, t1 = metric.window
        ts = np.linspace(t0, t1, time_samples)
        dt_s = ts[1] - ts[0]
        sampled = np.stack(
            [smooth_space(np.broadcast_to(np.asarray(fam(t), float), grid.shape)) for t in ts]
        )
        sampled = _reflect_convolve_time(sampled, _time_kernel(dt_s, (t1 - t0) / 8.0 / k))
        return _time_lerp(ts, sampled)

    op_k = FirstOrderOperator(
        grid,
        b0=smooth_family(op.b0),
        b=tuple(smooth_family(f) for f in op.b),
        c=smooth_family(op.c),
        regularity="smooth",
        time_independent=op.time_independent,
    )
    return metric_k, op_k


def _time_kernel(dt_s: float, radius: float) -> np.ndarray:
    half = int(np.floor(radius / dt_s))
    if half < 1:
        return np.array([1.0])
    offs = np.arange(-half, half + 1) * dt_s
    w = (1.0 - (offs / radius) ** 2) ** 2
    return w / w.sum()


def _reflect_convolve_time(samples: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.size == 1:
        return samples
    half = kernel.size // 2
    pad = [(half, half)] + [(0, 0)] * (samples.ndim - 1)
    padded = np.pad(samples, pad, mode="reflect")
    out = np.zeros_like(samples)
    for j, wj in enumerate(kernel):
        out += wj * padded[j : j + samples.shape[0]]
    return out


def _time_lerp(ts: np.ndarray, samples: np.ndarray):
    def evaluate(t, _ts=ts, _s=samples):
        pos = np.clip((t - _ts[0]) / (_ts[-1] - _ts[0]) * (len(_ts) - 1), 0, len(_ts) - 1 - 1e-12)
        i0 = int(pos)
        frac = pos - i0
        return (1 - frac) * _s[i0] + frac * _s[i0 + 1]

    return evaluate


def grid_tied_level(grid: PeriodicGrid, base_radius: float | None = None) -> int:
    """Mollification level whose width is about four grid spacings (used when
    rough coefficients are pre-mollified before a solve)."""
    if base_radius is None:
        base_radius = min(grid.lengths) / 8.0
    return max(1, int(round(base_radius / (4.0 * grid.min_spacing))))
