"""Norms and energy functionals: Sobolev norms on the torus, the wave energy,
surface norms, and an explicit admissible constant for the exponential energy
estimate.

The constant ``K1`` is computed, not fitted: it is the term-by-term
Cauchy-Schwarz bookkeeping of the energy-density identity, with coefficient
sup norms sampled densely over the window.  Any upper bound is admissible;
this one makes the exponential estimate a falsifiable assertion.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .fields import FirstOrderOperator, MetricField, validate_ellipticity
from .grid import GridFunction, diff_values, gradient_values, integrate_values


def hk_norm(f: GridFunction, k: int = 0) -> float:
    """Reference-metric Sobolev norm H^k (flat torus metric, k <= 2).

    h0 is the L2 norm against ``gamma dx``; derivatives are centered
    differences (compact second differences on the diagonal for k = 2).
    """
    if k not in (0, 1, 2):
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    grid = f.grid
    total = np.square(f.values)
    if k >= 1:
        for g in gradient_values(f.values, grid):
            total = total + np.square(g)
    if k >= 2:
        for a in range(grid.dim):
            h = grid.spacing[a]
            second = (np.roll(f.values, -1, a) - 2 * f.values + np.roll(f.values, 1, a)) / h**2
            total = total + np.square(second)
        if grid.dim == 2:
            cross = diff_values(
                diff_values(f.values, grid.spacing[0], 0), grid.spacing[1], 1
            )
            total = total + 2 * np.square(cross)
    return float(np.sqrt(integrate_values(total, grid)))


def energy(state, metric: MetricField) -> float:
    """Wave energy ``int (|du/dt|^2 + g^{ab} d_a u d_b u + |u|^2) dnu``."""
    grid = state.u.grid
    m = metric.matrix(state.time)
    grads = gradient_values(state.u.values, grid)
    total = np.square(state.ut.values) + np.square(state.u.values)
    for a in range(grid.dim):
        for b in range(grid.dim):
            total = total + m[..., a, b] * grads[a] * grads[b]
    return float(integrate_values(total, grid))


def sigma_h1_norm(psi: GridFunction, surface, metric: MetricField) -> float:
    """H1 norm of a lift on the data surface, with the metric evaluated on it:
    ``int (|psi|^2 + g^{ab}(phi(x), x) d_a psi d_b psi) dnu``.
    """
    grid = psi.grid
    m = metric.matrix_at_times(surface.phi)
    grads = gradient_values(psi.values, grid)
    total = np.square(psi.values)
    for a in range(grid.dim):
        for b in range(grid.dim):
            total = total + m[..., a, b] * grads[a] * grads[b]
    return float(np.sqrt(integrate_values(total, grid)))


def sigma_l2_dnu0(psi: GridFunction, surface, metric: MetricField) -> float:
    """L2 norm against the degenerate surface density
    ``(1 - g^{ab} d_a phi d_b phi) dnu``; vanishes on null surfaces.

    Kink nodes are the discrete measure-zero set and are excluded.
    """
    from .surface import dnu0_density

    density = dnu0_density(surface, metric).values
    tol = surface.tol
    live = ~surface.kink_mask
    if np.min(density[live]) < -tol:
        raise ValueError(
            f"surface density negative (timelike region): min {np.min(density[live]):.3e}"
        )
    density = np.where(live, np.maximum(density, 0.0), 0.0)
    return float(np.sqrt(integrate_values(np.square(psi.values) * density, psi.grid)))


def energy_phi(state, surface, metric: MetricField, t: float) -> float:
    """Energy integrand restricted to the region ``{x : phi(x) <= t}``."""
    grid = state.u.grid
    mask = (surface.phi <= t).astype(float)
    m = metric.matrix(state.time)
    grads = gradient_values(state.u.values, grid)
    total = np.square(state.ut.values) + np.square(state.u.values)
    for a in range(grid.dim):
        for b in range(grid.dim):
            total = total + m[..., a, b] * grads[a] * grads[b]
    return float(integrate_values(total * mask, grid))


def k1_bound(
    metric: MetricField,
    op: FirstOrderOperator | None,
    T: float,
    sample_times: int = 65,
) -> float:
    """Explicit admissible constant for ``E(t) <= E(s) exp(K1 |t - s|)``.

    Bounds every non-flux term of the energy-density identity by coefficient
    sup norms over ``[-T, T] x X``:

        K1 = M * [1 + s_dtg + 2 s_div + 2 (s_b0 + sum_a s_ba + s_c)]

    where ``M = max(1, 1/env_lo)`` converts gradient-square integrals into
    energy via the ellipticity floor.  Monotone nondecreasing in T.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    window = (max(-T, metric.window[0]), min(T, metric.window[1]))
    grid = metric.grid
    env_lo, _env_hi = validate_ellipticity(metric, window, max(2, sample_times // 8))
    ts = [window[0]] if metric.time_independent else np.linspace(window[0], window[1], sample_times)

    s_dtg = 0.0
    s_div = 0.0
    for t in ts:
        dtm = metric.dt_matrix(t)
        if grid.dim == 1:
            s_dtg = max(s_dtg, float(np.max(np.abs(dtm[..., 0, 0]))))
        else:
            s_dtg = max(s_dtg, float(np.max(np.abs(np.linalg.eigvalsh(dtm)))))
        m = metric.matrix(t)
        div_sq = np.zeros(grid.shape)
        for beta in range(grid.dim):
            comp = np.zeros(grid.shape)
            for a in range(grid.dim):
                comp += diff_values(grid.gamma * m[..., a, beta], grid.spacing[a], a, "centered2")
            div_sq += (comp / grid.gamma) ** 2
        s_div = max(s_div, float(np.max(np.sqrt(div_sq))))

    if op is None or op.is_zero:
        s_b0, s_b, s_c = 0.0, (0.0,) * grid.dim, 0.0
    else:
        s_b0, s_b, s_c = op.sup_bounds(window, sample_times)

    M = max(1.0, 1.0 / env_lo)
    return M * (1.0 + s_dtg + 2.0 * s_div + 2.0 * (s_b0 + sum(s_b) + s_c))


@dataclass
class EnergyReport:
    """Energy ledger of a solve: E(t), the exponential bound, and the most
    negative relative margin (negative = violation)."""

    times: np.ndarray
    energies: np.ndarray
    bound_curve: np.ndarray
    max_violation: float
    k1: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.energies = np.asarray(self.energies, dtype=float)
        self.bound_curve = np.asarray(self.bound_curve, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.energies < 0):
            raise ValueError("energies must be nonnegative")

    @property
    def margins(self) -> np.ndarray:
        scale = np.maximum(self.bound_curve, 1e-300)
        return (self.bound_curve - self.energies) / scale

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("# energy-report v1\n")
        buf.write("t,energy,bound,margin\n")
        for t, e, b, m in zip(self.times, self.energies, self.bound_curve, self.margins):
            buf.write(f"{t:.17g},{e:.17g},{b:.17g},{m:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
