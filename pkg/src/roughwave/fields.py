"""Time-dependent inverse metrics and first-order operators on the grid.

The artifact stores the inverse metric ``g^{ab}(t, x)`` (what the equation
uses).  Ellipticity is validated as an eigenvalue envelope ``[lo, hi]`` of the
inverse metric over a time window.  A small catalog of problems with known
behavior (smooth, C1 and Lipschitz coefficients) drives tests and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridError, GridFunction, PeriodicGrid, diff_values


class EllipticityError(ValueError):
    """Raised when a metric fails symmetry or positivity."""


class CatalogError(KeyError):
    """Raised for unknown catalog names."""


@dataclass
class MetricField:
    """Inverse metric ``g^{ab}(t, x)`` sampled at grid nodes.

    Attributes:
        matrix_of_t: map t -> array of shape ``grid.shape + (dim, dim)``.
        regularity: one of ``smooth``, ``c1``, ``lipschitz``.
        window: declared time window of validity.
        time_independent: enables cached single evaluation and solver
            fast paths.
        matrix_of_tx: optional evaluator taking a per-node array of times
            (used for surface-restricted metrics ``g(phi(x), x)``).
        dt_matrix_of_t: optional analytic time derivative; finite differences
            in t are used when absent.
    """

    grid: PeriodicGrid
    matrix_of_t: Callable[[float], np.ndarray]
    regularity: str = "smooth"
    window: tuple[float, float] = (-4.0, 4.0)
    time_independent: bool = False
    matrix_of_tx: Callable[[np.ndarray], np.ndarray] | None = None
    dt_matrix_of_t: Callable[[float], np.ndarray] | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def matrix(self, t: float) -> np.ndarray:
        if self.time_independent:
            if "m0" not in self._cache:
                self._cache["m0"] = np.asarray(self.matrix_of_t(self.window[0]), dtype=float)
            return self._cache["m0"]
        return np.asarray(self.matrix_of_t(float(t)), dtype=float)

    def matrix_at_times(self, times: np.ndarray) -> np.ndarray:
        """Metric evaluated at a per-node array of times (shape = grid.shape)."""
        if self.time_independent:
            return self.matrix(0.0)
        if self.matrix_of_tx is not None:
            return np.asarray(self.matrix_of_tx(np.asarray(times, dtype=float)), dtype=float)
        # sampled fallback: per-node cubic interpolation across a time stencil
        from scipy.interpolate import CubicSpline

        times = np.asarray(times, dtype=float)
        lo, hi = float(times.min()), float(times.max())
        if hi - lo < 1e-14:
            return self.matrix(lo)
        ts = np.linspace(lo, hi, 17)
        samples = np.stack([self.matrix(t) for t in ts])
        spline = CubicSpline(ts, samples, axis=0)
        seg = np.clip(np.searchsorted(ts, times) - 1, 0, len(ts) - 2)
        sel = (seg,) + tuple(np.indices(self.grid.shape))
        dtl = (times - ts[seg])[..., None, None]
        out = np.zeros(self.grid.shape + (self.dim, self.dim))
        for j in range(spline.c.shape[0]):
            out = out * dtl + spline.c[j][sel]
        return out

    def dt_matrix(self, t: float, eps: float = 1e-5) -> np.ndarray:
        if self.time_independent:
            return np.zeros(self.grid.shape + (self.dim, self.dim))
        if self.dt_matrix_of_t is not None:
            return np.asarray(self.dt_matrix_of_t(float(t)), dtype=float)
        return (self.matrix(t + eps) - self.matrix(t - eps)) / (2 * eps)

    def eigenvalues(self, t: float) -> np.ndarray:
        m = self.matrix(t)
        if self.dim == 1:
            return m[..., 0, 0]
        return np.linalg.eigvalsh(m)

    @classmethod
    def from_scalar(cls, grid: PeriodicGrid, g11, **kw) -> "MetricField":
        """1d metric from a scalar closure ``g11(t, x)`` (vectorized in both)."""
        if grid.dim != 1:
            raise GridError("from_scalar requires a 1d grid")
        (xs,) = grid.mesh()

        def matrix_of_t(t):
            return np.asarray(g11(t, xs), dtype=float)[..., None, None] + np.zeros(
                grid.shape + (1, 1)
            )

        def matrix_of_tx(times):
            return np.asarray(g11(times, xs), dtype=float)[..., None, None] + np.zeros(
                grid.shape + (1, 1)
            )

        return cls(grid, matrix_of_t, matrix_of_tx=matrix_of_tx, **kw)

    @classmethod
    def diagonal(cls, grid: PeriodicGrid, entries, **kw) -> "MetricField":
        """Diagonal metric from per-axis closures ``g_aa(t, x, y)``."""
        mesh = grid.mesh()
        d = grid.dim

        def build(t):
            m = np.zeros(grid.shape + (d, d))
            for a, ga in enumerate(entries):
                m[..., a, a] = np.asarray(ga(t, *mesh), dtype=float)
            return m

        return cls(grid, build, matrix_of_tx=build, **kw)


def validate_ellipticity(
    metric: MetricField,
    window: tuple[float, float] | None = None,
    sample_times: int = 33,
) -> tuple[float, float]:
    """Tightest sampled eigenvalue envelope ``(lo, hi)`` of the inverse metric.

    Samples ``sample_times`` times across the window and every node; rejects
    non-symmetric matrices and non-positive eigenvalues.
    """
    if sample_times < 2:
        raise ValueError("sample_times must be >= 2")
    window = window or metric.window
    ts = [window[0]] if metric.time_independent else np.linspace(window[0], window[1], sample_times)
    lo, hi = np.inf, -np.inf
    for t in ts:
        m = metric.matrix(t)
        if not np.allclose(m, np.swapaxes(m, -1, -2), atol=1e-12):
            raise EllipticityError(f"metric not symmetric at t={t}")
        ev = metric.eigenvalues(t)
        if np.min(ev) <= 0:
            raise EllipticityError(f"metric not positive at t={t}: min eigenvalue {np.min(ev)}")
        lo = min(lo, float(np.min(ev)))
        hi = max(hi, float(np.max(ev)))
    return lo, hi


@dataclass
class FirstOrderOperator:
    """Coefficients of ``b0 * du/dt + b^a * du/dx_a + c * u``.

    Each coefficient is a map t -> node array, or None for identically zero.
    """

    grid: PeriodicGrid
    b0: Callable[[float], np.ndarray] | None = None
    b: tuple[Callable[[float], np.ndarray] | None, ...] = ()
    c: Callable[[float], np.ndarray] | None = None
    regularity: str = "smooth"
    time_independent: bool = True
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.b:
            self.b = (None,) * self.grid.dim

    @classmethod
    def zero(cls, grid: PeriodicGrid) -> "FirstOrderOperator":
        return cls(grid)

    @property
    def is_zero(self) -> bool:
        return self.b0 is None and self.c is None and all(f is None for f in self.b)

    def coeff_arrays(self, t: float) -> tuple[np.ndarray, tuple[np.ndarray, ...], np.ndarray]:
        zeros = np.zeros(self.grid.shape)
        b0 = zeros if self.b0 is None else np.broadcast_to(np.asarray(self.b0(t), float), self.grid.shape)
        bs = tuple(
            zeros if f is None else np.broadcast_to(np.asarray(f(t), float), self.grid.shape)
            for f in self.b
        )
        c = zeros if self.c is None else np.broadcast_to(np.asarray(self.c(t), float), self.grid.shape)
        return b0, bs, c

    def sup_bounds(self, window: tuple[float, float], sample_times: int = 65):
        """Sampled sup norms (s_b0, per-axis s_b, s_c) over window x grid."""
        ts = [window[0]] if self.time_independent else np.linspace(window[0], window[1], sample_times)
        s_b0 = 0.0
        s_b = [0.0] * self.grid.dim
        s_c = 0.0
        for t in ts:
            b0, bs, c = self.coeff_arrays(t)
            s_b0 = max(s_b0, float(np.max(np.abs(b0))))
            for a in range(self.grid.dim):
                s_b[a] = max(s_b[a], float(np.max(np.abs(bs[a]))))
            s_c = max(s_c, float(np.max(np.abs(c))))
        return s_b0, tuple(s_b), s_c


def face_weights(metric_matrix: np.ndarray, gamma: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic-mean face weight ``(gamma * g_aa)`` at the axis' half nodes."""
    w = gamma * metric_matrix[..., axis, axis]
    return 0.5 * (w + np.roll(w, -1, axis))


def divergence_form_values(
    values: np.ndarray, metric_matrix: np.ndarray, grid: PeriodicGrid, scale: float = 1.0
) -> np.ndarray:
    """Apply ``scale * gamma^-1 d_a(gamma g^{ab} d_b u)`` to node values.

    Diagonal terms are flux-differenced on the staggered half-nodes (compact
    stencil); off-diagonal terms use centered differences.  The resulting
    operator is exactly symmetric in the gamma-weighted inner product.
    """
    gamma = grid.gamma
    out = np.zeros_like(values)
    for a in range(grid.dim):
        h = grid.spacing[a]
        wf = face_weights(metric_matrix, gamma, a) * scale
        dplus = np.roll(values, -1, a) - values
        flux = wf * dplus
        out += (flux - np.roll(flux, 1, a)) / h**2
    if grid.dim == 2:
        for a in range(2):
            b = 1 - a
            w = gamma * metric_matrix[..., a, b] * scale
            dcb = diff_values(values, grid.spacing[b], b, "centered2")
            out += diff_values(w * dcb, grid.spacing[a], a, "centered2")
    return out / gamma


def dalembertian_spatial(u: GridFunction, metric: MetricField, t: float) -> GridFunction:
    """Spatial part of the simplified d'Alembertian in divergence form."""
    vals = divergence_form_values(u.values, metric.matrix(t), u.grid)
    return GridFunction(u.grid, vals, t)


def apply_first_order(state, op: FirstOrderOperator, t: float) -> GridFunction:
    """Evaluate ``b0 * du/dt + b^a * du/dx_a + c*u`` on a state (u, du/dt)."""
    grid = state.u.grid
    b0, bs, c = op.coeff_arrays(t)
    out = b0 * state.ut.values + c * state.u.values
    for a in range(grid.dim):
        out = out + bs[a] * diff_values(state.u.values, grid.spacing[a], a, "centered2")
    return GridFunction(grid, out, t)


def to_nondivergence_form(metric: MetricField, op: FirstOrderOperator) -> FirstOrderOperator:
    """First-order remainder when the wave operator is written without the
    divergence: returns (p0, p^b, q) with
    ``p^b = -gamma^-1 d_a(gamma g^{ab}) + b^b``, ``p0 = b0``, ``q = c``.

    For Lipschitz metrics the derivative is a centered difference and the
    returned operator carries a warning note.
    """
    grid = metric.grid
    gamma = grid.gamma

    def p_axis(beta):
        def eval_p(t):
            m = metric.matrix(t)
            corr = np.zeros(grid.shape)
            for a in range(grid.dim):
                corr += diff_values(gamma * m[..., a, beta], grid.spacing[a], a, "centered2")
            corr = -corr / gamma
            if op.b[beta] is not None:
                corr = corr + np.asarray(op.b[beta](t), float)
            return corr

        return eval_p

    notes = op.notes
    if metric.regularity == "lipschitz":
        notes = notes + ("lipschitz-metric-derivative-by-centered-difference",)
    return FirstOrderOperator(
        grid,
        b0=op.b0,
        b=tuple(p_axis(beta) for beta in range(grid.dim)),
        c=op.c,
        regularity=min_regularity(metric.regularity, op.regularity),
        time_independent=metric.time_independent and op.time_independent,
        notes=notes,
    )


def min_regularity(*tags: str) -> str:
    order = {"lipschitz": 0, "c1": 1, "smooth": 2}
    return min(tags, key=lambda s: order.get(s, 2))


@dataclass
class ExactSolution:
    """Closed-form solution attachment for manufactured-solution testing.

    ``u``, ``ut`` and optional source ``f`` are closures of (t, *mesh arrays).
    """

    u: Callable
    ut: Callable
    f: Callable | None = None

    def state(self, grid: PeriodicGrid, t: float):
        from .cauchy import StateVector

        mesh = grid.mesh()
        u = GridFunction(grid, np.broadcast_to(np.asarray(self.u(t, *mesh), float), grid.shape).copy(), t)
        ut = GridFunction(grid, np.broadcast_to(np.asarray(self.ut(t, *mesh), float), grid.shape).copy(), t)
        return StateVector(u, ut, t)


@dataclass
class CatalogProblem:
    name: str
    metric: MetricField
    op: FirstOrderOperator
    exact: ExactSolution | None
    window: tuple[float, float]


CATALOG_NAMES = ("flat1d", "smooth1d", "lipschitz1d", "c1_1d", "flat2d")


def catalog(name: str, grid: PeriodicGrid | None = None) -> CatalogProblem:
    """Built-in problems with declared regularity tags and exact solutions.

    flat1d      g=1, L1=0, exact traveling wave sin(x - t).
    smooth1d    g11 = 1 + sin(x)^2/2 with a smooth first-order operator.
    lipschitz1d g11 = 1 + |sin x|/2, Lipschitz coefficients.
    c1_1d       g11 = 1 + sin(x)^2/2 + 0.1 t cos x, C1 in time.
    flat2d      identity metric in 2d, exact sum of axis plane waves.
    """
    if name not in CATALOG_NAMES:
        raise CatalogError(f"unknown catalog problem {name!r}; options: {CATALOG_NAMES}")
    if grid is None:
        grid = PeriodicGrid((128, 128) if name == "flat2d" else 128)
    if name == "flat2d" and grid.dim != 2:
        raise CatalogError("flat2d requires a 2d grid")
    if name != "flat2d" and grid.dim != 1:
        raise CatalogError(f"{name} requires a 1d grid")

    if name == "flat1d":
        metric = MetricField.from_scalar(
            grid, lambda t, x: np.ones_like(x), regularity="smooth",
            window=(-8.0, 8.0), time_independent=True, name=name,
        )
        op = FirstOrderOperator.zero(grid)
        exact = ExactSolution(
            u=lambda t, x: np.sin(x - t),
            ut=lambda t, x: -np.cos(x - t),
        )
        return CatalogProblem(name, metric, op, exact, (-8.0, 8.0))

    if name == "smooth1d":
        metric = MetricField.from_scalar(
            grid, lambda t, x: 1.0 + 0.5 * np.sin(x) ** 2, regularity="smooth",
            window=(-8.0, 8.0), time_independent=True, name=name,
        )
        (xs,) = grid.mesh()
        op = FirstOrderOperator(
            grid,
            b0=lambda t: 0.25 * np.cos(xs),
            b=(lambda t: 0.25 * np.sin(xs),),
            c=lambda t: 0.5 * np.ones_like(xs),
            regularity="smooth",
            time_independent=True,
        )
        return CatalogProblem(name, metric, op, None, (-8.0, 8.0))

    if name == "lipschitz1d":
        metric = MetricField.from_scalar(
            grid, lambda t, x: 1.0 + 0.5 * np.abs(np.sin(x)), regularity="lipschitz",
            window=(-8.0, 8.0), time_independent=True, name=name,
        )
        (xs,) = grid.mesh()
        op = FirstOrderOperator(
            grid,
            b0=None,
            b=(lambda t: 0.25 * np.abs(np.cos(xs)),),
            c=lambda t: 0.5 * np.abs(np.sin(xs)),
            regularity="lipschitz",
            time_independent=True,
        )
        return CatalogProblem(name, metric, op, None, (-8.0, 8.0))

    if name == "c1_1d":
        eps = 0.1

        def g11(t, x):
            return 1.0 + 0.5 * np.sin(x) ** 2 + eps * np.asarray(t) * np.cos(x)

        def dt_g11(t, x):
            return eps * np.cos(x) + 0.0 * x

        metric = MetricField.from_scalar(
            grid, g11, regularity="c1", window=(-4.0, 4.0), time_independent=False, name=name,
        )
        (xs,) = grid.mesh()
        metric.dt_matrix_of_t = lambda t: dt_g11(t, xs)[..., None, None] + np.zeros(
            grid.shape + (1, 1)
        )
        op = FirstOrderOperator(
            grid,
            b0=lambda t: 0.1 * np.sin(t) * np.ones_like(xs),
            b=None,
            c=lambda t: 0.2 * np.cos(xs),
            regularity="smooth",
            time_independent=False,
        )
        return CatalogProblem(name, metric, op, None, (-4.0, 4.0))

    # flat2d
    metric = MetricField.diagonal(
        grid,
        (lambda t, x, y: np.ones_like(x), lambda t, x, y: np.ones_like(x)),
        regularity="smooth",
        window=(-8.0, 8.0),
        time_independent=True,
        name=name,
    )
    op = FirstOrderOperator.zero(grid)
    exact = ExactSolution(
        u=lambda t, x, y: np.sin(x - t) + 0.5 * np.cos(y - t),
        ut=lambda t, x, y: -np.cos(x - t) + 0.5 * np.sin(y - t),
    )
    return CatalogProblem(name, metric, op, exact, (-8.0, 8.0))
