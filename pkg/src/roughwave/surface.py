"""Lipschitz initial-data surfaces ``{(phi(x), x)}``: eikonal residuals, causal
classification, the degenerate surface density, the shifted foliation, and the
coordinate flattening that turns data-on-surface problems into data-at-zero
problems.

Gradients of a Lipschitz ``phi`` are centered differences away from kinks; a
node is flagged as a kink when its one-sided slopes disagree by more than
``10 * spacing``, which separates O(1) slope jumps (cone vertices) from smooth
curvature at every catalog resolution.  Catalog surfaces carry the slope field
they were constructed with (exact signs for cones, the eikonal ODE right-hand
side for curved metrics), so their residuals are limited by construction
accuracy rather than by differencing of samples.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .fields import FirstOrderOperator, MetricField, min_regularity
from .grid import GridError, GridFunction, PeriodicGrid, diff_values

SURFACE_NAMES = ("cone", "flatcone", "slice")

SPACELIKE = "spacelike"
NULL = "null"
WEAKLY_SPACELIKE = "weakly_spacelike"
TIMELIKE_INVALID = "timelike_invalid"


class SurfaceError(ValueError):
    """Raised for invalid surfaces (timelike regions, bad lambda, ...)."""


@dataclass
class CharacteristicSurface:
    """Graph surface ``{(phi(x), x)}`` with kink-aware gradient data.

    ``grad_phi`` holds one array per axis; ``kink_mask`` marks nodes whose
    one-sided slopes disagree beyond tolerance (excluded from classification
    statistics).  ``metric_ref`` is the metric the classification was made
    against; the foliation shift reuses it.
    """

    grid: PeriodicGrid
    phi: np.ndarray
    grad_phi: tuple[np.ndarray, ...]
    lipschitz_bound: float
    kink_mask: np.ndarray
    classification: str
    metric_ref: MetricField | None = None
    residual: np.ndarray | None = None
    tol: float = 1e-6

    @property
    def phi_function(self) -> GridFunction:
        return GridFunction(self.grid, self.phi)

    @property
    def phi_range(self) -> tuple[float, float]:
        return float(np.min(self.phi)), float(np.max(self.phi))

    def to_csv(self, path=None) -> str:
        if self.grid.dim != 1:
            raise GridError("surface CSV export is 1d only")
        buf = io.StringIO()
        buf.write("# surface v1\n")
        buf.write("x,phi,residual,kink_flag\n")
        xs = self.grid.axis_coords(0)
        res = self.residual if self.residual is not None else np.full(self.grid.shape, np.nan)
        for x, p, r, k in zip(xs, self.phi, res, self.kink_mask):
            buf.write(f"{x:.17g},{p:.17g},{r:.17g},{int(k)}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _kink_mask_and_grad(grid: PeriodicGrid, phi: np.ndarray):
    """Centered gradient plus the one-sided slope-gap kink detector."""
    grads, kinks = [], np.zeros(grid.shape, dtype=bool)
    lip = 0.0
    for a in range(grid.dim):
        h = grid.spacing[a]
        fwd = diff_values(phi, h, a, "forward1")
        bwd = diff_values(phi, h, a, "backward1")
        grads.append(0.5 * (fwd + bwd))
        kinks |= np.abs(fwd - bwd) > 10.0 * h
        lip = max(lip, float(np.max(np.abs(fwd))))
    return tuple(grads), kinks, lip


def build_surface(
    grid: PeriodicGrid,
    phi_values: np.ndarray,
    metric: MetricField,
    tol: float = 1e-6,
    slopes: Sequence[np.ndarray] | None = None,
    kink_mask: np.ndarray | None = None,
) -> CharacteristicSurface:
    """Classify a sampled graph function into a CharacteristicSurface.

    When ``slopes`` are supplied (constructed surfaces) they take the place of
    differenced gradients; the kink detector always runs on the samples.
    """
    phi = np.asarray(phi_values, dtype=float)
    if phi.shape != grid.shape:
        raise GridError("phi shape does not match grid")
    grads, kinks, lip = _kink_mask_and_grad(grid, phi)
    if slopes is not None:
        grads = tuple(np.asarray(s, dtype=float) for s in slopes)
        lip = max(lip, max(float(np.max(np.abs(s))) for s in grads))
    if kink_mask is not None:
        kinks = kinks | np.asarray(kink_mask, dtype=bool)
    surf = CharacteristicSurface(
        grid=grid,
        phi=phi,
        grad_phi=grads,
        lipschitz_bound=lip,
        kink_mask=kinks,
        classification="unclassified",
        metric_ref=metric,
        tol=tol,
    )
    surf.residual = eikonal_residual(surf, metric).values
    surf.classification = classify(surf, metric, tol)
    return surf


def eikonal_residual(surface: CharacteristicSurface, metric: MetricField) -> GridFunction:
    """Per-node ``g^{ab}(phi(x), x) d_a phi d_b phi - 1`` with kink-aware
    gradients.  Kink nodes carry a value but are excluded from statistics."""
    lo, hi = surface.phi_range
    if lo < metric.window[0] - 1e-12 or hi > metric.window[1] + 1e-12:
        raise SurfaceError(
            f"phi range [{lo:.3g}, {hi:.3g}] exits metric window {metric.window}"
        )
    m = metric.matrix_at_times(surface.phi)
    q = np.zeros(surface.grid.shape)
    for a in range(surface.grid.dim):
        for b in range(surface.grid.dim):
            q += m[..., a, b] * surface.grad_phi[a] * surface.grad_phi[b]
    return GridFunction(surface.grid, q - 1.0)


def classify(surface: CharacteristicSurface, metric: MetricField, tol: float = 1e-6) -> str:
    """Total causal classification from the residual sign on non-kink nodes."""
    res = eikonal_residual(surface, metric).values
    live = res[~surface.kink_mask]
    if live.size == 0:
        return NULL
    if np.all(np.abs(live) <= tol):
        return NULL
    if np.all(live <= -tol):
        return SPACELIKE
    if np.all(live <= tol):
        return WEAKLY_SPACELIKE
    return TIMELIKE_INVALID


def dnu0_density(surface: CharacteristicSurface, metric: MetricField) -> GridFunction:
    """Degenerate surface density ``1 - g^{ab} d_a phi d_b phi`` per node."""
    if surface.classification == TIMELIKE_INVALID:
        raise SurfaceError("density undefined: surface has timelike regions")
    res = eikonal_residual(surface, metric).values
    return GridFunction(surface.grid, -res)


def foliation_slice(surface: CharacteristicSurface, t: float) -> CharacteristicSurface:
    """The shifted leaf ``{(t + phi(x), x)}`` reclassified against the stored
    metric at the shifted times."""
    shifted = surface.phi + float(t)
    out = replace(surface, phi=shifted, residual=None)
    if surface.metric_ref is not None:
        out.residual = eikonal_residual(out, surface.metric_ref).values
        out.classification = classify(out, surface.metric_ref, surface.tol)
    return out


def _eikonal_ode_1d(grid: PeriodicGrid, metric: MetricField, vertex: float, substeps: int = 8):
    """March ``phi' = +-1 / sqrt(g11(phi, x))`` outward from the vertex with
    RK4 at ``substeps`` stages per cell; returns (phi, slopes, match_gap, kinks).

    Both branches meet at the far node; the mismatch there reflects the
    integration error and is returned for a tolerance check.  The stored
    slope field is the ODE right-hand side at the accepted phi values, so the
    nodewise eikonal residual is zero by construction away from the two kinks.
    """
    (xs,) = grid.mesh()
    n = grid.shape[0]
    L = grid.lengths[0]
    h = grid.spacing[0]
    iv = int(round(vertex / h)) % n

    def g_at(x, t):
        # cubic (Catmull-Rom) interpolation of the node samples along x
        m = metric.matrix_at_times(np.full(grid.shape, t))[..., 0, 0]
        pos = (x % L) / h
        i1 = int(np.floor(pos)) % n
        w = pos - np.floor(pos)
        p0, p1, p2, p3 = (m[(i1 + k - 1) % n] for k in range(4))
        return p1 + 0.5 * w * (
            p2 - p0 + w * (2 * p0 - 5 * p1 + 4 * p2 - p3 + w * (3 * (p1 - p2) + p3 - p0))
        )

    def slope(x, phi_val, sign):
        return sign / np.sqrt(g_at(x, phi_val))

    phi = np.zeros(n)
    slopes = np.zeros(n)
    half_r = n // 2
    half_l = n - half_r
    far_vals = {}

    for sign, nsteps in ((+1.0, half_r), (-1.0, half_l)):
        x = xs[iv]
        val = 0.0
        dx = sign * h / substeps
        for step in range(1, nsteps + 1):
            for _ in range(substeps):
                k1 = slope(x, val, sign)
                k2 = slope(x + dx / 2, val + dx * k1 / 2, sign)
                k3 = slope(x + dx / 2, val + dx * k2 / 2, sign)
                k4 = slope(x + dx, val + dx * k3, sign)
                val += dx / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                x += dx
            idx = (iv + int(sign) * step) % n
            if step == nsteps:
                far_vals[sign] = val
            else:
                phi[idx] = val
                slopes[idx] = slope(xs[idx], val, sign)

    match_gap = abs(far_vals[1.0] - far_vals[-1.0])
    far = (iv + half_r) % n
    phi[far] = 0.5 * (far_vals[1.0] + far_vals[-1.0])
    slopes[iv] = 0.0
    slopes[far] = 0.0
    kinks = np.zeros(n, dtype=bool)
    kinks[iv] = True
    kinks[far] = True
    return phi, slopes, match_gap, kinks


def make_surface(
    name: str,
    grid: PeriodicGrid,
    metric: MetricField,
    tol: float = 1e-6,
    vertex: float = 0.0,
    cap: float | None = None,
    match_tol: float = 1e-6,
) -> CharacteristicSurface:
    """Catalog of admissible data surfaces.

    cone      distance-type null surface: phi = dist for flat metrics; for
              curved 1d metrics phi solves the eikonal ODE outward from the
              vertex (branches matched at the far point within ``match_tol``).
    flatcone  cone truncated at height ``cap`` (weakly spacelike).
    slice     constant-time slice phi = 0 (spacelike).
    """
    if name not in SURFACE_NAMES:
        raise SurfaceError(f"unknown surface {name!r}; options: {SURFACE_NAMES}")

    if name == "slice":
        phi = np.zeros(grid.shape)
        slopes = tuple(np.zeros(grid.shape) for _ in range(grid.dim))
        return build_surface(grid, phi, metric, tol, slopes=slopes)

    flat = _metric_is_flat(metric)
    if grid.dim == 1:
        if flat:
            (xs,) = grid.mesh()
            L = grid.lengths[0]
            d = np.abs(xs - vertex) % L
            phi = np.minimum(d, L - d)
            slopes = np.where((xs - vertex) % L <= L / 2, 1.0, -1.0)
            kinks = np.isclose(phi, 0.0) | np.isclose(phi, L / 2)
            slopes = np.where(kinks, 0.0, slopes)
            slope_tuple = (slopes,)
        else:
            phi, slopes, gap, kinks = _eikonal_ode_1d(grid, metric, vertex)
            if gap > match_tol:
                raise SurfaceError(
                    f"eikonal branches mismatch at far point: {gap:.3e} > {match_tol:.1e}"
                )
            slope_tuple = (slopes,)
    else:
        if not flat:
            raise SurfaceError("2d cones are supported for flat metrics only")
        phi = grid.torus_distance(vertex)
        slope_tuple = []
        for a in range(2):
            xs = grid.mesh()[a]
            L = grid.lengths[a]
            d = (xs - (vertex if np.isscalar(vertex) else vertex[a])) % L
            comp = np.where(d <= L / 2, d, d - L)
            slope_tuple.append(np.where(phi > 0, comp / np.maximum(phi, 1e-300), 0.0))
        slope_tuple = tuple(slope_tuple)
        kinks = np.isclose(phi, 0.0)
        for a in range(2):
            xs = grid.mesh()[a]
            L = grid.lengths[a]
            d = (xs - (vertex if np.isscalar(vertex) else vertex[a])) % L
            kinks |= np.isclose(d, L / 2)

    if name == "flatcone":
        cap = cap if cap is not None else 0.5 * float(np.max(phi))
        capped = phi >= cap
        phi = np.minimum(phi, cap)
        slope_tuple = tuple(np.where(capped, 0.0, s) for s in slope_tuple)
        edge = capped & ~np.roll(capped, 1, 0) | capped & ~np.roll(capped, -1, 0)
        kinks = kinks | edge

    return build_surface(grid, phi, metric, tol, slopes=slope_tuple, kink_mask=kinks)


def _metric_is_flat(metric: MetricField) -> bool:
    m = metric.matrix(metric.window[0])
    eye = np.zeros_like(m)
    for a in range(metric.dim):
        eye[..., a, a] = 1.0
    return metric.time_independent and np.allclose(m, eye, atol=1e-14)


@dataclass
class TransformedProblem:
    """Coefficients of the wave equation in slab coordinates ``s = t - phi(x)``.

    In these coordinates the data surface is the slice s = 0 and, with the
    propagation speed slowed by ``lam < 1``, that slice is uniformly spacelike:
    ``a = 1 - lam g^{ab} d_a phi d_b phi >= 1 - lam (1 + tol) > 0``.

    The operator is applied in divergence form.  Because the coordinate change
    has unit Jacobian and the density is time-independent, the divergence-form
    d'Alembertian transforms exactly; ``cross`` holds the full coefficient
    ``2 lam g^{ab} d_a phi`` of the mixed derivative, and the first-order part
    picks up only ``b^a d_a phi`` (no second derivatives of phi are ever
    formed).
    """

    grid: PeriodicGrid
    a: GridFunction
    cross: tuple[GridFunction, ...]
    spatial: MetricField
    first_order: FirstOrderOperator
    lam: float
    surface_ref: CharacteristicSurface
    metric_ref: MetricField

    def a_values(self, s: float) -> np.ndarray:
        if self.metric_ref.time_independent:
            return self.a.values
        m = self.metric_ref.matrix_at_times(self.surface_ref.phi + s)
        q = np.zeros(self.grid.shape)
        g = self.surface_ref.grad_phi
        for i in range(self.grid.dim):
            for j in range(self.grid.dim):
                q += m[..., i, j] * g[i] * g[j]
        return 1.0 - self.lam * q

    def cross_values(self, s: float) -> tuple[np.ndarray, ...]:
        """Flux coefficients ``w^b = lam g^{ab} d_a phi`` (half of ``cross``)."""
        if self.metric_ref.time_independent:
            return tuple(0.5 * c.values for c in self.cross)
        m = self.metric_ref.matrix_at_times(self.surface_ref.phi + s)
        g = self.surface_ref.grad_phi
        out = []
        for b in range(self.grid.dim):
            w = np.zeros(self.grid.shape)
            for a in range(self.grid.dim):
                w += m[..., a, b] * g[a]
            out.append(self.lam * w)
        return tuple(out)

    def metric_values(self, s: float) -> np.ndarray:
        if self.metric_ref.time_independent:
            return self.metric_ref.matrix(0.0)
        return self.metric_ref.matrix_at_times(self.surface_ref.phi + s)


def flatten(
    metric: MetricField,
    op: FirstOrderOperator,
    surface: CharacteristicSurface,
    lam: float,
) -> TransformedProblem:
    """Slab-coordinate form of the lam-slowed equation with the surface as the
    slice s = 0.  Requires ``0 < lam < 1`` and a weakly spacelike or null
    surface."""
    if not 0 < lam < 1:
        raise SurfaceError(f"lambda must be in (0, 1), got {lam}")
    if surface.classification not in (NULL, WEAKLY_SPACELIKE, SPACELIKE):
        raise SurfaceError(
            f"surface must be weakly spacelike or null, got {surface.classification!r}"
        )
    grid = surface.grid
    m0 = metric.matrix_at_times(surface.phi)
    q = np.zeros(grid.shape)
    for i in range(grid.dim):
        for j in range(grid.dim):
            q += m0[..., i, j] * surface.grad_phi[i] * surface.grad_phi[j]
    a_vals = 1.0 - lam * q
    live = ~surface.kink_mask
    # the slowed slice is spacelike iff lam * sup(g dphi dphi) < 1; for an
    # admissible surface under this metric the floor 1 - lam (1 + tol) holds
    if np.min(a_vals[live]) <= 0:
        raise SurfaceError(
            f"lambda={lam} too large for this surface/metric: slab coefficient "
            f"a reaches {np.min(a_vals[live]):.3e} (need lam * g dphi dphi < 1)"
        )

    cross = []
    for b in range(grid.dim):
        w = np.zeros(grid.shape)
        for a_ in range(grid.dim):
            w += m0[..., a_, b] * surface.grad_phi[a_]
        cross.append(GridFunction(grid, 2.0 * lam * w))

    def scaled_matrix(s):
        if metric.time_independent:
            return lam * metric.matrix(0.0)
        return lam * metric.matrix_at_times(surface.phi + s)

    spatial = MetricField(
        grid,
        scaled_matrix,
        regularity=metric.regularity,
        window=(metric.window[0] - float(np.max(surface.phi)), metric.window[1] - float(np.min(surface.phi))),
        time_independent=metric.time_independent,
        name=f"{metric.name}*lam",
    )

    grads = surface.grad_phi

    if op.is_zero:
        first = FirstOrderOperator.zero(grid)
    else:
        time_indep = op.time_independent

        def make_b0(s):
            if time_indep:
                b0, bs, _ = op.coeff_arrays(0.0)
            else:
                b0, bs, _ = _coeffs_on_surface(op, surface, s)
            out = b0.copy()
            for a_ in range(grid.dim):
                out -= bs[a_] * grads[a_]
            return out

        def make_b(axis):
            def eval_b(s):
                if time_indep:
                    _, bs, _ = op.coeff_arrays(0.0)
                else:
                    _, bs, _ = _coeffs_on_surface(op, surface, s)
                return bs[axis]

            return eval_b

        def make_c(s):
            if time_indep:
                _, _, c = op.coeff_arrays(0.0)
            else:
                _, _, c = _coeffs_on_surface(op, surface, s)
            return c

        first = FirstOrderOperator(
            grid,
            b0=make_b0,
            b=tuple(make_b(a_) for a_ in range(grid.dim)),
            c=make_c,
            regularity=min_regularity(op.regularity, "lipschitz"),
            time_independent=time_indep,
        )

    return TransformedProblem(
        grid=grid,
        a=GridFunction(grid, a_vals),
        cross=tuple(cross),
        spatial=spatial,
        first_order=first,
        lam=lam,
        surface_ref=surface,
        metric_ref=metric,
    )


def _coeffs_on_surface(op: FirstOrderOperator, surface: CharacteristicSurface, s: float):
    """Evaluate operator coefficients at per-node times ``s + phi(x)``.

    Coefficient closures are functions of a scalar t; per-node times are
    resolved by linear interpolation over a small sample of slab times.
    """
    times = s + surface.phi
    lo, hi = float(times.min()), float(times.max())
    if hi - lo < 1e-14:
        return op.coeff_arrays(lo)
    ts = np.linspace(lo, hi, 9)
    samples = [op.coeff_arrays(t) for t in ts]
    w = np.clip((times - lo) / (hi - lo) * (len(ts) - 1), 0, len(ts) - 1 - 1e-12)
    i0 = w.astype(int)
    frac = w - i0

    def lerp(get):
        stack = np.stack([get(s_) for s_ in samples])
        a = np.take_along_axis(stack, i0[None], 0)[0]
        b = np.take_along_axis(stack, (i0 + 1)[None], 0)[0]
        return a * (1 - frac) + b * frac

    b0 = lerp(lambda t: t[0])
    bs = tuple(lerp(lambda t, a_=a_: t[1][a_]) for a_ in range(surface.grid.dim))
    c = lerp(lambda t: t[2])
    return b0, bs, c
