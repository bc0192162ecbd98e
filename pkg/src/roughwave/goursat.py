"""Characteristic solver and trace machinery: traces on data surfaces, the
lambda-slowdown construction for null data, round-trip verification, empirical
two-sided trace constants, and foliation continuity.

The constructive path solves the slowed equation in slab coordinates
``s = t - phi(x)``: for ``lam < 1`` the slice s = 0 is uniformly spacelike,
so explicit stepping applies; the ladder ``lam -> 1`` recovers the
characteristic problem.  Foliation leaves ``{(t + phi(x), x)}`` are constant-s
slices in slab coordinates, which is what makes the successive-iterate gaps
cheap to measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cauchy import (
    SolverConfig,
    StateVector,
    Trajectory,
    advance_two_sided,
    slab_coeff_builder,
    solve_cauchy,
    stable_speed,
)
from .fields import FirstOrderOperator, MetricField
from .grid import GridFunction, PeriodicGrid
from .mollify import grid_tied_level, regularize_coefficients
from .norms import energy, hk_norm, sigma_h1_norm, sigma_l2_dnu0
from .surface import (
    NULL,
    SPACELIKE,
    WEAKLY_SPACELIKE,
    CharacteristicSurface,
    SurfaceError,
    flatten,
)

DEFAULT_SCHEDULE = tuple(1.0 - 2.0 ** (-k) for k in range(2, 9))
STAGE_STEP_BUDGET = 3_000_000


class TraceError(RuntimeError):
    """Raised when a trace cannot be extracted from a trajectory."""


def trace_on_surface(traj: Trajectory, surface: CharacteristicSurface) -> GridFunction:
    """Restriction ``psi(x) = u(phi(x), x)`` by per-node time interpolation."""
    lo, hi = traj.window
    plo, phi_hi = surface.phi_range
    if plo < lo - 1e-9 or phi_hi > hi + 1e-9:
        raise TraceError(
            f"phi range [{plo:.4g}, {phi_hi:.4g}] exits trajectory window [{lo:.4g}, {hi:.4g}]"
        )
    u_vals, _ut = traj.sample_node_times(surface.phi)
    return GridFunction(traj.grid, u_vals)


def trace_state_on_surface(traj: Trajectory, surface: CharacteristicSurface):
    """Both traces (u, du/dt) on the surface."""
    lo, hi = traj.window
    plo, phi_hi = surface.phi_range
    if plo < lo - 1e-9 or phi_hi > hi + 1e-9:
        raise TraceError("phi range exits trajectory window")
    u_vals, ut_vals = traj.sample_node_times(surface.phi)
    return GridFunction(traj.grid, u_vals), GridFunction(traj.grid, ut_vals)


@dataclass
class GoursatResult:
    """Trajectory in original coordinates plus ladder diagnostics."""

    trajectory: Trajectory
    lambda_schedule: list[float]
    successive_h1_gaps: list[float]
    roundtrip_l2: float
    roundtrip_h1: float
    warnings: tuple[str, ...] = ()
    diagnostics: list[dict] = field(default_factory=list)
    slab_trajectory: Trajectory | None = None


@dataclass
class RoundtripError:
    """Trace-vs-data errors; ``relative`` is False when the data vanishes."""

    l2: float
    h1: float
    relative: bool = True

    def __iter__(self):
        return iter((self.l2, self.h1))


def roundtrip_error(
    v: GridFunction,
    result: GoursatResult | Trajectory,
    surface: CharacteristicSurface,
    metric: MetricField,
) -> RoundtripError:
    """Executable isomorphism check: distance of the solved trajectory's trace
    back to the prescribed surface data."""
    traj = result.trajectory if isinstance(result, GoursatResult) else result
    psi = trace_on_surface(traj, surface)
    diff = GridFunction(v.grid, psi.values - v.values)
    l2_ref = hk_norm(v, 0)
    h1_ref = sigma_h1_norm(v, surface, metric)
    l2 = hk_norm(diff, 0)
    h1 = sigma_h1_norm(diff, surface, metric)
    if l2_ref < 1e-300 or h1_ref < 1e-300:
        return RoundtripError(l2, h1, relative=False)
    return RoundtripError(l2 / l2_ref, h1 / h1_ref, relative=True)


def _eikonal_sup(metric: MetricField, surface: CharacteristicSurface) -> float:
    """sup over non-kink nodes of ``g^{ab} d_a phi d_b phi`` under ``metric``."""
    m = metric.matrix_at_times(surface.phi)
    q = np.zeros(surface.grid.shape)
    for i in range(surface.grid.dim):
        for j in range(surface.grid.dim):
            q += m[..., i, j] * surface.grad_phi[i] * surface.grad_phi[j]
    return float(np.max(q[~surface.kink_mask]))


def _map_slab_to_spacetime(
    slab: Trajectory, surface: CharacteristicSurface, t_window, ds: float,
    oversample: int = 4,
) -> Trajectory:
    """Resample ``u(t, y) = utilde(t - phi(y), y)`` on a uniform t grid.

    The output grid is ``oversample`` times finer than the slab storage:
    composing two splines at equal resolution compounds the reconstruction
    error of the fast slab content, while a dense resampling stays pinned to
    the first spline (which is exact at its knots).
    """
    grid = slab.grid
    ds_out = ds / oversample
    nt = max(2, int(np.ceil((t_window[1] - t_window[0]) / ds_out)) + 1)
    times = t_window[0] + ds_out * np.arange(nt)
    u = np.empty((nt,) + grid.shape)
    ut = np.empty((nt,) + grid.shape)
    for j, t in enumerate(times):
        uj, vj = slab.sample_node_times(t - surface.phi)
        u[j] = uj
        ut[j] = vj
    return Trajectory(grid, times, u, ut, ds_out, meta=dict(slab.meta))


def solve_goursat(
    v: GridFunction,
    surface: CharacteristicSurface,
    metric: MetricField,
    op: FirstOrderOperator | None = None,
    config: SolverConfig | None = None,
    lambda_schedule=None,
    early_stop_tol: float = 1e-10,
    normal_derivative_zero: bool = False,
) -> GoursatResult:
    """Solve the characteristic problem ``u|_Sigma = v`` by the slowdown ladder.

    Each stage flattens the surface at its lambda, steps the slab system from
    s = 0 with data (v, 0) over the slab range needed to reconstruct the
    spacetime window covering the surface, and maps back.  Gaps between
    consecutive iterates are measured in H1 on a fixed foliation leaf; the
    ladder stops early when they fall below ``early_stop_tol`` and aborts
    with a warning when a stage would exceed the step budget (dt underflow).

    ``normal_derivative_zero`` switches the auxiliary slab datum from the
    default du/dt = 0 on the surface to zero slab-normal derivative
    (experimental knob; the characteristic limit does not depend on it).
    """
    grid = v.grid
    op = op or FirstOrderOperator.zero(grid)
    config = config or SolverConfig()
    if surface.classification not in (NULL, WEAKLY_SPACELIKE, SPACELIKE):
        raise SurfaceError(
            f"Goursat data surface must be null or weakly spacelike, got {surface.classification!r}"
        )
    schedule = list(lambda_schedule) if lambda_schedule is not None else list(DEFAULT_SCHEDULE)
    if any(not 0 < lam < 1 for lam in schedule):
        raise SurfaceError("lambda schedule must lie in (0, 1)")

    metric_used, op_used = metric, op
    if metric.regularity == "lipschitz":
        k = grid_tied_level(grid)
        metric_used, op_used = regularize_coefficients(metric, op, k)

    # regularized coefficients may push the surface slightly past null;
    # rescale the ladder so every stage keeps lam * g dphi dphi < 1
    q_max = _eikonal_sup(metric_used, surface)
    lam_scale = 1.0 if q_max <= 1.0 else 1.0 / q_max
    schedule = [lam * lam_scale for lam in schedule]

    plo, phi_hi = surface.phi_range
    pad = max(4.0 * 0.5 * grid.min_spacing, 0.05)
    t_window = (plo - pad, phi_hi + pad)
    s_window = (t_window[0] - phi_hi, t_window[1] - plo)

    gaps: list[float] = []
    diagnostics: list[dict] = []
    warnings: tuple[str, ...] = ()
    used: list[float] = []
    prev_probe = None
    best = None
    s_probe = 0.5 * (plo + phi_hi)

    # one ladder-wide dissipation weight (from the most degenerate stage), so
    # successive iterates differ only through lambda
    from .cauchy import slab_dissipation

    diss_ladder = slab_dissipation(flatten(metric_used, op_used, surface, schedule[-1]))
    nyq = (sum(4.0 / h**2 for h in grid.spacing)) ** 2

    for lam in schedule:
        tp = flatten(metric_used, op_used, surface, lam)
        builder, static = slab_coeff_builder(tp, diss_override=diss_ladder)
        speed = max(
            stable_speed(builder(s), grid)
            for s in ([0.0] if static else np.linspace(s_window[0], s_window[1], 5))
        )
        dt_max = config.cfl_fraction * grid.min_spacing / speed
        if diss_ladder > 0.0:
            dt_max = min(dt_max, 1.5 / (diss_ladder * nyq))
        est_steps = (s_window[1] - s_window[0]) / dt_max
        if est_steps > STAGE_STEP_BUDGET:
            warnings = warnings + (
                f"dt-underflow: stage lambda={lam} needs ~{est_steps:.2e} steps; "
                "returning best completed iterate",
            )
            break

        ut0 = np.zeros(grid.shape)
        if normal_derivative_zero:
            # zero slab-normal derivative: d_s u = -(cross/2a) . grad v
            from .grid import diff_values

            acc = np.zeros(grid.shape)
            for a in range(grid.dim):
                dv_a = diff_values(v.values, grid.spacing[a], a, "centered2")
                acc += tp.cross[a].values * 0.5 * dv_a
            ut0 = -acc / tp.a.values
        data = StateVector(
            GridFunction(grid, v.values.copy(), 0.0),
            GridFunction(grid, ut0, 0.0),
            0.0,
        )
        slab = advance_two_sided(
            data, s_window, dt_max, grid, builder, static, config,
            source=None, guard=None, meta={"lambda": lam},
        )
        used.append(lam)
        probe = slab.interpolate(s_probe).u.values
        gap = None
        if prev_probe is not None:
            gap = hk_norm(GridFunction(grid, probe - prev_probe), 1)
            gaps.append(float(gap))
        prev_probe = probe
        diagnostics.append(
            {
                "lambda": lam,
                "dt": slab.dt,
                "stored": len(slab.times),
                "gap": float(gap) if gap is not None else None,
            }
        )
        best = (slab, tp)
        if gap is not None and gap < early_stop_tol:
            break

    if best is None:
        raise SurfaceError("no ladder stage completed within the step budget")
    slab, tp = best
    ds = slab.times[1] - slab.times[0] if len(slab.times) > 1 else grid.min_spacing / 2
    traj = _map_slab_to_spacetime(slab, surface, t_window, float(ds))
    traj.meta.update({"lambda_last": used[-1], "surface_pad": pad})
    result = GoursatResult(
        trajectory=traj,
        lambda_schedule=used,
        successive_h1_gaps=gaps,
        roundtrip_l2=0.0,
        roundtrip_h1=0.0,
        warnings=warnings,
        diagnostics=diagnostics,
        slab_trajectory=slab,
    )
    rt = roundtrip_error(v, result, surface, metric)
    result.roundtrip_l2 = rt.l2
    result.roundtrip_h1 = rt.h1
    return result


def band_limited_data(grid: PeriodicGrid, rng: np.random.Generator, max_mode: int = 4):
    """Seeded random band-limited Cauchy data as closures (grid-independent)."""
    d = grid.dim
    if d == 1:
        coeffs = rng.standard_normal((2, max_mode, 2))

        def make(which):
            def f(x):
                out = np.zeros_like(x)
                for m in range(1, max_mode + 1):
                    amp = coeffs[which, m - 1]
                    out = out + (amp[0] * np.cos(m * x) + amp[1] * np.sin(m * x)) / m
                return out

            return f

        f0, f1 = make(0), make(1)
        (xs,) = grid.mesh()
        return GridFunction(grid, f0(xs)), GridFunction(grid, f1(xs))
    coeffs = rng.standard_normal((2, max_mode, max_mode, 2))

    def make2(which):
        def f(x, y):
            out = np.zeros_like(x)
            for mx in range(1, max_mode + 1):
                for my in range(1, max_mode + 1):
                    amp = coeffs[which, mx - 1, my - 1]
                    out = out + (
                        amp[0] * np.cos(mx * x + my * y) + amp[1] * np.sin(mx * x - my * y)
                    ) / (mx + my)
            return out

        return f

    f0, f1 = make2(0), make2(1)
    xs, ys = grid.mesh()
    return GridFunction(grid, f0(xs, ys)), GridFunction(grid, f1(xs, ys))


def estimate_trace_constants(
    metric: MetricField,
    op: FirstOrderOperator | None,
    surface: CharacteristicSurface,
    T: float,
    ensemble_size: int = 16,
    seed: int = 0,
    config: SolverConfig | None = None,
) -> tuple[float, float]:
    """Empirical two-sided constants of the trace map over a seeded ensemble.

    K2 is the largest ratio |trace|_{1,Sigma} / sup_t sqrt(E(t)) and K3 the
    largest inverse ratio.  Requires ``-T < min phi`` and ``T > max phi`` and
    at least 8 ensemble members.  On null surfaces the degenerate density
    kills the du/dt term of the trace norm automatically.
    """
    if ensemble_size < 8:
        raise ValueError("ensemble_size must be at least 8")
    plo, phi_hi = surface.phi_range
    if not (-T < plo and T > phi_hi):
        raise ValueError(
            f"window condition violated: need -T < min phi and T > max phi, "
            f"got T={T}, phi range [{plo:.4g}, {phi_hi:.4g}]"
        )
    grid = surface.grid
    op = op or FirstOrderOperator.zero(grid)
    config = config or SolverConfig()
    cfg = SolverConfig(config.cfl_fraction, config.store_every, config.scheme, (-T, T))
    rng = np.random.default_rng(seed)
    k2 = 0.0
    k3 = 0.0
    for _ in range(ensemble_size):
        u0, u1 = band_limited_data(grid, rng)
        data = StateVector(u0, u1, 0.0)
        traj = solve_cauchy(data, cfg, metric, op)
        sup_e = max(
            np.sqrt(energy(traj.state(i), metric)) for i in range(len(traj.times))
        )
        psi, psi_t = trace_state_on_surface(traj, surface)
        tn = np.sqrt(
            sigma_h1_norm(psi, surface, metric) ** 2
            + sigma_l2_dnu0(psi_t, surface, metric) ** 2
        )
        if sup_e > 1e-300:
            k2 = max(k2, tn / sup_e)
        if tn > 1e-300:
            k3 = max(k3, sup_e / tn)
    return float(k2), float(k3)


@dataclass
class FoliationTable:
    """Difference-quotient moduli of the foliation trace t -> u|_{Sigma_t}."""

    times: np.ndarray
    moduli: np.ndarray

    @property
    def max_modulus(self) -> float:
        return float(np.max(self.moduli)) if len(self.moduli) else 0.0

    def rows(self):
        return [
            (float(self.times[i]), float(self.times[i + 1]), float(self.moduli[i]))
            for i in range(len(self.moduli))
        ]


def foliation_continuity(
    traj: Trajectory, surface: CharacteristicSurface, times
) -> FoliationTable:
    """H1 difference quotients of ``v(t, x) = u(t + phi(x), x)`` over the
    given times (all shifted leaves must sit inside the trajectory window)."""
    times = np.asarray(list(times), dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two times")
    lo, hi = traj.window
    plo, phi_hi = surface.phi_range
    if times.min() + plo < lo - 1e-9 or times.max() + phi_hi > hi + 1e-9:
        raise TraceError("a shifted leaf exits the trajectory window")
    traces = [traj.sample_node_times(t + surface.phi)[0] for t in times]
    moduli = np.array(
        [
            hk_norm(GridFunction(traj.grid, traces[i + 1] - traces[i]), 1)
            / abs(times[i + 1] - times[i])
            for i in range(len(times) - 1)
        ]
    )
    return FoliationTable(times, moduli)
