"""Experiment harness: configuration, the five experiments behind the CLI
subcommands, Richardson-style convergence studies, and artifact emission.

Every experiment writes ``manifest.json`` plus delimited tables (and figures
unless disabled) into its output directory and returns a nonzero exit status
iff one of its built-in assertions fails.  Fixed seeds give byte-identical
outputs.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from . import report
from .cauchy import SolverConfig, StateVector, energy_monitor, solve_cauchy
from .fields import CATALOG_NAMES, CatalogProblem, catalog
from .goursat import (
    band_limited_data,
    estimate_trace_constants,
    solve_goursat,
    trace_on_surface,
)
from .grid import GridFunction, PeriodicGrid
from .mollify import commutator_bound, commutator_defect, mollify_space
from .norms import hk_norm
from .surface import SURFACE_NAMES, make_surface

EXPERIMENTS = ("cauchy", "goursat", "mollify-check", "convergence", "estimate-constants")


class ConfigError(ValueError):
    """Raised for invalid experiment configurations."""


@dataclass
class ExperimentConfig:
    experiment: str
    catalog: str = "flat1d"
    surface: str = "cone"
    grids: tuple[int, ...] = (64, 128)
    T: float = 1.0
    lambda_schedule: tuple[float, ...] | None = None
    seed: int = 0
    out_dir: str = "out"
    cfl: float = 0.5
    data: str = "default"
    ensemble: int = 16
    figures: bool = True

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; options {EXPERIMENTS}")
        if self.catalog not in CATALOG_NAMES:
            raise ConfigError(f"unknown catalog {self.catalog!r}; options {CATALOG_NAMES}")
        if self.surface not in SURFACE_NAMES:
            raise ConfigError(f"unknown surface {self.surface!r}; options {SURFACE_NAMES}")
        self.grids = tuple(int(n) for n in self.grids)
        if not self.grids or any(n < 8 for n in self.grids):
            raise ConfigError(f"bad grid list {self.grids}")
        if list(self.grids) != sorted(self.grids):
            raise ConfigError("grid sizes must be ascending")
        if self.T <= 0:
            raise ConfigError("T must be positive")


def parse_config_file(path: str) -> dict:
    """Flat KEY=VALUE text file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = val
    return out


def _make_grid(name: str, n: int) -> PeriodicGrid:
    return PeriodicGrid((n, n)) if name == "flat2d" else PeriodicGrid(n)


def _initial_data(prob: CatalogProblem, grid: PeriodicGrid, spec: str, seed: int):
    if spec in ("default", "exact") and prob.exact is not None:
        return prob.exact.state(grid, 0.0)
    rng = np.random.default_rng(seed)
    u0, u1 = band_limited_data(grid, rng)
    return StateVector(u0, u1, 0.0)


def _surface_data(grid: PeriodicGrid, surface, spec: str, seed: int) -> GridFunction:
    if spec == "constant":
        return GridFunction.constant(grid, 1.0)
    if spec == "dalembert":
        if grid.dim != 1:
            raise ConfigError("dalembert data is 1d only")
        (xs,) = grid.mesh()
        F = lambda z: 0.4 * np.sin(z)
        G = lambda z: 0.3 * np.cos(z) + 0.2 * np.sin(2 * z)
        L = grid.lengths[0]
        vals = np.where(
            xs <= L / 2, F(0.0) + G(2 * xs), F(2 * xs - 2 * np.pi) + G(2 * np.pi)
        )
        return GridFunction(grid, vals)
    if spec == "bandlimited":
        rng = np.random.default_rng(seed)
        u0, _ = band_limited_data(grid, rng)
        return u0
    # default: a smooth one-mode profile
    mesh = grid.mesh()
    vals = np.cos(mesh[0])
    for extra in mesh[1:]:
        vals = vals * np.cos(extra)
    return GridFunction(grid, vals)


def dalembert_exact(grid: PeriodicGrid):
    """Closed-form solution matching the 'dalembert' cone data on flat1d."""
    F = lambda z: 0.4 * np.sin(z)
    G = lambda z: 0.3 * np.cos(z) + 0.2 * np.sin(2 * z)

    def u(t, x):
        return F(x - t) + G(x + t)

    return u


def _assert(assertions: list, name: str, passed: bool, detail: str) -> None:
    assertions.append({"name": name, "passed": bool(passed), "detail": detail})


def observed_orders(errors: list[float]) -> list[float]:
    return [
        float(np.log2(errors[i] / errors[i + 1])) if errors[i + 1] > 0 else float("inf")
        for i in range(len(errors) - 1)
    ]


# ---------------------------------------------------------------------------
# experiments


def _run_cauchy(cfg: ExperimentConfig, out: str):
    prob_tpl = catalog(cfg.catalog)
    assertions: list[dict] = []
    rows = []
    series = {}
    results = {"k1": {}, "max_violation": {}, "final_l2_error": {}}
    errors = []
    for n in cfg.grids:
        grid = _make_grid(cfg.catalog, n)
        prob = catalog(cfg.catalog, grid)
        data = _initial_data(prob, grid, cfg.data, cfg.seed)
        config = SolverConfig(cfl_fraction=cfg.cfl, window=(0.0, cfg.T))
        traj = solve_cauchy(data, config, prob.metric, prob.op)
        rep = energy_monitor(traj, prob.metric, prob.op)
        series[n] = (traj.times, rep.energies, rep.bound_curve)
        for t, e, b, m in zip(rep.times, rep.energies, rep.bound_curve, rep.margins):
            rows.append((n, t, e, b, m))
        results["k1"][str(n)] = rep.k1
        results["max_violation"][str(n)] = rep.max_violation
        _assert(
            assertions,
            f"energy-estimate-N{n}",
            rep.max_violation >= -0.05,
            f"max_violation={rep.max_violation:.3e}",
        )
        if prob.exact is not None:
            end = traj.interpolate(cfg.T)
            ref = prob.exact.state(grid, cfg.T)
            err = hk_norm(GridFunction(grid, end.u.values - ref.u.values), 0)
            errors.append(err)
            results["final_l2_error"][str(n)] = err
    if len(errors) >= 2:
        orders = observed_orders(errors)
        results["observed_orders"] = orders
        lo = 0.8 if cfg.catalog == "lipschitz1d" else 1.6
        hi = np.inf if cfg.catalog == "lipschitz1d" else 2.4
        _assert(
            assertions,
            "convergence-order",
            all(lo <= p <= hi for p in orders),
            f"orders={['%.2f' % p for p in orders]}",
        )
    report.write_csv(
        os.path.join(out, "energy.csv"), "energy-report v1",
        ["N", "t", "energy", "bound", "margin"], rows,
    )
    if cfg.figures:
        report.energy_figure(os.path.join(out, "energy.png"), series)
    return results, assertions


def _run_goursat(cfg: ExperimentConfig, out: str):
    assertions: list[dict] = []
    results = {"roundtrip_l2": {}, "roundtrip_h1": {}, "gaps": {}, "lambda_schedule": None}
    data_spec = cfg.data
    if data_spec == "default":
        data_spec = "dalembert" if (cfg.catalog == "flat1d" and cfg.surface == "cone") else "cosine"
    results["k1"] = {}
    results["max_violation"] = {}
    last = None
    for n in cfg.grids:
        grid = _make_grid(cfg.catalog, n)
        prob = catalog(cfg.catalog, grid)
        surf = make_surface(cfg.surface, grid, prob.metric)
        v = _surface_data(grid, surf, data_spec, cfg.seed)
        config = SolverConfig(cfl_fraction=cfg.cfl)
        result = solve_goursat(
            v, surf, prob.metric, prob.op, config, cfg.lambda_schedule
        )
        results["roundtrip_l2"][str(n)] = result.roundtrip_l2
        results["roundtrip_h1"][str(n)] = result.roundtrip_h1
        results["gaps"][str(n)] = result.successive_h1_gaps
        results["lambda_schedule"] = result.lambda_schedule
        rep = energy_monitor(result.trajectory, prob.metric, prob.op)
        results["k1"][str(n)] = rep.k1
        results["max_violation"][str(n)] = rep.max_violation
        for w in result.warnings:
            _assert(assertions, f"warning-N{n}", False, w)
        last = (grid, prob, surf, v, result)
    n = cfg.grids[-1]
    grid, prob, surf, v, result = last
    tol = 1e-10 if data_spec == "constant" else 0.1
    _assert(
        assertions,
        "roundtrip",
        results["roundtrip_l2"][str(n)] < tol,
        f"roundtrip_l2={results['roundtrip_l2'][str(n)]:.3e} (tol {tol:g})",
    )
    gaps = result.successive_h1_gaps
    if len(gaps) >= 2:
        _assert(
            assertions,
            "ladder-gaps-decreasing-tail",
            gaps[-1] <= gaps[-2] * 1.1 + 1e-14,
            f"last gaps {gaps[-2]:.3e} -> {gaps[-1]:.3e}",
        )
    try:
        k2, k3 = estimate_trace_constants(
            prob.metric, prob.op, surf, T=float(np.max(surf.phi)) + 0.3,
            ensemble_size=max(8, cfg.ensemble // 2), seed=cfg.seed,
        )
        results["k2_est"], results["k3_est"] = k2, k3
        _assert(assertions, "trace-constants-finite", np.isfinite(k2) and np.isfinite(k3),
                f"k2={k2:.3g} k3={k3:.3g}")
    except ValueError as exc:
        _assert(assertions, "trace-constants", False, str(exc))

    trace = trace_on_surface(result.trajectory, surf)
    xs = grid.axis_coords(0) if grid.dim == 1 else np.arange(grid.num_nodes)
    res = surf.residual if surf.residual is not None else np.zeros(grid.shape)
    rows = [
        (x, p, r, int(k), dv, tv)
        for x, p, r, k, dv, tv in zip(
            np.ravel(xs), np.ravel(surf.phi), np.ravel(res),
            np.ravel(surf.kink_mask), np.ravel(v.values), np.ravel(trace.values),
        )
    ]
    report.write_csv(
        os.path.join(out, "trace.csv"), "goursat-trace v1",
        ["x", "phi", "residual", "kink_flag", "data", "trace"], rows,
    )
    stride = max(1, len(result.trajectory.times) // 256)
    result.trajectory.to_csv(os.path.join(out, "solution.csv"), stride=stride)
    if cfg.figures and grid.dim == 1:
        report.goursat_figure(
            os.path.join(out, "goursat.png"), xs, v.values, trace.values,
            result.lambda_schedule, result.successive_h1_gaps,
        )
    return results, assertions


def _run_mollify(cfg: ExperimentConfig, out: str):
    assertions: list[dict] = []
    n = cfg.grids[-1]
    grid = _make_grid(cfg.catalog, n)
    prob = catalog(cfg.catalog, grid)
    (xs,) = grid.mesh() if grid.dim == 1 else (grid.mesh()[0],)
    # rough test field: triangle wave (Lipschitz, kinked)
    L = grid.lengths[0]
    tri = np.abs(((xs / L + 0.25) % 1.0) - 0.5) * 4.0 - 1.0
    w = GridFunction(grid, tri)
    ks = (2, 4, 8, 16, 32)
    rows = []
    h1_errors, comm_norms, bounds = [], [], []
    for k in ks:
        wk = mollify_space(w, k)
        h1_err = hk_norm(GridFunction(grid, wk.values - w.values), 1)
        field_, norm = commutator_defect(prob.metric, w, k)
        bound = commutator_bound(prob.metric, w, k)
        h1_errors.append(h1_err)
        comm_norms.append(norm)
        bounds.append(bound)
        rows.append((k, h1_err, norm, bound))
        _assert(
            assertions, f"commutator-bound-k{k}", norm <= bound * (1 + 1e-9),
            f"norm={norm:.3e} bound={bound:.3e}",
        )
    decreasing = all(h1_errors[i + 1] < h1_errors[i] for i in range(len(ks) - 1))
    _assert(assertions, "h1-error-decreasing", decreasing,
            " -> ".join(f"{e:.3e}" for e in h1_errors))
    report.write_csv(
        os.path.join(out, "mollify.csv"), "mollify-check v1",
        ["k", "h1_error", "commutator_norm", "bound"], rows,
    )
    if cfg.figures:
        report.mollify_figure(os.path.join(out, "mollify.png"), ks, h1_errors,
                              comm_norms, bounds)
    results = {
        "ks": list(ks),
        "h1_errors": h1_errors,
        "commutator_norms": comm_norms,
        "bounds": bounds,
    }
    return results, assertions


def convergence_study(cfg: ExperimentConfig, out: str | None = None):
    """Observed orders for the Cauchy solve over at least three grids.

    Exact-solution catalogs measure against the closed form; the others
    against a one-level-finer reference run.  Non-monotone error sequences
    are flagged unreliable; identically-zero errors are flagged exact.
    """
    if len(cfg.grids) < 3:
        raise ConfigError("convergence study needs at least 3 grid sizes")
    errors = []
    monitors = {}
    for n in cfg.grids:
        grid = _make_grid(cfg.catalog, n)
        prob = catalog(cfg.catalog, grid)
        data = _initial_data(prob, grid, cfg.data, cfg.seed)
        config = SolverConfig(cfl_fraction=cfg.cfl, window=(0.0, cfg.T))
        traj = solve_cauchy(data, config, prob.metric, prob.op)
        rep = energy_monitor(traj, prob.metric, prob.op)
        monitors[str(n)] = {"k1": rep.k1, "max_violation": rep.max_violation}
        end = traj.interpolate(cfg.T)
        if prob.exact is not None:
            ref_vals = prob.exact.state(grid, cfg.T).u.values
        else:
            fine_n = 2 * cfg.grids[-1]
            if fine_n % n != 0:
                raise ConfigError(
                    f"grid {n} does not divide the reference grid {fine_n}"
                )
            fine = _reference_solution(cfg, fine_n, cfg.T)
            step = fine_n // n
            ref_vals = fine[::step] if grid.dim == 1 else fine[::step, ::step]
        errors.append(hk_norm(GridFunction(grid, end.u.values - ref_vals), 0))
    flags = []
    if all(e == 0 for e in errors):
        flags.append("exact")
        orders = [float("inf")] * (len(errors) - 1)
    else:
        orders = observed_orders(errors)
        if any(errors[i + 1] >= errors[i] for i in range(len(errors) - 1)):
            flags.append("unreliable")
    return errors, orders, flags, monitors


_REF_CACHE: dict = {}


def _reference_solution(cfg: ExperimentConfig, fine_n: int, t_end: float):
    key = (cfg.catalog, fine_n, cfg.data, cfg.seed, round(t_end, 12), cfg.cfl)
    if key in _REF_CACHE:
        return _REF_CACHE[key]
    grid = _make_grid(cfg.catalog, fine_n)
    prob = catalog(cfg.catalog, grid)
    data = _initial_data(prob, grid, cfg.data, cfg.seed)
    config = SolverConfig(cfl_fraction=cfg.cfl, window=(0.0, t_end))
    traj = solve_cauchy(data, config, prob.metric, prob.op)
    vals = traj.interpolate(t_end).u.values
    _REF_CACHE[key] = vals
    return vals


def _run_convergence(cfg: ExperimentConfig, out: str):
    assertions: list[dict] = []
    errors, orders, flags, monitors = convergence_study(cfg)
    rows = []
    for i, n in enumerate(cfg.grids):
        rows.append((n, errors[i], orders[i - 1] if i > 0 else float("nan"),
                     ";".join(flags) if flags else "ok"))
    report.write_csv(
        os.path.join(out, "rates.csv"), "rates v1",
        ["N", "error", "order", "flag"], rows,
    )
    results = {"errors": errors, "orders": orders, "flags": flags,
               "k1": {k: m["k1"] for k, m in monitors.items()},
               "max_violation": {k: m["max_violation"] for k, m in monitors.items()}}
    if "exact" not in flags:
        lo = 0.8 if cfg.catalog == "lipschitz1d" else 1.8
        hi = np.inf if cfg.catalog == "lipschitz1d" else 2.2
        stable = all(lo <= p <= hi for p in orders)
        _assert(assertions, "order-in-range", stable and "unreliable" not in flags,
                f"orders={['%.2f' % p for p in orders]} flags={flags}")
    if cfg.figures:
        report.rates_figure(os.path.join(out, "rates.png"),
                            {cfg.catalog: (list(cfg.grids), errors)})
    return results, assertions


def _run_constants(cfg: ExperimentConfig, out: str):
    assertions: list[dict] = []
    results = {"k2": {}, "k3": {}}
    k2s, k3s = [], []
    for n in cfg.grids:
        grid = _make_grid(cfg.catalog, n)
        prob = catalog(cfg.catalog, grid)
        surf = make_surface(cfg.surface, grid, prob.metric)
        if cfg.T <= float(np.max(surf.phi)):
            raise ConfigError(
                f"window T={cfg.T} violates T > max phi = {float(np.max(surf.phi)):.4g}"
            )
        k2, k3 = estimate_trace_constants(
            prob.metric, prob.op, surf, cfg.T, ensemble_size=cfg.ensemble, seed=cfg.seed,
        )
        results["k2"][str(n)] = k2
        results["k3"][str(n)] = k3
        k2s.append(k2)
        k3s.append(k3)
        _assert(assertions, f"finite-N{n}", np.isfinite(k2) and np.isfinite(k3),
                f"k2={k2:.4g} k3={k3:.4g}")
    for i in range(len(cfg.grids) - 1):
        for name, vals in (("k2", k2s), ("k3", k3s)):
            drift = abs(vals[i + 1] - vals[i]) / max(vals[i], 1e-300)
            _assert(
                assertions,
                f"{name}-drift-{cfg.grids[i]}-{cfg.grids[i + 1]}",
                drift < 0.2,
                f"drift={drift:.3f}",
            )
    report.write_csv(
        os.path.join(out, "constants.csv"), "trace-constants v1",
        ["N", "k2", "k3"], list(zip(cfg.grids, k2s, k3s)),
    )
    if cfg.figures:
        report.constants_figure(os.path.join(out, "constants.png"),
                                list(cfg.grids), k2s, k3s)
    return results, assertions


_RUNNERS = {
    "cauchy": _run_cauchy,
    "goursat": _run_goursat,
    "mollify-check": _run_mollify,
    "convergence": _run_convergence,
    "estimate-constants": _run_constants,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment; writes manifest + tables (+ figures) into
    ``cfg.out_dir`` and returns 0 iff every built-in assertion passed."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    results, assertions = _RUNNERS[cfg.experiment](cfg, cfg.out_dir)
    passed = all(a["passed"] for a in assertions)
    manifest = {
        "experiment": cfg.experiment,
        "config": asdict(cfg),
        "results": results,
        "assertions": assertions,
        "pass": passed,
    }
    report.write_manifest(os.path.join(cfg.out_dir, "manifest.json"), manifest)
    return 0 if passed else 1
