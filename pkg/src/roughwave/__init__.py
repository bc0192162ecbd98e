"""roughwave: a desk-scale numerical laboratory for wave equations with rough
coefficients on flat periodic tori.

Pieces: periodic grids and quadrature (:mod:`grid`), time-dependent metrics
and the divergence-form d'Alembertian (:mod:`fields`), energies and the
explicit exponential-estimate constant (:mod:`norms`), mollification and its
commutator bound (:mod:`mollify`), Lipschitz data surfaces and the slab
flattening (:mod:`surface`), the Cauchy solver (:mod:`cauchy`), the
characteristic solver and trace machinery (:mod:`goursat`), and the CLI
experiment harness (:mod:`harness`, :mod:`cli`).
"""

from .cauchy import (
    DerivedSystemTrajectory,
    InstabilityError,
    SolverConfig,
    StateVector,
    Trajectory,
    energy_monitor,
    max_stable_dt,
    solve_cauchy,
    solve_derived_system,
)
from .fields import (
    CatalogProblem,
    ExactSolution,
    FirstOrderOperator,
    MetricField,
    apply_first_order,
    catalog,
    dalembertian_spatial,
    to_nondivergence_form,
    validate_ellipticity,
)
from .goursat import (
    FoliationTable,
    GoursatResult,
    RoundtripError,
    band_limited_data,
    estimate_trace_constants,
    foliation_continuity,
    roundtrip_error,
    solve_goursat,
    trace_on_surface,
)
from .grid import GridFunction, PeriodicGrid, convolve_periodic, diff, integrate
from .mollify import (
    Mollifier,
    commutator_bound,
    commutator_defect,
    mollify_space,
    regularize_coefficients,
)
from .norms import EnergyReport, energy, energy_phi, hk_norm, k1_bound, sigma_h1_norm, sigma_l2_dnu0
from .surface import (
    CharacteristicSurface,
    TransformedProblem,
    classify,
    dnu0_density,
    eikonal_residual,
    flatten,
    foliation_slice,
    make_surface,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
