"""Hot time-stepping loops for the 1d constant-coefficient case.

The generic numpy path in :mod:`roughwave.cauchy` handles every problem; the
jitted loop here covers the case that dominates run time (1d, coefficients
independent of the evolution time, no source), which includes every Goursat
ladder stage on time-independent metrics.  Operation order matches the numpy
reference so the two paths agree to rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GUARD_CAP = 1e12


@njit(cache=True, inline="always")
def _rhs_1d(u, v, inv_a, w, have_cross, wf, b0, b1, c0, have_lower, diss,
            gamma, inv_gamma, inv2h, invh2, scratch, du, dv):
    n = u.shape[0]
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        acc = (wf[i] * (u[ip] - u[i]) - wf[im] * (u[i] - u[im])) * invh2 * inv_gamma[i]
        if have_cross:
            dcv = (v[ip] - v[im]) * inv2h
            dcwv = (gamma[ip] * w[ip] * v[ip] - gamma[im] * w[im] * v[im]) * inv2h * inv_gamma[i]
            acc -= w[i] * dcv + dcwv
        if have_lower:
            dcu = (u[ip] - u[im]) * inv2h
            acc -= b0[i] * v[i] + b1[i] * dcu + c0[i] * u[i]
        du[i] = v[i]
        dv[i] = inv_a[i] * acc
    if diss != 0.0:
        _apply_dissipation(u, diss, invh2, scratch, du)
        _apply_dissipation(v, diss, invh2, scratch, dv)


@njit(cache=True, inline="always")
def _apply_dissipation(field, diss, invh2, scratch, out):
    n = field.shape[0]
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        scratch[i] = (field[ip] - 2.0 * field[i] + field[im]) * invh2
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        out[i] -= diss * (scratch[ip] - 2.0 * scratch[i] + scratch[im]) * invh2


@njit(cache=True)
def advance_rk4_1d(u, v, nsteps, dt, inv_a, w, have_cross, wf, b0, b1, c0,
                   have_lower, diss, gamma, inv_gamma, h, store_every, out_u,
                   out_v, guard_every):
    """Advance (u, v) in place by nsteps of RK4, storing every store_every
    steps into out_u/out_v (slot 0 holds the initial state).  Returns the
    number of stored slots, or -(step+1) if the finiteness guard tripped."""
    n = u.shape[0]
    inv2h = 1.0 / (2.0 * h)
    invh2 = 1.0 / (h * h)
    k1u = np.empty(n); k1v = np.empty(n)
    k2u = np.empty(n); k2v = np.empty(n)
    k3u = np.empty(n); k3v = np.empty(n)
    k4u = np.empty(n); k4v = np.empty(n)
    tu = np.empty(n); tv = np.empty(n)
    scratch = np.empty(n)
    out_u[0] = u
    out_v[0] = v
    stored = 1
    for step in range(nsteps):
        _rhs_1d(u, v, inv_a, w, have_cross, wf, b0, b1, c0, have_lower, diss,
                gamma, inv_gamma, inv2h, invh2, scratch, k1u, k1v)
        for i in range(n):
            tu[i] = u[i] + 0.5 * dt * k1u[i]
            tv[i] = v[i] + 0.5 * dt * k1v[i]
        _rhs_1d(tu, tv, inv_a, w, have_cross, wf, b0, b1, c0, have_lower, diss,
                gamma, inv_gamma, inv2h, invh2, scratch, k2u, k2v)
        for i in range(n):
            tu[i] = u[i] + 0.5 * dt * k2u[i]
            tv[i] = v[i] + 0.5 * dt * k2v[i]
        _rhs_1d(tu, tv, inv_a, w, have_cross, wf, b0, b1, c0, have_lower, diss,
                gamma, inv_gamma, inv2h, invh2, scratch, k3u, k3v)
        for i in range(n):
            tu[i] = u[i] + dt * k3u[i]
            tv[i] = v[i] + dt * k3v[i]
        _rhs_1d(tu, tv, inv_a, w, have_cross, wf, b0, b1, c0, have_lower, diss,
                gamma, inv_gamma, inv2h, invh2, scratch, k4u, k4v)
        for i in range(n):
            u[i] = u[i] + dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i])
            v[i] = v[i] + dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
        if (step + 1) % guard_every == 0:
            peak = 0.0
            for i in range(n):
                au = abs(u[i])
                if au > peak:
                    peak = au
            if not np.isfinite(peak) or peak > GUARD_CAP:
                return -(step + 1)
        if (step + 1) % store_every == 0:
            out_u[stored] = u
            out_v[stored] = v
            stored += 1
    return stored
