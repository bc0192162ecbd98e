"""Delimited output and figure rendering for the experiment harness.

CSV schemas are versioned with a leading comment line; floats are written
with repr-faithful precision so fixed seeds give byte-identical files.
Figures are rendered with the Agg backend and stripped of run-dependent
metadata for the same reason.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path: str, version_tag: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {version_tag}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_figure(fig, path: str) -> None:
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def energy_figure(path: str, series: dict) -> None:
    """series: N -> (times, energies, bounds)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for n, (ts, es, bs) in sorted(series.items()):
        ax.plot(ts, es, label=f"E(t), N={n}")
        ax.plot(ts, bs, "--", lw=0.9, label=f"bound, N={n}")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("energy vs exponential estimate")
    fig.tight_layout()
    save_figure(fig, path)


def goursat_figure(path: str, xs, data_v, trace_v, lambdas, gaps) -> None:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax0.plot(xs, data_v, label="surface data v")
    ax0.plot(xs, trace_v, "--", label="trace of solution")
    ax0.set_xlabel("x")
    ax0.legend(fontsize=8)
    ax0.set_title("round trip on the data surface")
    if gaps:
        ax1.semilogy(lambdas[1:], gaps, "o-")
    ax1.set_xlabel("lambda")
    ax1.set_ylabel("H1 gap between iterates")
    ax1.set_title("slowdown ladder")
    fig.tight_layout()
    save_figure(fig, path)


def mollify_figure(path: str, ks, h1_errors, comm_norms, bounds) -> None:
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax0.loglog(ks, h1_errors, "o-")
    ax0.set_xlabel("level k")
    ax0.set_ylabel("H1 mollification error")
    ax1.loglog(ks, comm_norms, "o-", label="commutator L2")
    ax1.loglog(ks, bounds, "s--", label="bound")
    ax1.set_xlabel("level k")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    save_figure(fig, path)


def rates_figure(path: str, table: dict) -> None:
    """table: quantity -> (Ns, errors)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, (ns, errs) in sorted(table.items()):
        ax.loglog(ns, errs, "o-", label=name)
    ax.set_xlabel("N")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    ax.set_title("grid refinement")
    fig.tight_layout()
    save_figure(fig, path)


def constants_figure(path: str, ns, k2s, k3s) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(ns, k2s, "o-", label="K2 estimate")
    ax.plot(ns, k3s, "s-", label="K3 estimate")
    ax.set_xlabel("N")
    ax.legend(fontsize=8)
    ax.set_title("trace constants under refinement")
    fig.tight_layout()
    save_figure(fig, path)
