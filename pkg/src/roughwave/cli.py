"""Command line front end.

Subcommands map one-to-one onto the harness experiments:

    roughwave cauchy             --catalog flat1d --grid 64,128 --T 1 --out out/
    roughwave goursat            --catalog flat1d --surface cone --grid 256
    roughwave mollify-check      --catalog lipschitz1d --grid 512
    roughwave convergence        --catalog flat1d --grid 64,128,256
    roughwave estimate-constants --catalog flat1d --surface cone --T 3.5

A flat KEY=VALUE config file can seed any run (--config); explicit flags
override it.  Exit status is nonzero iff a built-in assertion failed.
"""

from __future__ import annotations

import argparse
import sys

from .harness import ConfigError, ExperimentConfig, parse_config_file, run_experiment


def _parse_grids(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)


def _parse_schedule(text: str):
    text = text.replace(" ", "")
    if ":" in text:
        lo, hi = text.split(":")
        return tuple(1.0 - 2.0 ** (-k) for k in range(int(lo), int(hi) + 1))
    return tuple(float(tok) for tok in text.split(",") if tok)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat KEY=VALUE config file (flags override)")
    p.add_argument("--catalog", help="catalog problem name (default flat1d)")
    p.add_argument("--surface", help="surface name: cone, flatcone, slice (default cone)")
    p.add_argument("--grid", help="comma-separated ascending grid sizes, e.g. 64,128,256")
    p.add_argument("--T", type=float, help="time window half-length / horizon (default 1.0)")
    p.add_argument(
        "--lambda-schedule", dest="lambda_schedule",
        help="comma list of lambdas in (0,1), or K0:K1 for 1 - 2^-k, k=K0..K1",
    )
    p.add_argument("--seed", type=int, help="RNG seed; fixed seed gives byte-identical outputs")
    p.add_argument("--out", help="output directory (default out/)")
    p.add_argument("--cfl", type=float, help="CFL fraction in (0, 1] (default 0.5)")
    p.add_argument("--data", help="data spec: default, exact, constant, dalembert, cosine, bandlimited")
    p.add_argument("--ensemble", type=int, help="ensemble size for constants (default 16)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughwave",
        description="Desk-scale experiments on wave equations with rough coefficients.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, helptext in (
        ("cauchy", "solve from time-slice data and audit the energy estimate"),
        ("goursat", "solve from null-surface data by the slowdown ladder"),
        ("mollify-check", "mollification error and commutator-defect bounds"),
        ("convergence", "grid refinement study with observed orders"),
        ("estimate-constants", "empirical two-sided trace constants"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
    return parser


_CASTS = {
    "grids": _parse_grids,
    "grid": _parse_grids,
    "lambda_schedule": _parse_schedule,
    "T": float,
    "cfl": float,
    "seed": int,
    "ensemble": int,
    "figures": lambda s: s.lower() not in ("0", "false", "no"),
}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {"experiment": args.experiment}
    if args.config:
        for key, raw in parse_config_file(args.config).items():
            field = {"grid": "grids", "out": "out_dir"}.get(key, key)
            cast = _CASTS.get(field, str)
            values[field] = cast(raw)
    overrides = {
        "catalog": args.catalog,
        "surface": args.surface,
        "grids": _parse_grids(args.grid) if args.grid else None,
        "T": args.T,
        "lambda_schedule": _parse_schedule(args.lambda_schedule) if args.lambda_schedule else None,
        "seed": args.seed,
        "out_dir": args.out,
        "cfl": args.cfl,
        "data": args.data,
        "ensemble": args.ensemble,
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    if args.no_figures:
        values["figures"] = False
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        status = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{cfg.experiment}: {'ok' if status == 0 else 'ASSERTION FAILED'} "
          f"(outputs in {cfg.out_dir})")
    return status


if __name__ == "__main__":
    sys.exit(main())
