"""Command-line interface: run, sweep, check, fit, version."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .harness import (
    METRICS,
    SweepSpec,
    load_config,
    refit_sweep,
    run_checks,
    run_scenario,
    run_sweep,
)
from .model import VariantFlags


def _apply_overrides(cfg, args):
    flags = cfg.variant_flags
    if getattr(args, "variant", None) == "inhomogeneity-at-X":
        flags = VariantFlags(inhomogeneity_at_X=True, m_tracers=flags.m_tracers)
    if getattr(args, "tracers", None):
        flags = VariantFlags(
            inhomogeneity_at_X=flags.inhomogeneity_at_X, m_tracers=args.tracers
        )
    cfg = replace(cfg, variant_flags=flags)
    if getattr(args, "stride", None):
        cfg = replace(cfg, stride=args.stride)
    return cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_scenario(cfg, args.out)
    final = result.summary["final"]
    flags = result.summary["flags"]
    print(f"wrote {result.out_dir}")
    print(f"  micro_ran={flags['micro_ran']}  aborted={flags['validity_abort']}")
    print(
        "  final: "
        + ", ".join(
            f"{k}={v:.6g}" for k, v in final.items() if isinstance(v, float)
        )
    )
    return 0


def _cmd_sweep(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    spec = SweepSpec(
        base=base,
        axis=args.axis,
        values=tuple(float(v) for v in args.values),
        derived_rule=args.rule,
        outputs=args.out,
    )
    result = run_sweep(
        spec, args.metrics, parallel=args.parallel, t_compare=args.t_compare
    )
    for metric, fit in result["fits"].items():
        print(
            f"{metric}: exponent {fit.exponent:+.4f}  r^2 {fit.r_squared:.4f}"
            + ("  [flagged]" if fit.flagged else "")
        )
    return 0


def _cmd_check(args) -> int:
    results = run_checks(verbose=True)
    failed = [name for name, ok, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_fit(args) -> int:
    result = refit_sweep(args.sweep_dir, args.metrics, t_compare=args.t_compare)
    out = {
        "t_compare": result["t_compare"],
        "fits": {k: v.to_dict() for k, v in result["fits"].items()},
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_version(args) -> int:
    print(__version__)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tracergas",
        description="Tracer particle in an ideal Bose gas: microscopic vs "
        "effective dynamics with quantitative diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single scenario")
    run_p.add_argument("--config", required=True, type=Path)
    run_p.add_argument("--out", required=True, type=Path)
    run_p.add_argument("--stride", type=int, default=None)
    run_p.add_argument("--variant", choices=["inhomogeneity-at-X"], default=None)
    run_p.add_argument("--tracers", type=int, default=None, metavar="M")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a parameter sweep and fit exponents")
    sweep_p.add_argument("--config", required=True, type=Path)
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument("--axis", required=True, choices=["rho", "lambda_vol", "dt", "n"])
    sweep_p.add_argument("--values", required=True, nargs="+")
    sweep_p.add_argument("--rule", default="fix_N", choices=["fix_N", "fix_lambda", "fix_rho"])
    sweep_p.add_argument("--metrics", nargs="+", default=["alpha0_total"], choices=sorted(METRICS))
    sweep_p.add_argument("--parallel", type=int, default=0, metavar="K")
    sweep_p.add_argument("--t-compare", type=float, default=None)
    sweep_p.add_argument("--stride", type=int, default=None)
    sweep_p.add_argument("--variant", choices=["inhomogeneity-at-X"], default=None)
    sweep_p.add_argument("--tracers", type=int, default=None, metavar="M")
    sweep_p.set_defaults(func=_cmd_sweep)

    check_p = sub.add_parser("check", help="run the fast invariant suite")
    check_p.set_defaults(func=_cmd_check)

    fit_p = sub.add_parser("fit", help="re-fit metrics from an existing sweep output")
    fit_p.add_argument("sweep_dir")
    fit_p.add_argument("--metrics", nargs="+", default=["alpha0_total"], choices=sorted(METRICS))
    fit_p.add_argument("--t-compare", type=float, default=None)
    fit_p.set_defaults(func=_cmd_fit)

    ver_p = sub.add_parser("version", help="print the package version")
    ver_p.set_defaults(func=_cmd_version)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
