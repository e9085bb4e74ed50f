"""Command line front end for the study recipes.

Exit codes: 0 on success, 2 for configuration problems (including argparse
usage errors), 3 when the nonlinear solver fails to converge or degenerates,
4 for filesystem problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import (
    ConfigError,
    RunConfig,
    default_config,
    parse_config,
    serialize_config,
)
from .experiments import (
    delta_convergence_study,
    export_field,
    h_convergence_study,
    profile_csv,
    single_run_study,
    wavefront_study,
)
from .newmark import NonconvergenceError
from .operators import NondegeneracyError

_KIND_BY_COMMAND = {
    "h-convergence": "h_convergence",
    "delta-convergence": "delta_convergence",
    "wavefront": "wavefront",
    "run": None,  # kind comes from the config file (default: h_convergence)
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="westervelt-hdg",
        description="HDG studies for the Westervelt equation on the unit "
                    "square: mesh refinement, damping sweep, wavefront "
                    "steepening, or a single monitored run.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "h-convergence": "manufactured-solution refinement study",
        "delta-convergence": "sweep of the damping parameter against the "
                             "undamped solution",
        "wavefront": "nonlinear steepening run compared with its linear twin",
        "run": "single run with energy monitoring (kind set by the config)",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="INI-style configuration file; omitted keys fall "
                            "back to the recipe defaults")
        p.add_argument("--p", type=int, default=None, dest="degree",
                       help="polynomial degree override")
        p.add_argument("--levels", type=str, default=None,
                       help="comma separated mesh subdivisions, e.g. 4,8,16")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory override")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    kind = _KIND_BY_COMMAND[args.command]
    base = default_config(kind if kind is not None else "h_convergence")
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        # the run command takes its kind (and defaults) from the file itself
        cfg = parse_config(text, base=base if kind is not None else None)
        if kind is not None and cfg.kind != kind:
            raise ConfigError(
                f"config kind {cfg.kind!r} conflicts with the "
                f"{args.command!r} command")
    else:
        cfg = base
    updates = {}
    if args.degree is not None:
        updates["degree"] = args.degree
    if args.levels is not None:
        try:
            updates["levels"] = tuple(
                int(tok) for tok in args.levels.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"bad --levels value {args.levels!r}") from exc
    if args.out is not None:
        updates["output_dir"] = str(args.out)
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    cfg.validate()
    return cfg


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
    return out


def _run_h_convergence(cfg: RunConfig) -> None:
    report = h_convergence_study(cfg)
    out = _prepare_output(cfg)
    path = out / f"h_convergence_p{cfg.degree}.csv"
    path.write_text(report.to_csv(), encoding="utf-8")
    print(f"wrote {path}")
    for i, lv in enumerate(report.levels):
        tail = ""
        if i > 0:
            tail = (f"  rate_psi={report.rates_psi[i-1]:.3f}"
                    f"  rate_v={report.rates_v[i-1]:.3f}"
                    f"  rate_psistar={report.rates_star[i-1]:.3f}")
        print(f"n={lv.n:<4d} h={lv.h:.4e} dt={lv.dt:.4e} "
              f"err_psi={lv.err_psi:.6e} err_v={lv.err_v:.6e} "
              f"err_psistar={lv.err_star:.6e}{tail}")


def _run_delta_convergence(cfg: RunConfig) -> None:
    report = delta_convergence_study(cfg)
    out = _prepare_output(cfg)
    path = out / f"delta_convergence_p{cfg.degree}.csv"
    path.write_text(report.to_csv(), encoding="utf-8")
    print(f"wrote {path}")
    for lv in report.levels:
        print(f"delta={lv.delta:.1e} err_psi={lv.err_psi:.6e} "
              f"err_v={lv.err_v:.6e}")
    print(f"fitted slopes: psi={report.slope_psi:.3f} v={report.slope_v:.3f}")


def _run_wavefront(cfg: RunConfig) -> None:
    result = wavefront_study(cfg)
    out = _prepare_output(cfg)
    path = out / "wavefront_profile.csv"
    path.write_text(profile_csv(result), encoding="utf-8")
    print(f"wrote {path}")
    for (variant, t), fld in sorted(result.snapshots.items()):
        snap = out / f"wavefront_{variant}_t{t:g}.csv"
        export_field(fld, snap, fmt="csv")
        vtk = out / f"wavefront_{variant}_t{t:g}.vtk"
        export_field(fld, vtk, fmt="vtk")
        print(f"wrote {snap}")
        print(f"wrote {vtk}")
    for variant, mean in sorted(result.mean_iterations.items()):
        print(f"{variant}: mean corrector iterations {mean:.2f}")


def _run_single(cfg: RunConfig) -> None:
    summary = single_run_study(cfg)
    out = _prepare_output(cfg)
    path = out / "energy.csv"
    path.write_text(summary.energy_csv(), encoding="utf-8")
    print(f"wrote {path}")
    print(f"kind={summary.kind} n={summary.n} dt={summary.dt:.4e} "
          f"steps={len(summary.times) - 1} "
          f"mean_iterations={summary.mean_iterations:.2f}")
    if summary.err_psi is not None:
        print(f"err_psi={summary.err_psi:.6e} err_v={summary.err_v:.6e}")
    drift = abs(summary.energies0[-1] - summary.energies0[0])
    print(f"energy drift |e0(T) - e0(0)| = {drift:.6e}")


_DISPATCH = {
    "h-convergence": _run_h_convergence,
    "delta-convergence": _run_delta_convergence,
    "wavefront": _run_wavefront,
    "run": _run_single,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        _DISPATCH[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NonconvergenceError, NondegeneracyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
