"""Command-line driver.

Subcommands: run, sweep-mi, sweep-t, sweep-decomp, sweep-k, attack,
validate, bounds.  Every command exits 0 on success; on failure the exit
code is nonzero and the first failed invariant is named on stderr.  The
artifact root defaults to ./runs and can be overridden with --out or the
PACZERO_OUTPUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .accounting import validate_transcript
from .adversary import empirical_mia_experiment
from .harness import ConfigError, ExperimentConfig, SchemaError

__all__ = ["main", "build_parser"]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY.PATH=VALUE", help="override a nested config value",
    )
    parser.add_argument("--out", default=None, help="artifact root directory")
    parser.add_argument(
        "--pac-load-best-dev", dest="load_best_dev",
        action=argparse.BooleanOptionalAction, default=None,
        help="return the best-dev checkpoint instead of the final iterate",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paczero",
        description="Info-budgeted sign-release training: runs, sweeps, attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train per seed, persist artifacts, validate")
    _add_config_args(p)
    p.add_argument("--no-validate", action="store_true",
                   help="skip transcript re-derivation")

    p = sub.add_parser("sweep-mi", help="same recipe across total budgets")
    _add_config_args(p)
    p.add_argument("--budgets", type=float, nargs="+",
                   default=[1e-4, 1e-3, 1e-2, 1e-1, 0.33, 0.68])

    p = sub.add_parser("sweep-t", help="horizon ladder on one trajectory")
    _add_config_args(p)
    p.add_argument("--rungs", type=int, nargs="+", default=[250, 500, 1000])

    p = sub.add_parser("sweep-decomp",
                       help="surrogate ladder plus both private variants")
    _add_config_args(p)

    p = sub.add_parser("sweep-k", help="directions-per-step ladder")
    _add_config_args(p)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4])

    p = sub.add_parser("attack", help="Monte-Carlo membership attack vs bound")
    _add_config_args(p)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--attack-seed", type=int, default=0)

    p = sub.add_parser("validate", help="re-derive and check a transcript")
    p.add_argument("transcript", help="path to transcript.jsonl")

    p = sub.add_parser("bounds", help="MI / attack-success / DP reference table")
    p.add_argument("--mi", type=float, nargs="+",
                   default=[0.0, 1 / 128, 0.25, 0.33, 0.68])
    p.add_argument("--eps", type=float, nargs="+", default=[0.1, 1.0, 2.0, 6.0])
    p.add_argument("--delta", type=float, default=1e-5)

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(args.config, args.overrides)
    if getattr(args, "load_best_dev", None) is not None:
        config = replace(
            config, train=replace(config.train, load_best_dev=args.load_best_dev)
        )
    return config


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    root = harness.output_root(args.out or config.output_dir)
    return root / config.label


def _fail(invariant: str) -> int:
    print(f"FAILED invariant: {invariant}", file=sys.stderr)
    return 1


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    summary = harness.run_experiment(
        config, out_dir=out, validate=not args.no_validate
    )
    print(summary.csv_text(), end="")
    print(f"artifacts: {out}")
    violation = summary.first_violation()
    if violation is not None:
        return _fail(violation)
    return 0


def _cmd_sweep_mi(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = harness.sweep_mi_plateau(
        config, budgets=tuple(args.budgets), out_dir=_out_dir(args, config)
    )
    print(result.csv_text(), end="")
    print(f"test-metric spread: {result.notes['test_spread']:.6g}")
    if not result.notes["within_budget"]:
        return _fail("cumulative information exceeded the nominal budget")
    return 0


def _cmd_sweep_t(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = harness.sweep_t_ladder(
        config, rungs=tuple(args.rungs), out_dir=_out_dir(args, config)
    )
    print(result.csv_text(), end="")
    drift = result.notes["drift_at_4x"]
    if drift is not None:
        print(f"test drift at 4x best rung: {drift:+.6g}")
    return 0


def _cmd_sweep_decomp(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = harness.sweep_decomposition(config, out_dir=_out_dir(args, config))
    print(result.csv_text(), end="")
    return 0


def _cmd_sweep_k(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = harness.sweep_k(
        config, ks=tuple(args.ks), out_dir=_out_dir(args, config)
    )
    print(result.csv_text(), end="")
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = empirical_mia_experiment(
        config.make_task(), config.mechanism, config.train,
        trials=args.trials, seed=args.attack_seed,
    )
    print(
        f"trials={result.trials} rate={result.empirical_rate:.4f} "
        f"bound={result.bound:.4f} se={result.standard_error:.4f}"
    )
    if not result.sound():
        return _fail("empirical attack rate exceeded the posterior bound + 3 SE")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    transcript = harness.load_transcript(args.transcript)
    harness.load_design(transcript)
    report = validate_transcript(transcript)
    print(report)
    if not report.ok:
        return _fail(report.first_violation or report.message)
    return 0


def _cmd_bounds(args: argparse.Namespace) -> int:
    result = harness.report_bounds(
        mi_values=tuple(args.mi), eps_values=tuple(args.eps), delta=args.delta
    )
    print(result.csv_text(), end="")
    print(result.notes["disclaimer"])
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep-mi": _cmd_sweep_mi,
    "sweep-t": _cmd_sweep_t,
    "sweep-decomp": _cmd_sweep_decomp,
    "sweep-k": _cmd_sweep_k,
    "attack": _cmd_attack,
    "validate": _cmd_validate,
    "bounds": _cmd_bounds,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, SchemaError) as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing file: {exc.filename or exc}")


if __name__ == "__main__":
    sys.exit(main())
