"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad flags, config, or data
preconditions), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment, nn
from .attacks import AttackError
from .data import DataError
from .experiment import ConfigError, ExperimentError
from .nn import ModelError
from .tensor import TensorError

log = logging.getLogger("qadbench")

VALIDATION_ERRORS = (ConfigError, DataError, AttackError, ModelError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--preset", help="named preset (paper-binary, desk, desk-synthetic)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--plot", action="store_true", help="also write SVG loss charts")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _load_config(args) -> experiment.ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    if args.config:
        text = Path(args.config).read_text()
        return experiment.config_from_text(text, seed_override=args.seed)
    return experiment.config_from_preset(args.preset or "desk", seed_override=args.seed)


def cmd_train(args) -> int:
    config = _load_config(args)
    train_ds, test_ds = experiment.load_experiment_data(config)
    model = experiment.build_model(config)
    model, curve = nn.train(model, train_ds, config.train)
    out = Path(args.out)
    experiment.save_checkpoint(model, out / "checkpoints" / "model.ckpt")
    experiment.write_loss_curve(out / "curves" / "train.csv", curve)
    if args.plot:
        experiment.write_loss_chart_svg(out / "curves" / "train.svg", curve, "training loss")
    acc, loss = nn.evaluate_accuracy(model, test_ds)
    print(f"trained: clean accuracy {acc:.4f}, mean loss {loss:.6g}")
    print(f"checkpoint: {out / 'checkpoints' / 'model.ckpt'}")
    return 0


def cmd_attack(args) -> int:
    config = _load_config(args)
    row, _ = experiment.run_no_defense(config, args.chain, out_dir=args.out, plot=args.plot)
    experiment.emit_report([row], args.format, Path(args.out) / f"report.{args.format}")
    print(
        f"{args.chain}: clean {row.clean_acc:.4f} -> attacked {row.no_def_acc:.4f} "
        f"(loss {row.clean_loss:.4g} -> {row.no_def_loss:.4g})"
    )
    return 0


def cmd_defend(args) -> int:
    config = _load_config(args)
    row, _, extras = experiment.run_with_defense(
        config, args.chain, out_dir=args.out, plot=args.plot
    )
    experiment.emit_report([row], args.format, Path(args.out) / f"report.{args.format}")
    print(
        f"{args.chain}: clean {row.clean_acc:.4f}, attacked {row.no_def_acc:.4f}, "
        f"defended attacked {row.def_acc:.4f} "
        f"(defended clean {extras['defended_clean_acc']:.4f})"
    )
    return 0


def cmd_report(args) -> int:
    source = Path(args.out) / "report.json"
    if not source.exists():
        raise ConfigError(f"no report found at {source}; run `run-table5` first")
    rows = experiment.parse_report_json(source.read_text())
    target = Path(args.out) / f"report.{args.format}"
    experiment.emit_report(rows, args.format, target)
    print(f"report written to {target}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    result = run_gradcheck(seed=args.seed if args.seed is not None else 12)
    for group, err in result.max_rel_err.items():
        print(f"{group:10s} max relative error {err:.3e}")
    if result.passed:
        print(f"gradcheck PASS (threshold {result.threshold:g})")
        return 0
    print(f"gradcheck FAIL (threshold {result.threshold:g})")
    return 2


def cmd_run_table5(args) -> int:
    config = _load_config(args)
    rows = experiment.run_table5(config, args.out, fmt=args.format, plot=args.plot)
    print((Path(args.out) / "report.csv").read_text(), end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _Parser(prog="qadbench")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress step logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, needs_chain in (
        ("train", cmd_train, False),
        ("attack", cmd_attack, True),
        ("defend", cmd_defend, True),
        ("report", cmd_report, False),
        ("gradcheck", cmd_gradcheck, False),
        ("run-table5", cmd_run_table5, False),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        if needs_chain:
            p.add_argument("--chain", required=True, help="attack chain name from the config")
        p.set_defaults(fn=fn)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
    )
    np.seterr(all="raise", under="ignore")
    try:
        return args.fn(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExperimentError, TensorError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
