"""Command-line entry point.

Exit codes: 0 success, 1 threshold FAIL, 2 config error, 3 numeric error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import estimator
from .cfnn import CfnnModel
from .config import format_config, load_config
from .errors import BdcError, ConfigError, NumericError
from .motor_model import save_params
from .simulator import Dataset, Trajectory

log = logging.getLogger("bdc_estimator")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4


class InputError(Exception):
    """An input file is missing, unreadable or malformed."""


def _load(kind, loader, path):
    if path is None:
        raise ConfigError(f"--{kind} is required for this command")
    try:
        return loader(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {kind} {path}: {exc}") from exc


def _write_resolved(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))


def _sidecar(out):
    return f"{out}.resolved-config.ini"


def _config(args):
    try:
        return load_config(args.config, args.seed_override)
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc


def cmd_simulate(args) -> int:
    cfg = _config(args)
    traj = estimator.simulate(cfg)
    traj.save_csv(args.out)
    _write_resolved(cfg, _sidecar(args.out))
    print(f"wrote {len(traj)} samples to {args.out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _config(args)
    traj = _load("traj", Trajectory.load_csv, args.traj)
    ds = estimator.build_dataset(cfg, estimator.noisy_copy(cfg, traj))
    ds.save_csv(args.out)
    _write_resolved(cfg, _sidecar(args.out))
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load("dataset", Dataset.load_csv, args.dataset)
    model, result = estimator.fit(cfg, ds)
    history_path = args.history or f"{args.out}.history.csv"
    try:
        model.save(args.out)
        result.history.save_csv(history_path)
    except OSError as exc:
        raise InputError(f"cannot write model: {exc}") from exc
    _write_resolved(cfg, _sidecar(args.out))
    if not result.history.goal_reached:
        log.warning("training stopped on %s without reaching the goal", result.history.stop_reason)
    print(f"final loss {result.loss!r} after {len(result.history)} iterations "
          f"({result.history.stop_reason})")
    return EXIT_OK


def _write_report(cfg, report, series, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text(cfg.ambient, cfg.thresholds))
    report.save_csv(os.path.join(out_dir, "report.csv"))
    estimator.write_figures(series, out_dir, cfg.ambient)


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = _load("model", CfnnModel.load, args.model)
    clean = _load("traj", Trajectory.load_csv, args.traj)
    noisy = estimator.noisy_copy(cfg, clean)
    with estimator.stage("evaluate"):
        report, series = estimator.evaluate(model, clean, noisy, cfg.params,
                                            cfg.window_fraction, cfg.decimate)
    _write_report(cfg, report, series, args.out)
    _write_resolved(cfg, os.path.join(args.out, "resolved-config.ini"))
    print(report.to_text(cfg.ambient), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    result = estimator.run_experiment(cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_resolved(cfg, os.path.join(out, "resolved-config.ini"))
    save_params(cfg.params, os.path.join(out, "motor-params.txt"))
    result.clean.save_csv(os.path.join(out, "trajectory.csv"))
    result.dataset.save_csv(os.path.join(out, "dataset.csv"))
    result.model.save(os.path.join(out, "model.txt"))
    result.training.history.save_csv(os.path.join(out, "history.csv"))
    _write_report(cfg, result.report, result.series, out)

    ss = result.report.steady_state_summary()
    print(f"steady-state speed error:       {ss['speed_rpm']:+.4f} rpm")
    print(f"steady-state temperature error: {ss['theta']:+.4f} degC")
    print(f"steady-state resistance error:  {ss['r_a']:+.6f} ohm")
    checks = result.report.check(cfg.thresholds)
    for name, ok in checks.items():
        print(f"{name:<10} {'PASS' if ok else 'FAIL'}")
    passed = all(checks.values())
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdc-estimator",
        description="Brushed DC motor speed/temperature/resistance estimation with a BFGS-trained CFNN.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate the motor over the duty profile and write the trajectory CSV",
        "dataset": "add measurement noise to a trajectory and write the training dataset CSV",
        "train": "train the network on a dataset CSV and write the model file",
        "eval": "evaluate a model against a clean trajectory and write report + figure CSVs",
        "run": "full pipeline with PASS/FAIL against the configured thresholds",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", required=True,
                       help="output directory" if name in ("eval", "run") else "output file")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace every seed in the config (testing only)")
        if name in ("dataset", "eval"):
            p.add_argument("--traj", help="trajectory CSV (clean)")
        if name == "train":
            p.add_argument("--dataset", help="dataset CSV")
            p.add_argument("--history", help="training history CSV (default: <out>.history.csv)")
        if name == "eval":
            p.add_argument("--model", help="model file")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, BdcError) as exc:
        stage = getattr(exc, "stage", None) or args.command
        print(f"numeric error in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
