"""Command line entry point: ``peerflow {simulate,predict,compare,stability}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Failures print one line to stderr starting with ``error[usage]:`` or
``error[runtime]:``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config
from .distopt import write_param_dump, write_trajectory_csv
from .experiment import (
    compare_trajectories,
    format_comparison,
    predict,
    read_trajectory_csv,
    setup,
    simulate,
)
from .plot import loss_chart_svg
from .stability import bibo_report

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

OBSERVED = "observed.csv"
PREDICTED = "predicted.csv"
COMPARE = "compare.txt"
STABILITY = "stability.txt"
PLOT = "losses.svg"
SNAPSHOT = "config.ini"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _prepare(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT).write_text(cfg.to_text())


def cmd_simulate(cfg: ExperimentConfig, out: Path, synthetic: bool = False) -> Path:
    _prepare(cfg, out)
    exp = setup(cfg, synthetic)
    record = simulate(exp)
    write_trajectory_csv(out / OBSERVED, record.losses)
    if record.params is not None:
        write_param_dump(out / "observed_params.bin", record.params)
    return out / OBSERVED


def cmd_predict(cfg: ExperimentConfig, out: Path, synthetic: bool = False) -> Path:
    _prepare(cfg, out)
    exp = setup(cfg, synthetic)
    pred = predict(exp)
    path = out / PREDICTED
    # both modes share one file, one block of rows per mode
    with open(path, "w", newline="") as fh:
        fh.write("step,agent,loss,mode\n")
        for mode, curve in pred.curves.items():
            for k, row in enumerate(curve):
                for q, v in enumerate(row):
                    fh.write(f"{k},{q},{float(v)!r},{mode}\n")
    if cfg.record_params:
        write_param_dump(out / "predicted_params.bin", pred.thetas)
    return path


def cmd_compare(cfg: ExperimentConfig, out: Path) -> dict:
    obs_path, pred_path = out / OBSERVED, out / PREDICTED
    missing = [p.name for p in (obs_path, pred_path) if not p.is_file()]
    if missing:
        raise FileNotFoundError(
            f"missing {', '.join(missing)} in {out}; run 'simulate' and 'predict' with the same --out first"
        )
    observed = read_trajectory_csv(obs_path)["observed"]
    predicted = read_trajectory_csv(pred_path)
    report = compare_trajectories(observed, predicted)
    (out / COMPARE).write_text(format_comparison(report))
    title = f"{cfg.algorithm.upper()} on {cfg.topology} graph, Q={cfg.q}, D={cfg.d}"
    (out / PLOT).write_text(loss_chart_svg(observed, predicted.get("model"), title))
    return report


def cmd_stability(cfg: ExperimentConfig, out: Path, synthetic: bool = False):
    from .flow import build_anchor

    _prepare(cfg, out)
    exp = setup(cfg, synthetic)
    anchor = build_anchor(exp.spec, exp.theta0, exp.data)
    report = bibo_report(cfg.algorithm, exp.W, anchor, cfg.eta)
    (out / STABILITY).write_text(report.to_text())
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="peerflow", description="Peer-to-peer training simulator and linearized-flow predictor.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("simulate", "predict", "compare", "stability"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, default=None, help="override model and data seeds")
        p.add_argument("--synthetic", action="store_true", help="use Gaussian blobs instead of MNIST files")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = args.out or (Path(cfg.out_dir) if cfg.out_dir else None)
        if out is None:
            raise UsageError("no output directory: pass --out or set [output] dir")
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, out, args.synthetic)
        elif args.command == "predict":
            cmd_predict(cfg, out, args.synthetic)
        elif args.command == "compare":
            report = cmd_compare(cfg, out)
            for mode, stats in report.items():
                print(f"{mode}: max relative loss error {stats['max_rel_error']:.3e}")
        else:
            report = cmd_stability(cfg, out, args.synthetic)
            print(f"verdict: {report.verdict}")
    except Exception as exc:  # noqa: BLE001 - single-line diagnostic contract
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
