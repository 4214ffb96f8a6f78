"""Wiring from an :class:`ExperimentConfig` to data, model, mixing matrix and runs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import AgentData, gaussian_blobs, half_moons, load_mnist_idx, split_iid
from .distopt import TrajectoryRecord, run_training, sync_init
from .flow import (
    LinearizationAnchor,
    build_anchor,
    build_system,
    choose_expm_method,
    integrate_rk4,
    linearized_flow_rhs,
    predict_losses,
    solve_closed_form,
)
from .mixing import MixingMatrix, metropolis_hastings, topology_from_string
from .model import ModelSpec

log = logging.getLogger(__name__)

MNIST_FEATURES = 784


@dataclass
class Experiment:
    config: ExperimentConfig
    spec: ModelSpec
    data: AgentData
    W: MixingMatrix
    theta0: np.ndarray


def load_source(cfg: ExperimentConfig, synthetic: bool = False):
    n = cfg.pool or cfg.q * cfg.d
    if cfg.source == "half-moons":
        return half_moons(n, cfg.noise, cfg.data_seed)
    if cfg.source == "synthetic" or synthetic:
        return gaussian_blobs(n, MNIST_FEATURES, seed=cfg.data_seed)
    images, labels = Path(cfg.images), Path(cfg.labels)
    for p in (images, labels):
        if not p.is_file():
            raise FileNotFoundError(f"MNIST file {p} not found; pass --synthetic to use the Gaussian-blob stand-in")
    return load_mnist_idx(images, labels)


def build_model(cfg: ExperimentConfig, data: AgentData) -> ModelSpec:
    if cfg.kind == "affine":
        spec = ModelSpec.affine(data.N, data.M)
    else:
        widths = tuple(cfg.widths)
        acts = cfg.activations or ("sigmoid",) * (len(widths) - 2) + ("identity",)
        spec = ModelSpec(widths, acts, cfg.s_w, cfg.s_b, "ntk-mlp")
    if spec.n_inputs != data.N or spec.n_outputs != data.M:
        raise ValueError(
            f"model widths {spec.layer_widths} do not match data (N={data.N}, M={data.M})"
        )
    return spec


def setup(cfg: ExperimentConfig, synthetic: bool = False) -> Experiment:
    source = load_source(cfg, synthetic)
    data = split_iid(source, cfg.q, cfg.d, seed=cfg.data_seed + 1)
    spec = build_model(cfg, data)
    W = metropolis_hastings(topology_from_string(cfg.topology, cfg.q))
    theta0 = sync_init(spec, cfg.model_seed, cfg.q)
    return Experiment(cfg, spec, data, W, theta0)


def simulate(exp: Experiment) -> TrajectoryRecord:
    cfg = exp.config
    return run_training(
        cfg.algorithm, cfg.steps, cfg.eta, exp.theta0, exp.data, exp.W, exp.spec,
        record_params=cfg.record_params, loss=cfg.loss,
    )


def choose_solver(cfg: ExperimentConfig, dim: int) -> str:
    if cfg.solver != "auto":
        return cfg.solver
    return "closed-form" if cfg.loss == "mse" else "rk4"


@dataclass
class Prediction:
    solver: str
    thetas: np.ndarray  # (K+1, QP)
    curves: dict[str, np.ndarray]  # mode -> (K+1, Q)
    anchor: LinearizationAnchor


def predict(exp: Experiment) -> Prediction:
    """Solve the linearized flow and evaluate both loss-prediction modes at t = 0..K."""
    cfg = exp.config
    anchor = build_anchor(exp.spec, exp.theta0, exp.data)
    times = np.arange(cfg.steps + 1, dtype=np.float64)
    solver = choose_solver(cfg, exp.theta0.size)
    if solver == "closed-form":
        if cfg.loss != "mse":
            raise ValueError("closed-form solver needs loss = mse; use solver = rk4")
        system = build_system(cfg.algorithm, anchor, exp.W, cfg.eta, materialize=False)
        method = choose_expm_method(system, times.size, cfg.dense_cap)
        thetas = solve_closed_form(system, times, dense_cap=cfg.dense_cap, method=method)
        solver = f"closed-form/{method}"
    else:
        if cfg.loss == "mse":
            rhs = build_system(cfg.algorithm, anchor, exp.W, cfg.eta, materialize=False)
        else:
            rhs = linearized_flow_rhs(anchor, exp.W, cfg.eta, cfg.algorithm, cfg.loss)
        thetas = integrate_rk4(rhs, exp.theta0, times, cfg.rk4_dt)
    log.info("predicted %d steps with %s solver (QP=%d)", cfg.steps, solver, exp.theta0.size)
    curves = predict_losses(anchor, exp.spec, exp.data, thetas, cfg.loss)
    return Prediction(solver, thetas, curves, anchor)


# -- trajectory files and comparison ---------------------------------------


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Load ``step,agent,loss[,mode]`` rows into ``{mode: (K+1, Q) array}``.

    Files without a mode column are returned under the key ``observed``.
    """
    rows: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"step", "agent", "loss"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header step,agent,loss[,mode]")
        for rec in reader:
            mode = rec.get("mode") or "observed"
            rows.setdefault(mode, {})[(int(rec["step"]), int(rec["agent"]))] = float(rec["loss"])
    out = {}
    for mode, entries in rows.items():
        K = max(k for k, _ in entries) + 1
        Q = max(q for _, q in entries) + 1
        arr = np.full((K, Q), np.nan)
        for (k, q), v in entries.items():
            arr[k, q] = v
        if np.isnan(arr).any():
            raise ValueError(f"{path}: mode {mode!r} has missing (step, agent) entries")
        out[mode] = arr
    return out


def relative_errors(observed: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """``|pred - obs| / |obs|`` elementwise; 0 where both vanish."""
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if observed.shape != predicted.shape:
        raise ValueError(f"trajectory shapes differ: {observed.shape} vs {predicted.shape}")
    diff = np.abs(predicted - observed)
    denom = np.abs(observed)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(denom > 0, diff / denom, np.where(diff > 0, np.inf, 0.0))
    return rel


def compare_trajectories(observed: np.ndarray, predicted: dict[str, np.ndarray]) -> dict[str, dict]:
    """Per-agent max and mean relative loss error for every predicted mode."""
    report = {}
    for mode, curve in predicted.items():
        rel = relative_errors(observed, curve)
        report[mode] = {
            "max_rel_error": float(rel.max()),
            "per_agent_max": rel.max(axis=0),
            "per_agent_mean": rel.mean(axis=0),
        }
    return report


def format_comparison(report: dict[str, dict]) -> str:
    lines = []
    for mode, stats in report.items():
        lines.append(f"{mode}.max_rel_error = {stats['max_rel_error']!r}")
        for q, (mx, mn) in enumerate(zip(stats["per_agent_max"], stats["per_agent_mean"])):
            lines.append(f"{mode}.agent{q}.max_rel_error = {float(mx)!r}")
            lines.append(f"{mode}.agent{q}.mean_rel_error = {float(mn)!r}")
    return "\n".join(lines) + "\n"
