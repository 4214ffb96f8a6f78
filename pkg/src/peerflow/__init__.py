"""Simulate peer-to-peer training of wide networks and predict it with linearized gradient flows."""

from .data import AgentData, LabeledDataset, half_moons, load_mnist_idx, split_iid, stack_targets
from .distopt import run_training, stacked_gradient, sync_init
from .expm import expm
from .flow import (
    LinearFlowSystem,
    LinearizationAnchor,
    build_anchor,
    build_system,
    integrate_rk4,
    predict_losses,
    solve_closed_form,
)
from .mixing import CommGraph, MixingMatrix, build_topology, metropolis_hastings, spectral_gap
from .model import ModelSpec, empirical_ntk, forward, init_params, jacobian
from .stability import bibo_report

__version__ = "0.1.0"

__all__ = [
    "AgentData",
    "bibo_report",
    "build_anchor",
    "build_system",
    "build_topology",
    "CommGraph",
    "empirical_ntk",
    "expm",
    "forward",
    "half_moons",
    "init_params",
    "integrate_rk4",
    "jacobian",
    "LabeledDataset",
    "LinearFlowSystem",
    "LinearizationAnchor",
    "load_mnist_idx",
    "metropolis_hastings",
    "MixingMatrix",
    "ModelSpec",
    "predict_losses",
    "run_training",
    "solve_closed_form",
    "spectral_gap",
    "split_iid",
    "stack_targets",
    "stacked_gradient",
    "sync_init",
]
