"""Discrete-time peer-to-peer training: DGD, ATC and CTA rounds on stacked parameters.

Stacked parameters are flat float64 arrays of length ``Q * P`` whose block
``q`` is agent ``q``'s parameter vector.

Gradient scaling: every agent's gradient carries the ``1 / (D * Q)`` factor of
the global objective ``L = (1/Q) sum_q L_q``. This keeps the simulator on the
same footing as the linearized flows in :mod:`peerflow.flow`, whose step
coefficient is ``eta / (D * Q)``. A per-agent ``dL_q/dtheta`` convention would
be ``Q`` times larger.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AgentData
from .mixing import MixingMatrix, as_matrix
from .model import ModelSpec, forward, init_params, vjp

ALGORITHMS = ("dgd", "atc", "cta")
LOSSES = ("mse", "cross-entropy")


class TrainingDiverged(FloatingPointError):
    """A training or integration trajectory produced non-finite values."""


# -- losses ----------------------------------------------------------------


def _logsumexp(F):
    m = F.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(F - m).sum(axis=-1, keepdims=True)))[..., 0]


def sample_losses(F: np.ndarray, Y: np.ndarray, loss: str = "mse") -> np.ndarray:
    """Per-sample loss for outputs ``F`` and targets ``Y`` of shape ``(..., M)``.

    ``mse`` is ``0.5 * ||f - y||^2``. ``cross-entropy`` reads a single output as
    a logit against a {0, 1} target and several outputs as softmax logits
    against one-hot targets.
    """
    if loss == "mse":
        return 0.5 * ((F - Y) ** 2).sum(axis=-1)
    if loss == "cross-entropy":
        if F.shape[-1] == 1:
            f, y = F[..., 0], Y[..., 0]
            return np.logaddexp(0.0, f) - y * f
        return _logsumexp(F) - (Y * F).sum(axis=-1)
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def loss_grad(F: np.ndarray, Y: np.ndarray, loss: str = "mse") -> np.ndarray:
    """Derivative of :func:`sample_losses` with respect to the outputs."""
    if loss == "mse":
        return F - Y
    if loss == "cross-entropy":
        if F.shape[-1] == 1:
            return 0.5 * (1.0 + np.tanh(0.5 * F)) - Y
        e = np.exp(F - F.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True) - Y
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


# -- objective and gradient --------------------------------------------------


def blocks(theta: np.ndarray, Q: int) -> np.ndarray:
    """View stacked parameters as a ``(Q, P)`` array."""
    return np.asarray(theta).reshape(Q, -1)


def sync_init(spec: ModelSpec, seed: int, Q: int) -> np.ndarray:
    """One draw of the initial parameters replicated at every agent."""
    return np.tile(init_params(spec, seed), Q)


def per_agent_losses(
    spec: ModelSpec, theta: np.ndarray, data: AgentData, loss: str = "mse"
) -> np.ndarray:
    """``L_q`` evaluated at each agent's own parameters, shape ``(Q,)``."""
    th = blocks(theta, data.Q)
    out = np.empty(data.Q)
    for q in range(data.Q):
        F = forward(spec, th[q], data.inputs[q])
        out[q] = sample_losses(F, data.targets[q], loss).mean()
    return out


def global_mse_loss(spec: ModelSpec, theta: np.ndarray, data: AgentData) -> float:
    return float(per_agent_losses(spec, theta, data, "mse").mean())


def local_gradient(
    spec: ModelSpec, theta_q: np.ndarray, X: np.ndarray, Y: np.ndarray, scale: float, loss: str = "mse"
) -> np.ndarray:
    """``scale * J^T dl/df`` for one agent's data."""
    F = forward(spec, theta_q, X)
    return scale * vjp(spec, theta_q, X, loss_grad(F, Y, loss))


def stacked_gradient(
    spec: ModelSpec, theta: np.ndarray, data: AgentData, loss: str = "mse"
) -> np.ndarray:
    """Gradient of the global objective with respect to the stacked parameters."""
    Q, D = data.Q, data.D
    th = blocks(theta, Q)
    scale = 1.0 / (D * Q)
    return np.concatenate(
        [local_gradient(spec, th[q], data.inputs[q], data.targets[q], scale, loss) for q in range(Q)]
    )


# -- update rules ----------------------------------------------------------


def mix(W, theta: np.ndarray) -> np.ndarray:
    """``(W kron I_P) theta`` without forming the Kronecker product."""
    Wm = as_matrix(W)
    return (Wm @ blocks(theta, Wm.shape[0])).reshape(-1)


def dgd_step(spec, theta, data, W, eta, loss="mse"):
    """Mix, then subtract the gradient taken at the pre-mix parameters."""
    return mix(W, theta) - eta * stacked_gradient(spec, theta, data, loss)


def atc_step(spec, theta, data, W, eta, loss="mse"):
    """Local gradient step, then mix."""
    return mix(W, theta - eta * stacked_gradient(spec, theta, data, loss))


def cta_step(spec, theta, data, W, eta, loss="mse"):
    """Mix, then step along the gradient taken at the mixed parameters."""
    psi = mix(W, theta)
    return psi - eta * stacked_gradient(spec, psi, data, loss)


STEPS = {"dgd": dgd_step, "atc": atc_step, "cta": cta_step}


@dataclass
class TrajectoryRecord:
    """Per-step, per-agent losses (row ``k`` is iterate ``k``) and optional parameters."""

    algorithm: str
    eta: float
    losses: np.ndarray  # (K+1, Q)
    params: np.ndarray | None = field(default=None, repr=False)  # (K+1, Q*P)

    @property
    def steps(self) -> int:
        return self.losses.shape[0] - 1

    @property
    def global_losses(self) -> np.ndarray:
        return self.losses.mean(axis=1)


def run_training(
    algorithm: str,
    steps: int,
    eta: float,
    theta0: np.ndarray,
    data: AgentData,
    W: MixingMatrix | np.ndarray,
    spec: ModelSpec,
    record_params: bool = False,
    loss: str = "mse",
) -> TrajectoryRecord:
    """Run ``steps`` synchronous rounds of ``algorithm`` and record losses at k = 0..K."""
    if algorithm not in STEPS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    step = STEPS[algorithm]
    theta = np.array(theta0, dtype=np.float64)
    losses = np.empty((steps + 1, data.Q))
    params = np.empty((steps + 1, theta.size)) if record_params else None
    losses[0] = per_agent_losses(spec, theta, data, loss)
    if params is not None:
        params[0] = theta
    for k in range(1, steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            theta = step(spec, theta, data, W, eta, loss)
            losses[k] = per_agent_losses(spec, theta, data, loss)
        if not (np.isfinite(theta).all() and np.isfinite(losses[k]).all()):
            raise TrainingDiverged(f"{algorithm}: non-finite parameters or loss at step {k}")
        if params is not None:
            params[k] = theta
    return TrajectoryRecord(algorithm, eta, losses, params)


# -- output ----------------------------------------------------------------


def write_trajectory_csv(path, losses: np.ndarray, mode: str | None = None) -> None:
    """Write ``step,agent,loss[,mode]`` rows; losses use ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "loss"] + (["mode"] if mode else []))
        for k, row in enumerate(losses):
            for q, v in enumerate(row):
                w.writerow([k, q, repr(float(v))] + ([mode] if mode else []))


def write_param_dump(path, params: np.ndarray) -> None:
    """Raw little-endian float64, one row of ``Q * P`` values per step, no header."""
    Path(path).write_bytes(np.ascontiguousarray(params, dtype="<f8").tobytes())


def read_param_dump(path, row_length: int) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").reshape(-1, row_length)
