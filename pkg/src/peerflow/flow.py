"""Linearized gradient flows of peer-to-peer training and their solvers.

The network outputs on every agent's data are linearized around the initial
stacked parameters ``theta0``::

    fbar(theta) = f0 + J0 (theta - theta0)

with ``J0`` block diagonal (agent ``q``'s outputs depend only on block ``q``).
For MSE loss the flows are linear, ``dtheta/dt = A theta + u``, with
``c = eta / (D Q)``, ``Psi0 = J0^T J0`` and ``What = (W - I) kron I_P``::

    dgd:  A = What - c Psi0          u = -c r0
    atc:  A = What - c Wk Psi0       u = -c Wk r0
    cta:  A = What - c Psi0 Wk       u = -c r0

where ``r0 = J0^T (f0 - y) - Psi0 theta0`` and ``Wk = W kron I_P``.

Time convention: ``eta`` sits inside ``A`` and ``u``, so unit flow time equals
one discrete round and iterate ``k`` is compared with the flow at ``t = k``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import AgentData, stack_targets
from .distopt import TrainingDiverged, blocks, loss_grad, mix, per_agent_losses, sample_losses
from .expm import expm, expm_multiply
from .mixing import MixingMatrix, as_matrix
from .model import ModelSpec, forward, jacobian

DEFAULT_DENSE_CAP = 10_000
PREDICTION_MODES = ("model", "linearized")


@dataclass(frozen=True)
class LinearizationAnchor:
    """Jacobian blocks, outputs and labels at the initial stacked parameters.

    ``J`` has shape ``(Q, M*D, P)``; ``f0`` and ``y`` are stacked agent-major,
    sample-major, output-minor. The off-diagonal Jacobian blocks are zero and
    never stored.
    """

    J: np.ndarray = field(repr=False)
    f0: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    theta0: np.ndarray = field(repr=False)
    D: int
    M: int

    @property
    def Q(self) -> int:
        return self.J.shape[0]

    @property
    def P(self) -> int:
        return self.J.shape[2]

    def apply_J(self, theta: np.ndarray) -> np.ndarray:
        """``J0 v`` for a stacked parameter-space vector ``v``."""
        return np.matmul(self.J, blocks(theta, self.Q)[:, :, None]).reshape(-1)

    def apply_JT(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v).reshape(self.Q, -1, 1)
        return np.matmul(self.J.transpose(0, 2, 1), v).reshape(-1)

    def apply_psi(self, theta: np.ndarray) -> np.ndarray:
        return self.apply_JT(self.apply_J(theta))

    def psi_blocks(self) -> np.ndarray:
        """Diagonal blocks ``J_q^T J_q``, shape ``(Q, P, P)``."""
        G = np.matmul(self.J.transpose(0, 2, 1), self.J)
        # exact symmetry keeps the DGD state matrix on the symmetric eigensolver path
        return 0.5 * (G + G.transpose(0, 2, 1))

    def linear_outputs(self, theta: np.ndarray) -> np.ndarray:
        return self.f0 + self.apply_J(np.asarray(theta) - self.theta0)


def build_anchor(spec: ModelSpec, theta0: np.ndarray, data: AgentData) -> LinearizationAnchor:
    th = blocks(np.asarray(theta0, dtype=np.float64), data.Q)
    J = np.stack([jacobian(spec, th[q], data.inputs[q]) for q in range(data.Q)])
    f0 = np.concatenate([forward(spec, th[q], data.inputs[q]).reshape(-1) for q in range(data.Q)])
    return LinearizationAnchor(J, f0, stack_targets(data), th.reshape(-1).copy(), data.D, data.M)


@dataclass
class LinearFlowSystem:
    """``dtheta/dt = A theta + u``, with ``A`` dense or applied matrix-free."""

    algorithm: str
    u: np.ndarray = field(repr=False)
    theta0: np.ndarray = field(repr=False)
    eta: float = 0.0
    D: int = 1
    Q: int = 1
    A: np.ndarray | None = field(default=None, repr=False)
    anchor: LinearizationAnchor | None = field(default=None, repr=False)
    W: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_matrices(cls, A, u, theta0, algorithm: str = "raw") -> "LinearFlowSystem":
        A = np.asarray(A, dtype=np.float64)
        return cls(algorithm, np.asarray(u, dtype=np.float64), np.asarray(theta0, dtype=np.float64), A=A)

    @property
    def dim(self) -> int:
        return self.theta0.size

    @property
    def coeff(self) -> float:
        return self.eta / (self.D * self.Q)

    def apply_A(self, v: np.ndarray) -> np.ndarray:
        if self.A is not None:
            return self.A @ v
        an, W, c = self.anchor, self.W, self.coeff
        consensus = mix(W, v) - v
        if self.algorithm == "dgd":
            return consensus - c * an.apply_psi(v)
        if self.algorithm == "atc":
            return consensus - c * mix(W, an.apply_psi(v))
        return consensus - c * an.apply_psi(mix(W, v))

    def rhs(self, theta: np.ndarray) -> np.ndarray:
        return self.apply_A(theta) + self.u

    def norm1_bound(self) -> float:
        """Upper bound on ``||A||_1`` (exact when ``A`` is dense)."""
        if self.A is not None:
            return float(np.abs(self.A).sum(axis=0).max())
        W = self.W
        J = np.abs(self.anchor.J)
        psi_bound = max(float(Jq.sum(axis=0).max() * Jq.sum(axis=1).max()) for Jq in J)
        w1 = float(np.abs(W).sum(axis=0).max())
        return float(np.abs(W - np.eye(W.shape[0])).sum(axis=0).max()) + self.coeff * w1 * psi_bound

    def matvec_flops(self) -> float:
        if self.A is not None:
            return 2.0 * self.dim**2
        an = self.anchor
        return float(an.Q * (4 * an.J.shape[1] * an.P + 4 * an.Q * an.P))

    def dense(self) -> np.ndarray:
        """The state matrix as a dense array (built on demand)."""
        if self.A is None:
            self.A = _dense_state_matrix(self.algorithm, self.anchor, self.W, self.coeff)
        return self.A


def _dense_state_matrix(algorithm: str, anchor: LinearizationAnchor, W: np.ndarray, c: float) -> np.ndarray:
    Q, P = anchor.Q, anchor.P
    A = np.kron(W - np.eye(Q), np.eye(P))
    psi = anchor.psi_blocks()
    for q in range(Q):
        rows = slice(q * P, (q + 1) * P)
        if algorithm == "dgd":
            A[rows, rows] -= c * psi[q]
            continue
        for r in range(Q):
            if W[q, r] == 0.0:
                continue
            cols = slice(r * P, (r + 1) * P)
            # atc: block (q, r) of Wk Psi0 is W[q,r] Psi_r; cta: Psi_q W[q,r]
            A[rows, cols] -= (c * W[q, r]) * (psi[r] if algorithm == "atc" else psi[q])
    return A


def build_system(
    algorithm: str,
    anchor: LinearizationAnchor,
    W: MixingMatrix | np.ndarray,
    eta: float,
    materialize: bool | str = "auto",
    dense_cap: int = DEFAULT_DENSE_CAP,
) -> LinearFlowSystem:
    """Assemble the MSE linearized flow for ``algorithm`` in {dgd, atc, cta}.

    ``materialize="auto"`` forms the dense ``QP x QP`` state matrix only when
    ``QP <= dense_cap``.
    """
    if algorithm not in ("dgd", "atc", "cta"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    Wm = as_matrix(W)
    if Wm.shape != (anchor.Q, anchor.Q):
        raise ValueError(f"mixing matrix shape {Wm.shape} does not match Q={anchor.Q}")
    c = eta / (anchor.D * anchor.Q)
    r0 = anchor.apply_JT(anchor.f0 - anchor.y) - anchor.apply_psi(anchor.theta0)
    u = -c * (mix(Wm, r0) if algorithm == "atc" else r0)
    system = LinearFlowSystem(
        algorithm, u, anchor.theta0.copy(), eta, anchor.D, anchor.Q, anchor=anchor, W=Wm
    )
    n = anchor.Q * anchor.P
    if materialize is True or (materialize == "auto" and n <= dense_cap):
        system.dense()
    return system


def dense_fits_in_memory(n: int, copies: int = 10) -> bool:
    """Whether ``copies`` dense ``(n+1) x (n+1)`` float64 arrays fit in available RAM."""
    try:
        avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return True
    return copies * 8 * (n + 1) ** 2 < avail


def _uniform_grid(ts: np.ndarray) -> float | None:
    if ts.size < 2 or ts[0] != 0.0:
        return None
    h = ts[1] - ts[0]
    if h <= 0:
        return None
    expected = h * np.arange(ts.size)
    return float(h) if np.allclose(ts, expected, rtol=1e-12, atol=1e-12 * h) else None


def _augmented_apply(system: LinearFlowSystem):
    n = system.dim

    def apply(z):
        out = np.empty(n + 1)
        out[:n] = system.apply_A(z[:n]) + system.u * z[n]
        out[n] = 0.0
        return out

    return apply


def choose_expm_method(system: LinearFlowSystem, n_steps: int, dense_cap: int = DEFAULT_DENSE_CAP) -> str:
    """``pade`` (dense augmented exponential) or ``taylor`` (its action), whichever is cheaper."""
    n = system.dim
    if n > dense_cap or not dense_fits_in_memory(n):
        return "taylor"
    pade_flops = 20.0 * (n + 1) ** 3 + 2.0 * n_steps * (n + 1) ** 2
    terms = 20 * max(1, math.ceil(system.norm1_bound()))
    taylor_flops = n_steps * terms * system.matvec_flops()
    return "pade" if pade_flops <= taylor_flops else "taylor"


def solve_closed_form(
    system: LinearFlowSystem, times, dense_cap: int = DEFAULT_DENSE_CAP, method: str = "pade"
) -> np.ndarray:
    """State at each requested time from the augmented exponential.

    ``exp(t [[A, u], [0, 0]]) [theta0; 1] = [theta_t; 1]``, which needs no
    inverse of ``A``. ``method="pade"`` forms the dense exponential (limited
    to ``dim <= dense_cap``); ``"taylor"`` applies the same exponential to the
    state vector through matrix-vector products only; ``"auto"`` picks the
    cheaper. On a uniform grid starting at 0 the grid-step propagator is
    reused from one time to the next.
    """
    ts = np.asarray(times, dtype=np.float64)
    if (ts < 0).any():
        raise ValueError("times must be nonnegative")
    n = system.dim
    if method == "auto":
        method = choose_expm_method(system, ts.size, dense_cap)
    if method not in ("pade", "taylor"):
        raise ValueError(f"unknown closed-form method {method!r}")
    if method == "pade" and n > dense_cap:
        raise ValueError(
            f"system dimension {n} exceeds dense cap {dense_cap}; use integrate_rk4 instead"
        )
    z0 = np.append(system.theta0, 1.0)
    out = np.empty((ts.size, n))
    h = _uniform_grid(ts)

    if method == "pade":
        Maug = np.zeros((n + 1, n + 1))
        Maug[:n, :n] = system.dense()
        Maug[:n, n] = system.u

        def propagator(dt):
            E = expm(dt * Maug)
            return lambda z: E @ z
    else:
        apply = _augmented_apply(system)
        norm = system.norm1_bound()

        def propagator(dt):
            return lambda z: expm_multiply(apply, z, dt, norm)

    if h is not None:
        step = propagator(h)
        z = z0
        out[0] = z[:n]
        for i in range(1, ts.size):
            z = step(z)
            out[i] = z[:n]
    else:
        for i, t in enumerate(ts):
            out[i] = propagator(t)(z0)[:n] if t > 0 else system.theta0
    return out


def linearized_flow_rhs(
    anchor: LinearizationAnchor, W, eta: float, algorithm: str = "dgd", loss: str = "mse"
) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-free right-hand side of the linearized flow for any supported loss.

    The loss derivative is taken at the linearized outputs; for MSE this is
    the same vector field as :func:`build_system`.
    """
    Wm = as_matrix(W)
    scale = 1.0 / (anchor.D * anchor.Q)
    shape = (anchor.Q, anchor.D, anchor.M)

    def grad(phi):
        F = anchor.linear_outputs(phi).reshape(shape)
        Y = anchor.y.reshape(shape)
        return scale * anchor.apply_JT(loss_grad(F, Y, loss).reshape(-1))

    def rhs(theta):
        consensus = mix(Wm, theta) - theta
        if algorithm == "dgd":
            return consensus - eta * grad(theta)
        if algorithm == "atc":
            return consensus - eta * mix(Wm, grad(theta))
        if algorithm == "cta":
            return consensus - eta * grad(mix(Wm, theta))
        raise ValueError(f"unknown algorithm {algorithm!r}")

    return rhs


def integrate_rk4(rhs, y0, times, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta for an autonomous system.

    ``rhs`` is a callable ``y -> dy/dt`` or a :class:`LinearFlowSystem`.
    Integration starts at ``t = 0`` from ``y0``; each interval between
    consecutive requested times is split into equal substeps no longer than
    ``dt``. Returns the states at ``times``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    f = rhs.rhs if isinstance(rhs, LinearFlowSystem) else rhs
    ts = np.asarray(times, dtype=np.float64)
    if (np.diff(ts) < 0).any() or (ts.size and ts[0] < 0):
        raise ValueError("times must be nonnegative and sorted")
    y = np.array(y0, dtype=np.float64)
    out = np.empty((ts.size, y.size))
    t, nstep = 0.0, 0
    for i, target in enumerate(ts):
        span = target - t
        if span > 0:
            nsub = max(1, math.ceil(span / dt - 1e-9))
            h = span / nsub
            for _ in range(nsub):
                k1 = f(y)
                k2 = f(y + 0.5 * h * k1)
                k3 = f(y + 0.5 * h * k2)
                k4 = f(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                nstep += 1
                if not np.isfinite(y).all():
                    raise TrainingDiverged(f"rk4: non-finite state at step {nstep}")
            t = target
        out[i] = y
    return out


def predict_losses(
    anchor: LinearizationAnchor,
    spec: ModelSpec,
    data: AgentData,
    thetas: np.ndarray,
    loss: str = "mse",
) -> dict[str, np.ndarray]:
    """Per-agent loss curves for a predicted parameter trajectory.

    ``model`` substitutes each predicted ``theta_t`` into the true network;
    ``linearized`` evaluates the loss on the linearized outputs. Both arrays
    have shape ``(T, Q)``.
    """
    thetas = np.atleast_2d(thetas)
    shape = (anchor.Q, anchor.D, anchor.M)
    Y = anchor.y.reshape(shape)
    model_curve = np.stack([per_agent_losses(spec, th, data, loss) for th in thetas])
    lin_curve = np.empty_like(model_curve)
    for i, th in enumerate(thetas):
        F = anchor.linear_outputs(th).reshape(shape)
        for q in range(anchor.Q):
            lin_curve[i, q] = sample_losses(F[q], Y[q], loss).mean()
    return {"model": model_curve, "linearized": lin_curve}
