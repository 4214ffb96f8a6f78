"""NTK-parameterized feed-forward networks and affine models.

Trainable parameters live in one flat float64 vector laid out layer by layer
as ``[W_0 (row-major), b_0, W_1, b_1, ...]``. For ``ntk-mlp`` the effective
weights are ``s_w / sqrt(n_in) * W`` and the effective biases ``s_b * b``;
the affine model uses the raw parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("sigmoid", "relu", "identity")
MODEL_KINDS = ("ntk-mlp", "affine")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        # subgradient at 0 taken as 0
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``layer_widths`` is ``[N, n_1, ..., M]`` and ``activations`` has one entry
    per layer (``len(layer_widths) - 1``). The last activation must be
    ``identity``.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    s_w: float = 1.0
    s_b: float = 0.1
    kind: str = "ntk-mlp"

    def __post_init__(self) -> None:
        widths = tuple(int(n) for n in self.layer_widths)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if len(widths) < 2:
            raise ValueError("need at least one layer (two widths)")
        if any(n <= 0 for n in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if len(acts) != len(widths) - 1:
            raise ValueError(f"{len(widths) - 1} layers but {len(acts)} activations")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; expected one of {ACTIVATIONS}")
        if acts[-1] != "identity":
            raise ValueError("final activation must be identity (regression head)")
        if self.kind == "affine" and len(widths) != 2:
            raise ValueError("affine model has exactly one layer")
        if self.s_w <= 0 or self.s_b < 0:
            raise ValueError(f"need s_w > 0 and s_b >= 0, got s_w={self.s_w}, s_b={self.s_b}")

    @classmethod
    def affine(cls, n_inputs: int, n_outputs: int = 1) -> "ModelSpec":
        return cls((n_inputs, n_outputs), ("identity",), 1.0, 1.0, "affine")

    @classmethod
    def mlp(
        cls, widths, activation: str = "sigmoid", s_w: float = 1.0, s_b: float = 0.1
    ) -> "ModelSpec":
        """Hidden layers share ``activation``; the output layer is identity."""
        widths = tuple(widths)
        acts = (activation,) * (len(widths) - 2) + ("identity",)
        return cls(widths, acts, s_w, s_b, "ntk-mlp")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def num_params(self) -> int:
        w = self.layer_widths
        return sum(w[l + 1] * w[l] + w[l + 1] for l in range(self.n_layers))

    def scales(self, l: int) -> tuple[float, float]:
        """Effective (weight, bias) multipliers of layer ``l``."""
        if self.kind == "affine":
            return 1.0, 1.0
        return self.s_w / np.sqrt(self.layer_widths[l]), self.s_b


def _offsets(spec: ModelSpec) -> list[tuple[int, int, int]]:
    out, pos = [], 0
    w = spec.layer_widths
    for l in range(spec.n_layers):
        nw = w[l + 1] * w[l]
        out.append((pos, pos + nw, pos + nw + w[l + 1]))
        pos += nw + w[l + 1]
    return out


def unflatten(spec: ModelSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into ``[(W_l, b_l), ...]`` views."""
    theta = np.asarray(theta)
    if theta.shape != (spec.num_params,):
        raise ValueError(f"parameter vector has shape {theta.shape}, expected ({spec.num_params},)")
    w = spec.layer_widths
    return [
        (theta[a:b].reshape(w[l + 1], w[l]), theta[b:c])
        for l, (a, b, c) in enumerate(_offsets(spec))
    ]


def flatten(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Standard-normal trainable parameters from a seed-keyed PCG64 generator."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal(spec.num_params)


def _as_batch(spec: ModelSpec, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(f"inputs have shape {X.shape}, expected (..., {spec.n_inputs})")
    return X, single


def _forward_cache(spec: ModelSpec, theta: np.ndarray, X: np.ndarray):
    layers = unflatten(spec, theta)
    acts = [X]
    pre = []
    a = X
    for l, (W, b) in enumerate(layers):
        sw, sb = spec.scales(l)
        z = sw * (a @ W.T) + sb * b
        a = _act(spec.activations[l], z)
        pre.append(z)
        acts.append(a)
    return layers, pre, acts


def forward(spec: ModelSpec, theta: np.ndarray, X) -> np.ndarray:
    """Evaluate the model on one input ``(N,)`` or a batch ``(D, N)``."""
    X, single = _as_batch(spec, X)
    out = _forward_cache(spec, theta, X)[2][-1]
    return out[0] if single else out


def _backward(spec, layers, pre, acts, G, per_sample: bool):
    """Propagate output cotangents ``G`` (D, M) back to the trainable parameters.

    Returns a ``(P,)`` vector-Jacobian product, or ``(D, P)`` per-sample
    gradients when ``per_sample`` is set.
    """
    D = G.shape[0]
    L = spec.n_layers
    pieces: list = [None] * L
    delta = G * _act_grad(spec.activations[-1], pre[-1], acts[-1])
    for l in range(L - 1, -1, -1):
        sw, sb = spec.scales(l)
        a_in = acts[l]
        if per_sample:
            gW = sw * (delta[:, :, None] * a_in[:, None, :]).reshape(D, -1)
            gb = sb * delta
            pieces[l] = np.concatenate([gW, gb], axis=1)
        else:
            gW = sw * (delta.T @ a_in)
            gb = sb * delta.sum(axis=0)
            pieces[l] = np.concatenate([gW.ravel(), gb])
        if l > 0:
            W = layers[l][0]
            delta = (sw * (delta @ W)) * _act_grad(spec.activations[l - 1], pre[l - 1], acts[l])
    return np.concatenate(pieces, axis=-1)


def vjp(spec: ModelSpec, theta: np.ndarray, X, G) -> np.ndarray:
    """``J(X)^T g`` for stacked output cotangents ``G`` of shape ``(D, M)``."""
    X, _ = _as_batch(spec, X)
    G = np.asarray(G, dtype=np.float64).reshape(X.shape[0], spec.n_outputs)
    layers, pre, acts = _forward_cache(spec, theta, X)
    return _backward(spec, layers, pre, acts, G, per_sample=False)


def jacobian(spec: ModelSpec, theta: np.ndarray, X) -> np.ndarray:
    """Exact Jacobian of the stacked outputs, shape ``(M*D, P)``.

    Row ``i*M + m`` is the gradient of output coordinate ``m`` of sample
    ``i``. One backward sweep per output coordinate, batched over samples.
    """
    X, _ = _as_batch(spec, X)
    D, M = X.shape[0], spec.n_outputs
    layers, pre, acts = _forward_cache(spec, theta, X)
    J = np.empty((D, M, spec.num_params))
    for m in range(M):
        G = np.zeros((D, M))
        G[:, m] = 1.0
        J[:, m, :] = _backward(spec, layers, pre, acts, G, per_sample=True)
    return J.reshape(D * M, spec.num_params)


def empirical_ntk(spec: ModelSpec, theta: np.ndarray, X, X2=None) -> np.ndarray:
    """Empirical tangent kernel ``J(X) J(X2)^T`` with ``(M*D, M*D')`` shape."""
    J1 = jacobian(spec, theta, X)
    J2 = J1 if X2 is None else jacobian(spec, theta, X2)
    return J1 @ J2.T
