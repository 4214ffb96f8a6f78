"""Datasets: MNIST IDX ingestion, half-moons, Gaussian-blob stand-ins, iid agent splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray  # (n, N)
    targets: np.ndarray  # (n, M)

    def __post_init__(self) -> None:
        X = np.asarray(self.inputs, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError(f"inputs {X.shape} and targets {Y.shape} do not pair up")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def N(self) -> int:
        return self.inputs.shape[1]

    @property
    def M(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class AgentData:
    """Per-agent local datasets with a common size ``D``.

    ``inputs`` has shape ``(Q, D, N)`` and ``targets`` ``(Q, D, M)``.
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.inputs, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        if Y.ndim == 2:
            Y = Y[:, :, None]
        if X.ndim != 3 or Y.ndim != 3 or X.shape[:2] != Y.shape[:2]:
            raise ValueError(f"agent inputs {X.shape} and targets {Y.shape} do not pair up")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @property
    def Q(self) -> int:
        return self.inputs.shape[0]

    @property
    def D(self) -> int:
        return self.inputs.shape[1]

    @property
    def N(self) -> int:
        return self.inputs.shape[2]

    @property
    def M(self) -> int:
        return self.targets.shape[2]


# -- IDX -------------------------------------------------------------------


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header at byte offset 0 ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IDXFormatError(
            f"{path}: bad magic at byte offset 0: expected 0x{expected_magic:08x}, found 0x{magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise IDXFormatError(
            f"{path}: truncated payload at byte offset {len(raw)}, expected {need} bytes for dims {dims}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=need - header, offset=header).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (1-D labels or 3-D images)."""
    arr = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_mnist_idx(images_path, labels_path, keep_digits=(0, 1)) -> LabeledDataset:
    """Load MNIST IDX files, keep ``keep_digits``, flatten and scale pixels to [0, 1].

    Targets are the digit values themselves (scalar, M=1).
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise IDXFormatError(f"{images_path}: expected 3 dimensions, found {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"count mismatch at byte offset 4: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    keep = np.isin(labels, np.asarray(keep_digits))
    X = images[keep].reshape(int(keep.sum()), -1).astype(np.float64) / 255.0
    y = labels[keep].astype(np.float64)
    return LabeledDataset(X, y[:, None])


# -- generators ------------------------------------------------------------


def half_moons(n: int, noise_std: float = 0.1, seed: int = 0) -> LabeledDataset:
    """Two interleaved half circles in the plane.

    ``n // 2`` points on ``(cos t, sin t)`` get label 0; the remaining points on
    ``(1 - cos t, 0.5 - sin t)`` get label 1, with ``t ~ U[0, pi]``.
    """
    if n < 2:
        raise ValueError(f"half_moons needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower])
    if noise_std > 0:
        X = X + noise_std * rng.standard_normal(X.shape)
    y = np.concatenate([np.zeros(n0), np.ones(n1)])
    return LabeledDataset(X, y[:, None])


def gaussian_blobs(n: int, n_features: int = 784, spread: float = 0.15, seed: int = 0) -> LabeledDataset:
    """Two-class Gaussian blobs standing in for MNIST 0/1 when the files are absent.

    Class prototypes are drawn uniformly from ``[0, 1]^n_features``; samples
    add isotropic noise of std ``spread``. Labels alternate 0/1 before a
    seeded shuffle.
    """
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.0, 1.0, size=(2, n_features))
    y = np.arange(n) % 2
    rng.shuffle(y)
    X = protos[y] + spread * rng.standard_normal((n, n_features))
    return LabeledDataset(X, y.astype(np.float64)[:, None])


# -- splitting -------------------------------------------------------------


def split_iid(source: LabeledDataset, Q: int, D: int, seed: int = 0) -> AgentData:
    """Draw ``Q`` local datasets of ``D`` samples each, uniformly at random.

    Shards are disjoint when ``Q * D <= len(source)``; otherwise every shard
    is sampled with replacement.
    """
    n = len(source)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if Q < 1 or D < 1:
        raise ValueError(f"need Q >= 1 and D >= 1, got Q={Q}, D={D}")
    rng = np.random.default_rng(seed)
    if Q * D <= n:
        idx = rng.permutation(n)[: Q * D].reshape(Q, D)
    else:
        idx = rng.integers(0, n, size=(Q, D))
    return AgentData(source.inputs[idx], source.targets[idx])


def stack_targets(data: AgentData) -> np.ndarray:
    """Labels flattened agent-major, then sample, then output coordinate."""
    return data.targets.reshape(-1).copy()
