"""Numerical BIBO-stability audit of the linearized DGD flow.

The DGD state matrix ``(W - I) kron I_P - c Psi0`` is negative semidefinite
whenever ``W`` is symmetric doubly stochastic. A zero eigenvalue needs a
consensus direction ``1_Q kron z`` that every agent's Jacobian annihilates;
the audit screens for that through the per-parameter Jacobian column norms
and confirms with the spectral abscissa.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .flow import LinearFlowSystem, LinearizationAnchor, build_system
from .mixing import as_matrix

DS_TOL = 1e-10
NONNEG_TOL = 1e-12
MINIMALITY_TOL = 1e-10
STABLE_TOL = 1e-12
MARGINAL_TOL = 1e-10

VERDICTS = ("stable", "marginal", "violated-precondition")


@dataclass(frozen=True)
class DoublyStochasticCheck:
    passed: bool
    max_row_deviation: float
    max_col_deviation: float
    min_entry: float


def check_doubly_stochastic(W, tol: float = DS_TOL) -> DoublyStochasticCheck:
    W = as_matrix(W)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    row = float(np.abs(W.sum(axis=1) - 1.0).max())
    col = float(np.abs(W.sum(axis=0) - 1.0).max())
    low = float(W.min())
    return DoublyStochasticCheck(row < tol and col < tol and low >= -NONNEG_TOL, row, col, low)


def minimality_check(anchor: LinearizationAnchor) -> float:
    """Smallest, over parameters ``j``, of ``max_q ||J_q[:, j]||``.

    Zero means some parameter moves no agent's outputs, which puts a
    consensus vector in the null space of ``Psi0``.
    """
    col_norms = np.sqrt((anchor.J**2).sum(axis=1))  # (Q, P)
    return float(col_norms.max(axis=0).min())


def consensus_null_dimension(anchor: LinearizationAnchor, rtol: float = 1e-10) -> int:
    """Dimension of the consensus directions ``1_Q kron z`` annihilated by ``Psi0``.

    Equals ``P - rank([J_1; ...; J_Q])``. A zero here is the exact
    counterpart of the column screen in :func:`minimality_check`, which only
    catches coordinate-aligned null vectors.
    """
    stacked = anchor.J.reshape(-1, anchor.P)
    sv = np.linalg.svd(stacked, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return anchor.P
    return int(anchor.P - np.count_nonzero(sv > rtol * sv[0]))


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A``.

    Symmetric inputs go through the symmetric eigensolver.
    """
    A = np.asarray(A, dtype=np.float64)
    try:
        if np.array_equal(A, A.T):
            return float(np.linalg.eigvalsh(A)[-1])
        return float(np.linalg.eigvals(A).real.max())
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc


def smallest_eigenvalue_magnitude(A) -> float:
    A = np.asarray(A, dtype=np.float64)
    lam = np.linalg.eigvalsh(A) if np.array_equal(A, A.T) else np.linalg.eigvals(A)
    return float(np.abs(lam).min())


@dataclass(frozen=True)
class StabilityReport:
    algorithm: str
    spectral_abscissa: float
    doubly_stochastic: bool
    max_row_deviation: float
    max_col_deviation: float
    min_entry: float
    minimality: float
    consensus_nullity: int
    verdict: str
    informational: bool

    def to_text(self) -> str:
        """Flat ``key = value`` block, one entry per line."""
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def classify(ds_pass: bool, minimality: float, abscissa: float) -> str:
    if not ds_pass:
        return "violated-precondition"
    if abscissa < -STABLE_TOL and minimality > MINIMALITY_TOL:
        return "stable"
    if abscissa <= MARGINAL_TOL:
        return "marginal"
    return "violated-precondition"


def bibo_report(
    algorithm: str,
    W,
    anchor: LinearizationAnchor,
    eta: float,
    system: LinearFlowSystem | None = None,
) -> StabilityReport:
    """Run the doubly-stochastic, minimality and spectral checks.

    Verdicts for ``atc`` and ``cta`` are flagged informational: the
    stability argument covers DGD only.
    """
    ds = check_doubly_stochastic(W)
    if system is None:
        system = build_system(algorithm, anchor, as_matrix(W), eta, materialize=True)
    abscissa = spectral_abscissa(system.dense())
    mini = minimality_check(anchor)
    return StabilityReport(
        algorithm=algorithm,
        spectral_abscissa=abscissa,
        doubly_stochastic=ds.passed,
        max_row_deviation=ds.max_row_deviation,
        max_col_deviation=ds.max_col_deviation,
        min_entry=ds.min_entry,
        minimality=mini,
        consensus_nullity=consensus_null_dimension(anchor),
        verdict=classify(ds.passed, mini, abscissa),
        informational=algorithm != "dgd",
    )
