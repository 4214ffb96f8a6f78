"""Matrix exponential by scaling and squaring with Padé approximants.

Follows Higham (2005): choose the lowest Padé degree in {3, 5, 7, 9} whose
1-norm bound covers ``||A||_1``; otherwise scale ``A`` by ``2**-s`` so the
degree-13 approximant applies, then square ``s`` times.
"""

from __future__ import annotations

import math

import numpy as np

_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ),
}


def _add_diag(M: np.ndarray, c: float) -> np.ndarray:
    M[np.diag_indices_from(M)] += c
    return M


def _pade_low(A: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[m]
    A2 = A @ A
    powers = [None, A2]  # powers[j] = A^(2j)
    for _ in range(2, (m - 1) // 2 + 1):
        powers.append(powers[-1] @ A2)
    U = _add_diag(np.zeros_like(A), b[1])
    V = _add_diag(np.zeros_like(A), b[0])
    for j in range(1, (m - 1) // 2 + 1):
        U += b[2 * j + 1] * powers[j]
        V += b[2 * j] * powers[j]
    return A @ U, V


def _pade13(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[13]
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    inner = b[13] * A6 + b[11] * A4 + b[9] * A2
    W = A6 @ inner
    W += b[7] * A6 + b[5] * A4 + b[3] * A2
    U = A @ _add_diag(W, b[1])
    del W, inner
    inner = b[12] * A6 + b[10] * A4 + b[8] * A2
    V = A6 @ inner
    V += b[6] * A6 + b[4] * A4 + b[2] * A2
    return U, _add_diag(V, b[0])


def expm(A) -> np.ndarray:
    """Exponential of a real square matrix."""
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise ValueError("expm input contains non-finite entries")
    n = A.shape[0]
    if n == 0:
        return A
    norm1 = np.abs(A).sum(axis=0).max()
    if norm1 == 0.0:
        return np.eye(n)
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            U, V = _pade_low(A, m)
            return np.linalg.solve(V - U, V + U)
    s = max(0, math.ceil(math.log2(norm1 / _THETA[13])))
    if s:
        A *= 2.0 ** -s
    U, V = _pade13(A)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def expm_multiply(apply, v, t: float = 1.0, norm_bound: float = 1.0, max_terms: int = 60) -> np.ndarray:
    """``exp(t A) v`` from matrix-vector products only.

    ``apply`` computes ``A x``; ``norm_bound`` must bound ``||A||_1`` (any
    consistent operator norm works). The interval is split into ``s`` pieces
    with ``t ||A|| / s <= 1`` and each piece sums the Taylor series until two
    consecutive terms fall below unit roundoff relative to the partial sum.
    """
    x = np.array(v, dtype=np.float64)
    if t == 0.0:
        return x
    s = max(1, math.ceil(abs(t) * norm_bound))
    tau = t / s
    tol = 2.0**-53
    for _ in range(s):
        F = x.copy()
        term = x
        prev = np.inf
        for k in range(1, max_terms + 1):
            term = (tau / k) * apply(term)
            F += term
            size = np.abs(term).max()
            if size + prev <= tol * np.abs(F).max():
                break
            prev = size
        x = F
    return x
