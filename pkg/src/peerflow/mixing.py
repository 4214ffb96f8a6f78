"""Communication graphs, Metropolis-Hastings mixing matrices and lifted operators.

Agents are indexed ``0 .. Q-1``. Stacked vectors hold ``Q`` contiguous blocks
of length ``P``; block ``q`` belongs to agent ``q``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TOPOLOGIES = ("cycle", "star", "complete", "custom")


class TopologyError(ValueError):
    """Raised for invalid or disconnected communication graphs."""


def _canonical(q: int, r: int) -> tuple[int, int]:
    return (q, r) if q < r else (r, q)


@dataclass(frozen=True)
class CommGraph:
    """Undirected, static, connected graph over ``num_agents`` agents.

    Self-loops are never stored; every agent implicitly belongs to its own
    neighborhood.
    """

    num_agents: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.num_agents < 1:
            raise TopologyError(f"num_agents must be positive, got {self.num_agents}")
        for q, r in self.edges:
            if q == r:
                raise TopologyError(f"self-loop ({q},{r}) not allowed")
            if q > r:
                raise TopologyError(f"edge ({q},{r}) not in canonical (min, max) order")
            if q < 0 or r >= self.num_agents:
                raise TopologyError(f"edge ({q},{r}) out of range for Q={self.num_agents}")
        components = _components(self.num_agents, self.edges)
        if len(components) > 1:
            sizes = sorted(len(c) for c in components)
            raise TopologyError(
                f"graph is disconnected: {len(components)} components of sizes {sizes}"
            )

    @classmethod
    def from_edges(cls, num_agents: int, edges: Iterable[tuple[int, int]]) -> "CommGraph":
        """Build a graph from an arbitrary edge list, dropping duplicates."""
        canon = set()
        for q, r in edges:
            q, r = int(q), int(r)
            if q == r:
                raise TopologyError(f"self-loop ({q},{r}) not allowed")
            canon.add(_canonical(q, r))
        return cls(num_agents, frozenset(canon))

    def neighbors(self, q: int) -> list[int]:
        out = [r for a, r in self.edges if a == q] + [a for a, r in self.edges if r == q]
        return sorted(out)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_agents, dtype=int)
        for q, r in self.edges:
            deg[q] += 1
            deg[r] += 1
        return deg


def _components(n: int, edges: Iterable[tuple[int, int]]) -> list[set[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for q, r in edges:
        adj[q].append(r)
        adj[r].append(q)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = {start}
        seen[start] = True
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def build_topology(
    kind: str, Q: int, custom_edges: Iterable[tuple[int, int]] | None = None
) -> CommGraph:
    """Return one of the named topologies on ``Q`` agents.

    The star hub is agent 0 and the cycle links ``i`` to ``(i + 1) % Q``.
    """
    if Q < 2:
        raise TopologyError(f"need at least 2 agents, got Q={Q}")
    if kind == "cycle":
        edges = [(i, (i + 1) % Q) for i in range(Q)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, Q)]
    elif kind == "complete":
        edges = [(i, j) for i in range(Q) for j in range(i + 1, Q)]
    elif kind == "custom":
        if custom_edges is None:
            raise TopologyError("custom topology requires an edge list")
        edges = list(custom_edges)
    else:
        raise TopologyError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    return CommGraph.from_edges(Q, edges)


def read_edge_file(path: str | Path) -> list[tuple[int, int]]:
    """Parse a plain-text edge list, one ``q r`` pair per line.

    Blank lines and ``#`` comments are ignored.
    """
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"{path}:{lineno}: expected 'q r', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise TopologyError(f"{path}:{lineno}: non-integer agent index in {line!r}") from None
    return edges


def topology_from_string(spec: str, Q: int) -> CommGraph:
    """Resolve ``cycle`` / ``star`` / ``complete`` / ``custom:<path>``."""
    if spec.startswith("custom:"):
        return build_topology("custom", Q, read_edge_file(spec[len("custom:"):]))
    if spec == "custom":
        raise TopologyError("custom topology must be given as 'custom:<path>'")
    return build_topology(spec, Q)


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric, doubly stochastic, nonnegative ``Q x Q`` weight matrix."""

    W: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"mixing matrix must be square, got shape {W.shape}")
        if not np.array_equal(W, W.T):
            raise ValueError("mixing matrix is not symmetric")
        if W.min() < 0:
            raise ValueError(f"mixing matrix has negative entry {W.min():.3g}")
        dev = max(np.abs(W.sum(axis=0) - 1).max(), np.abs(W.sum(axis=1) - 1).max())
        if dev >= 1e-12:
            raise ValueError(f"mixing matrix is not doubly stochastic (deviation {dev:.3g})")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def Q(self) -> int:
        return self.W.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.W if dtype is None else self.W.astype(dtype)


def as_matrix(W: MixingMatrix | np.ndarray) -> np.ndarray:
    return W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=np.float64)


def metropolis_hastings(graph: CommGraph) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg q, deg r))`` on each edge.

    The self-weight absorbs the remainder of each row. Entries are written
    symmetrically so ``W == W.T`` holds exactly.
    """
    Q = graph.num_agents
    deg = graph.degrees()
    W = np.zeros((Q, Q))
    for q, r in sorted(graph.edges):
        w = 1.0 / (1.0 + max(deg[q], deg[r]))
        W[q, r] = w
        W[r, q] = w
    for q in range(Q):
        # neighbor order fixed by index so the diagonal is reproducible
        W[q, q] = 1.0 - sum(W[q, r] for r in range(Q) if r != q)
    return MixingMatrix(W)


@dataclass(frozen=True)
class LiftedOperator:
    """Matrix-free ``base (x) I_P`` (``kron``) or ``(base - I) (x) I_P`` (``shifted-kron``)."""

    base: np.ndarray
    P: int
    mode: str = "kron"

    def __post_init__(self) -> None:
        if self.mode not in ("kron", "shifted-kron"):
            raise ValueError(f"unknown lifted operator mode {self.mode!r}")
        base = as_matrix(self.base)
        if self.mode == "shifted-kron":
            base = base - np.eye(base.shape[0])
        object.__setattr__(self, "_effective", base)

    @property
    def Q(self) -> int:
        return self._effective.shape[0]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return apply_lifted(self, v)

    def dense(self) -> np.ndarray:
        """Materialize the ``QP x QP`` Kronecker matrix (small sizes only)."""
        return np.kron(self._effective, np.eye(self.P))


def apply_lifted(op: LiftedOperator, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    Q, P = op.Q, op.P
    if v.shape != (Q * P,):
        raise ValueError(f"stacked vector has shape {v.shape}, expected ({Q * P},)")
    return (op._effective @ v.reshape(Q, P)).reshape(-1)


def spectral_gap(W: MixingMatrix | np.ndarray) -> float:
    """``1 - |lambda_2|`` where ``lambda_2`` is the second-largest eigenvalue in magnitude."""
    lam = np.sort(np.abs(np.linalg.eigvalsh(as_matrix(W))))[::-1]
    if lam.size < 2:
        return 1.0
    return float(1.0 - lam[1])
