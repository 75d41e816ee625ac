"""Network graph, cluster partition and the combiner / regularizer matrices.

Nodes and clusters are numbered from 0 internally.  The JSON document format
(see :func:`network_to_dict`) uses the same 0-based ids.

Conventions for the three N x N matrices:

* ``A[l, k]`` weights the intermediate estimate of node ``l`` when node ``k``
  combines.  Columns sum to one (left-stochastic).
* ``C[l, k]`` weights the data of node ``l`` in the adaptation step of node
  ``k``.  Rows sum to one (right-stochastic).
* ``P[k, l]`` is the regularization weight that node ``k`` puts on its
  extra-cluster neighbor ``l``.  Rows sum to one, or to zero for nodes without
  extra-cluster neighbors (or rows explicitly zeroed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csgraph

__all__ = [
    "ClusteredNetwork",
    "CombinerSet",
    "ConstraintViolation",
    "StructuralError",
    "validate",
    "check",
    "uniform_combiners",
    "identity_exchange",
    "singleton_clusters",
    "single_cluster",
    "network_to_dict",
    "network_from_dict",
]

STOCHASTIC_TOL = 1e-12


class StructuralError(ValueError):
    """Malformed input: wrong shapes, bad partition, disconnected graph."""


class ConstraintViolation(ValueError):
    """A combiner matrix breaks a stochasticity or support rule."""


@dataclass(frozen=True, eq=False)
class ClusteredNetwork:
    """Undirected connected graph with a partition of its nodes into clusters.

    Build it with :meth:`from_edges`; the constructor expects an adjacency
    matrix that already has ``True`` on the diagonal.
    """

    adjacency: np.ndarray
    clusters: tuple[tuple[int, ...], ...]
    cluster_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] == 0:
            raise StructuralError(f"adjacency must be a nonempty square matrix, got shape {adj.shape}")
        n = adj.shape[0]
        if not np.array_equal(adj, adj.T):
            raise StructuralError("adjacency is not symmetric")
        if not adj.diagonal().all():
            raise StructuralError("every node must be its own neighbor")

        clusters = tuple(tuple(int(k) for k in c) for c in self.clusters)
        owner = np.full(n, -1, dtype=int)
        for q, members in enumerate(clusters):
            if not members:
                raise StructuralError(f"cluster {q} is empty")
            for k in members:
                if not 0 <= k < n:
                    raise StructuralError(f"cluster {q} references node {k} outside 0..{n - 1}")
                if owner[k] >= 0:
                    raise StructuralError(f"node {k} belongs to clusters {owner[k]} and {q}")
                owner[k] = q
        missing = np.flatnonzero(owner < 0)
        if missing.size:
            raise StructuralError(f"nodes {missing.tolist()} are not assigned to any cluster")

        n_comp, _ = csgraph.connected_components(adj, directed=False)
        if n_comp != 1:
            raise StructuralError(f"graph is disconnected ({n_comp} components)")

        adj = adj.copy()
        adj.setflags(write=False)
        owner.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "cluster_of", owner)

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[Sequence[int]],
                   clusters: Sequence[Sequence[int]]) -> "ClusteredNetwork":
        adj = np.eye(n_nodes, dtype=bool)
        for e in edges:
            k, l = (int(v) for v in e)
            if not (0 <= k < n_nodes and 0 <= l < n_nodes):
                raise StructuralError(f"edge ({k}, {l}) references a node outside 0..{n_nodes - 1}")
            adj[k, l] = adj[l, k] = True
        return cls(adj, tuple(tuple(c) for c in clusters))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def same_cluster(self) -> np.ndarray:
        """Boolean matrix, ``[k, l]`` true when k and l share a cluster."""
        return self.cluster_of[:, None] == self.cluster_of[None, :]

    @property
    def intra(self) -> np.ndarray:
        """``[k, l]`` true when l is in N_k and in the cluster of k."""
        return self.adjacency & self.same_cluster

    @property
    def extra(self) -> np.ndarray:
        """``[k, l]`` true when l is in N_k but outside the cluster of k."""
        return self.adjacency & ~self.same_cluster

    def edges(self) -> list[tuple[int, int]]:
        k, l = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(k.tolist(), l.tolist()))

    def with_clusters(self, clusters: Sequence[Sequence[int]]) -> "ClusteredNetwork":
        return ClusteredNetwork(self.adjacency, tuple(tuple(c) for c in clusters))


def singleton_clusters(n_nodes: int) -> tuple[tuple[int, ...], ...]:
    return tuple((k,) for k in range(n_nodes))


def single_cluster(n_nodes: int) -> tuple[tuple[int, ...], ...]:
    return (tuple(range(n_nodes)),)


@dataclass(frozen=True, eq=False)
class CombinerSet:
    """The matrices A (combination), C (data exchange) and P (regularization)."""

    A: np.ndarray
    C: np.ndarray
    P: np.ndarray
    zero_rows: frozenset = frozenset()

    def __post_init__(self):
        for name in ("A", "C", "P"):
            m = np.array(getattr(self, name), dtype=float)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "zero_rows", frozenset(int(k) for k in self.zero_rows))

    def replace(self, **changes) -> "CombinerSet":
        kw = dict(A=self.A, C=self.C, P=self.P, zero_rows=self.zero_rows)
        kw.update(changes)
        return CombinerSet(**kw)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def check(network: ClusteredNetwork, combiners: CombinerSet, tol: float = STOCHASTIC_TOL) -> str | None:
    """Return a message describing the first violated rule, or ``None``.

    Raises
    ------
    StructuralError
        If a matrix does not have shape (N, N) or holds non-finite values.
    """
    n = network.n_nodes
    for name in ("A", "C", "P"):
        m = getattr(combiners, name)
        if m.shape != (n, n):
            raise StructuralError(f"{name} has shape {m.shape}, expected ({n}, {n})")
        if not np.isfinite(m).all():
            raise StructuralError(f"{name} contains non-finite entries")
    for k in combiners.zero_rows:
        if not 0 <= k < n:
            raise StructuralError(f"zero row {k} outside 0..{n - 1}")

    A, C, P = combiners.A, combiners.C, combiners.P
    intra, extra = network.intra, network.extra

    for name, m in (("A", A), ("C", C), ("P", P)):
        neg = np.argwhere(m < 0)
        if neg.size:
            i, j = neg[0]
            return f"{name}[{i}, {j}] = {_fmt(m[i, j])} is negative"

    # a_{lk} allowed only for l in N_k ∩ C(k): support of column k is intra[k, :]
    bad = np.argwhere((A != 0) & ~intra.T)
    if bad.size:
        l, k = bad[0]
        return f"A[{l}, {k}] = {_fmt(A[l, k])} but node {l} is not an intra-cluster neighbor of node {k}"
    col = A.sum(axis=0)
    off = np.flatnonzero(np.abs(col - 1.0) > tol)
    if off.size:
        k = off[0]
        return f"column {k} of A sums to {_fmt(col[k])}"

    # c_{lk} allowed only for k in N_l ∩ C(l)
    bad = np.argwhere((C != 0) & ~intra)
    if bad.size:
        l, k = bad[0]
        return f"C[{l}, {k}] = {_fmt(C[l, k])} but node {k} is not an intra-cluster neighbor of node {l}"
    row = C.sum(axis=1)
    off = np.flatnonzero(np.abs(row - 1.0) > tol)
    if off.size:
        l = off[0]
        return f"row {l} of C sums to {_fmt(row[l])}"

    bad = np.argwhere((P != 0) & ~extra)
    if bad.size:
        k, l = bad[0]
        return f"P[{k}, {l}] = {_fmt(P[k, l])} but node {l} is not an extra-cluster neighbor of node {k}"
    row = P.sum(axis=1)
    for k in range(n):
        if k in combiners.zero_rows or not extra[k].any():
            if row[k] != 0.0:
                return f"row {k} of P must be zero but sums to {_fmt(row[k])}"
        elif abs(row[k] - 1.0) > tol:
            return f"row {k} of P sums to {_fmt(row[k])}"
    return None


def validate(network: ClusteredNetwork, combiners: CombinerSet, tol: float = STOCHASTIC_TOL) -> None:
    """Raise :class:`ConstraintViolation` if :func:`check` reports a problem."""
    msg = check(network, combiners, tol)
    if msg is not None:
        raise ConstraintViolation(msg)


def _uniform_columns(support: np.ndarray) -> np.ndarray:
    # support[l, k] -> column k gets 1/|support[:, k]| on its support
    counts = support.sum(axis=0)
    out = np.zeros(support.shape)
    nz = counts > 0
    out[:, nz] = support[:, nz] / counts[nz]
    return out


def uniform_combiners(network: ClusteredNetwork, zero_rows: Iterable[int] = ()) -> CombinerSet:
    """Averaging-rule combiners.

    ``a_{lk} = 1/|N_k ∩ C(k)|``, ``c_{lk} = 1/|N_l ∩ C(l)|`` and
    ``rho_{kl} = 1/|N_k \\ C(k)|`` on their supports.  Rows of P listed in
    `zero_rows`, and rows of nodes without extra-cluster neighbors, are zero.
    """
    intra, extra = network.intra, network.extra
    A = _uniform_columns(intra.T)
    C = _uniform_columns(intra.T).T
    zero_rows = frozenset(int(k) for k in zero_rows)
    ex = extra.copy()
    for k in zero_rows:
        ex[k] = False
    P = _uniform_columns(ex.T).T
    return CombinerSet(A, C, P, zero_rows)


def identity_exchange(network: ClusteredNetwork) -> np.ndarray:
    """C = I: every node adapts on its own data only."""
    return np.eye(network.n_nodes)


# --- JSON documents ---------------------------------------------------------

def _matrix_doc(m: np.ndarray, mode: str) -> dict:
    if mode == "explicit":
        return {"mode": "explicit", "matrix": m.tolist()}
    return {"mode": mode}


def network_to_dict(network: ClusteredNetwork, combiners: CombinerSet | None = None,
                    modes: dict | None = None) -> dict:
    """Serialize to the JSON document layout.

    `modes` maps "A", "C", "P" to "uniform" / "identity" / "explicit";
    missing keys default to "explicit".
    """
    doc = {
        "n_nodes": network.n_nodes,
        "edges": [list(e) for e in network.edges()],
        "clusters": [list(c) for c in network.clusters],
    }
    if combiners is not None:
        modes = modes or {}
        for name in ("A", "C", "P"):
            doc[name] = _matrix_doc(getattr(combiners, name), modes.get(name, "explicit"))
        doc["P"]["zero_rows"] = sorted(combiners.zero_rows)
    return doc


def network_from_dict(doc: dict) -> tuple[ClusteredNetwork, CombinerSet]:
    """Parse a network document; matrices default to the uniform rule.

    Raises
    ------
    StructuralError
        For missing keys or bad matrix modes (message names the key).
    """
    for key in ("n_nodes", "edges", "clusters"):
        if key not in doc:
            raise StructuralError(f"network document is missing key '{key}'")
    net = ClusteredNetwork.from_edges(int(doc["n_nodes"]), doc["edges"], doc["clusters"])
    p_doc = doc.get("P", {"mode": "uniform"})
    zero_rows = p_doc.get("zero_rows", [])
    base = uniform_combiners(net, zero_rows)
    mats = {}
    for name in ("A", "C", "P"):
        sub = doc.get(name, {"mode": "uniform"})
        mode = sub.get("mode", "uniform")
        if mode == "uniform":
            mats[name] = getattr(base, name)
        elif mode == "identity":
            if name == "P":
                raise StructuralError("P: mode 'identity' is not allowed")
            mats[name] = np.eye(net.n_nodes)
        elif mode == "explicit":
            if "matrix" not in sub:
                raise StructuralError(f"{name}: explicit mode requires key 'matrix'")
            m = np.asarray(sub["matrix"], dtype=float)
            if m.shape != (net.n_nodes, net.n_nodes):
                raise StructuralError(f"{name}.matrix has shape {m.shape}, expected ({net.n_nodes}, {net.n_nodes})")
            mats[name] = m
        elif mode == "metropolis":
            raise StructuralError(f"{name}: mode 'metropolis' is reserved but not implemented")
        else:
            raise StructuralError(f"{name}: unknown mode '{mode}'")
    return net, CombinerSet(mats["A"], mats["C"], mats["P"], zero_rows)
