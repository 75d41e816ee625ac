"""Streaming data for the linear regression model d_k = x_k^T w*_k + z_k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..topology import ClusteredNetwork, CombinerSet, uniform_combiners

__all__ = ["NodeEnvironment", "Sample", "draw_sample", "illustrative_env", "ILLUSTRATIVE"]


@dataclass(frozen=True)
class Sample:
    x: np.ndarray  # (N, L)
    d: np.ndarray  # (N,)


@dataclass(frozen=True, eq=False)
class NodeEnvironment:
    """Per-node truth, regressor covariance and noise variance.

    Parameters
    ----------
    w_star : ndarray, shape (N, L)
    R_x : ndarray, shape (N, L, L)
        Symmetric positive-definite covariances.
    sigma2_z : ndarray, shape (N,)
    network : ClusteredNetwork, optional
        When given, ``w_star`` must be identical across each cluster.
    """

    w_star: np.ndarray
    R_x: np.ndarray
    sigma2_z: np.ndarray
    network: ClusteredNetwork | None = None
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w_star, dtype=float)
        R = np.array(self.R_x, dtype=float)
        s = np.array(self.sigma2_z, dtype=float)
        if w.ndim != 2:
            raise ValueError(f"w_star must be (N, L), got shape {w.shape}")
        n, L = w.shape
        if R.shape != (n, L, L):
            raise ValueError(f"R_x must have shape {(n, L, L)}, got {R.shape}")
        if s.shape != (n,):
            raise ValueError(f"sigma2_z must have shape {(n,)}, got {s.shape}")
        if (s < 0).any():
            raise ValueError("noise variances must be nonnegative")
        if not np.allclose(R, np.swapaxes(R, 1, 2), rtol=0, atol=1e-12):
            raise ValueError("regressor covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("regressor covariance is not positive-definite") from exc
        if self.network is not None:
            if self.network.n_nodes != n:
                raise ValueError("network size does not match w_star")
            for q, members in enumerate(self.network.clusters):
                ref = w[members[0]]
                for k in members[1:]:
                    if not np.array_equal(w[k], ref):
                        raise ValueError(f"w_star differs inside cluster {q} (node {k})")
        for name, val in (("w_star", w), ("R_x", R), ("sigma2_z", s), ("chol", chol)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_nodes(self) -> int:
        return self.w_star.shape[0]

    @property
    def dim(self) -> int:
        return self.w_star.shape[1]

    @property
    def p_xd(self) -> np.ndarray:
        return np.einsum("kij,kj->ki", self.R_x, self.w_star)

    def draw_block(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw `n` consecutive iterations: x of shape (n, N, L), d of shape (n, N).

        One standard-normal array of shape (n, N, L + 1) is consumed per call,
        so splitting a run into blocks of any size yields the same stream.
        """
        L = self.dim
        g = rng.standard_normal((n, self.n_nodes, L + 1))
        x = np.einsum("kij,tkj->tki", self.chol, g[..., :L])
        d = np.einsum("tki,ki->tk", x, self.w_star) + np.sqrt(self.sigma2_z) * g[..., L]
        return x, d


def draw_sample(env, rng: np.random.Generator) -> Sample:
    x, d = env.draw_block(rng, 1)
    return Sample(x[0], d[0])


# Fixed setup for the 10-node, 4-cluster example.  Node ids are 0-based.
_ILLUSTRATIVE_CLUSTERS = ((0, 1, 2), (3, 4, 5), (6, 7), (8, 9))
_ILLUSTRATIVE_EDGES = (
    (0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (6, 7), (8, 9),
    (2, 3), (1, 6), (0, 7), (5, 8), (4, 9), (7, 8), (2, 4),
)
_W_O = np.array([0.5, -0.4])
_DELTA_W = np.array([
    [0.0287, -0.005],
    [0.0234, 0.005],
    [-0.0335, 0.0029],
    [0.0224, 0.00347],
])
# Drawn once as default_rng(20141).uniform(0.8, 1.2, 10) then .uniform(0.02, 0.12, 10),
# rounded to 4 decimals and frozen.
_SIGMA2_X = np.array([1.1489, 0.8839, 0.8717, 1.1151, 1.1519, 1.0313, 1.1388, 0.8104, 1.1583, 1.0226])
_SIGMA2_Z = np.array([0.0513, 0.0662, 0.0693, 0.0818, 0.0714, 0.1075, 0.0422, 0.0762, 0.0669, 0.1064])

ILLUSTRATIVE = {
    "clusters": _ILLUSTRATIVE_CLUSTERS,
    "edges": _ILLUSTRATIVE_EDGES,
    "w_o": _W_O,
    "delta_w": _DELTA_W,
    "sigma2_x": _SIGMA2_X,
    "sigma2_z": _SIGMA2_Z,
}


def illustrative_env(clusters=None) -> tuple[ClusteredNetwork, NodeEnvironment]:
    """10 nodes in 4 clusters, L = 2, R_x,k = sigma2_x,k I.

    `clusters` overrides the partition of the network (used to run the
    non-cooperative and per-node multitask variants on the same graph); the
    ground truth always follows the original 4-cluster partition.
    """
    net = ClusteredNetwork.from_edges(10, _ILLUSTRATIVE_EDGES, _ILLUSTRATIVE_CLUSTERS)
    w_star = np.empty((10, 2))
    for q, members in enumerate(_ILLUSTRATIVE_CLUSTERS):
        w_star[list(members)] = _W_O + _DELTA_W[q]
    R = _SIGMA2_X[:, None, None] * np.eye(2)
    env = NodeEnvironment(w_star, R, _SIGMA2_Z.copy(), network=net)
    if clusters is not None:
        net = net.with_clusters(clusters)
    return net, env


def illustrative_combiners(net: ClusteredNetwork) -> CombinerSet:
    return uniform_combiners(net)
