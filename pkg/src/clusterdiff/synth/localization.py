"""Non-point target localization: each cluster locates one point of an arc.

Nodes of cluster q sit in the cone of axis (center, w_q) at a distance of
3R to 4R from the arc center and observe noisy projections of the target
point onto their perturbed line of sight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..topology import ClusteredNetwork, CombinerSet, identity_exchange, uniform_combiners

__all__ = ["LocalizationEnv", "localization_env"]


@dataclass(frozen=True, eq=False)
class LocalizationEnv:
    network: ClusteredNetwork
    combiners: CombinerSet
    positions: np.ndarray   # (N, 2)
    targets: np.ndarray     # (Q, 2) arc points
    u: np.ndarray           # (N, 2) unit line of sight toward the cluster target
    sigma2_v: float
    sigma2_alpha: float
    sigma2_beta: float
    w_star: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "w_star", self.targets[self.network.cluster_of])

    @property
    def n_nodes(self) -> int:
        return self.network.n_nodes

    @property
    def dim(self) -> int:
        return 2

    @property
    def u_perp(self) -> np.ndarray:
        return np.stack([-self.u[:, 1], self.u[:, 0]], axis=1)

    @property
    def R_x(self) -> np.ndarray:
        """Second moment of the perturbed direction vectors."""
        u, up = self.u, self.u_perp
        return ((1.0 + self.sigma2_beta) * np.einsum("ki,kj->kij", u, u)
                + self.sigma2_alpha * np.einsum("ki,kj->kij", up, up))

    @property
    def sigma2_z(self) -> np.ndarray:
        return np.full(self.n_nodes, self.sigma2_v)

    @property
    def p_xd(self) -> np.ndarray:
        return np.einsum("kij,kj->ki", self.R_x, self.w_star)

    def draw_block(self, rng: np.random.Generator, n: int):
        g = rng.standard_normal((n, self.n_nodes, 3))
        a = np.sqrt(self.sigma2_alpha) * g[..., 0:1]
        b = np.sqrt(self.sigma2_beta) * g[..., 1:2]
        x = self.u + a * self.u_perp + b * self.u
        d = np.einsum("tki,ki->tk", x, self.w_star) + np.sqrt(self.sigma2_v) * g[..., 2]
        return x, d


def _place(rng, n, r_in, r_out, th_lo, th_hi, placement):
    if placement == "uniform":
        n_r = int(np.floor(np.sqrt(n)))
        while n % n_r:
            n_r -= 1
        n_t = n // n_r
        radii = np.linspace(r_in, r_out, n_r + 2)[1:-1]
        angles = np.linspace(th_lo, th_hi, n_t + 2)[1:-1]
        rr, tt = np.meshgrid(radii, angles, indexing="ij")
        rr, tt = rr.ravel(), tt.ravel()
    elif placement == "random":
        # area-uniform in the annular sector
        rr = np.sqrt(rng.uniform(r_in ** 2, r_out ** 2, n))
        tt = rng.uniform(th_lo, th_hi, n)
    else:
        raise ValueError(f"unknown placement '{placement}'")
    return np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=1)


def localization_env(n_clusters: int = 10, nodes_per_cluster: int = 10, radius: float = 1.0,
                     center=(0.0, 0.0), arc_span: float = np.pi / 4, placement: str = "uniform",
                     comm_radius: float | None = None, sigma2_v: float = 0.5,
                     sigma2_alpha: float = 0.1, sigma2_beta: float = 0.01,
                     placement_seed: int = 0) -> LocalizationEnv:
    """Build the arc-localization network.

    The arc of `radius` around `center` spans `arc_span` radians, split into
    `n_clusters` cones of equal angle.  Nodes connect when they are within
    `comm_radius` of each other and belong to the same or adjacent clusters
    (no distance limit by default).
    Boundary clusters get zero regularization rows, C = I and A is uniform.

    Raises
    ------
    ValueError
        If a node coincides with its target point, or the graph is disconnected.
    """
    Q, n_per = int(n_clusters), int(nodes_per_cluster)
    if Q < 1 or n_per < 1:
        raise ValueError("need at least one cluster and one node per cluster")
    center = np.asarray(center, dtype=float)
    delta = arc_span / Q
    theta = (np.arange(Q) - (Q - 1) / 2.0) * delta + np.pi / 2
    targets = center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    rng = np.random.default_rng(placement_seed)
    pos, clusters = [], []
    for q in range(Q):
        pts = _place(rng, n_per, 3 * radius, 4 * radius, theta[q] - delta / 2, theta[q] + delta / 2, placement)
        clusters.append(tuple(range(q * n_per, (q + 1) * n_per)))
        pos.append(center + pts)
    pos = np.concatenate(pos)
    owner = np.repeat(np.arange(Q), n_per)

    diff = targets[owner] - pos
    dist = np.linalg.norm(diff, axis=1)
    if (dist < 1e-12).any():
        k = int(np.argmax(dist < 1e-12))
        raise ValueError(f"node {k} coincides with its target point")
    u = diff / dist[:, None]

    if comm_radius is None:
        comm_radius = np.inf
    gap = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    adjacent = np.abs(owner[:, None] - owner[None, :]) <= 1
    adj = (gap <= comm_radius) & adjacent
    np.fill_diagonal(adj, True)
    try:
        net = ClusteredNetwork(adj, tuple(clusters))
    except ValueError as exc:
        raise ValueError(f"localization network is not usable: {exc}") from exc

    zero_rows = set(clusters[0]) | set(clusters[-1])
    comb = uniform_combiners(net, zero_rows=zero_rows)
    comb = comb.replace(C=identity_exchange(net))
    return LocalizationEnv(net, comb, pos, targets, u, float(sigma2_v), float(sigma2_alpha), float(sigma2_beta))
