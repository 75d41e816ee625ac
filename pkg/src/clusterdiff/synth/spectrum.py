"""Cooperative spectrum sensing with multi-antenna secondary users.

Each device is a cluster of antenna nodes that all estimate the stacked
basis weights of every primary user's power spectrum.  One frequency bin is
drawn per iteration, so a sample is one row of the node's regressor matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.special import ndtri

from ..topology import ClusteredNetwork, CombinerSet, uniform_combiners

__all__ = ["SpectrumEnv", "spectrum_env", "default_alpha", "gaussian_basis"]

FADING_RATIO = 0.2


def gaussian_basis(n_freq: int, n_basis: int, sigma2_b: float) -> np.ndarray:
    """Phi of shape (n_freq, n_basis); bins and centers both span [0, 1]."""
    f = np.linspace(0.0, 1.0, n_freq)
    fc = np.linspace(0.0, 1.0, n_basis)
    return np.exp(-((f[:, None] - fc[None, :]) ** 2) / (2.0 * sigma2_b))


def default_alpha(n_basis: int = 16) -> np.ndarray:
    """Weights of the two primary users, shape (2, 16)."""
    if n_basis != 16:
        raise ValueError("default weights are only defined for 16 basis functions")
    bump = [0.4, 0.38, 0.4]
    a1 = np.r_[np.zeros(10), bump, np.zeros(3)]
    a2 = np.r_[np.zeros(3), bump, np.zeros(10)]
    return np.stack([a1, a2])


@dataclass(frozen=True, eq=False)
class SpectrumEnv:
    network: ClusteredNetwork
    combiners: CombinerSet
    phi: np.ndarray        # (N_F, N_B)
    alpha: np.ndarray      # (N_P, N_B)
    p_bar: np.ndarray      # (N_S, N_P) true mean path loss per device
    p_hat: np.ndarray      # (N_S, N_P) estimated path loss (0 below threshold)
    device_pos: np.ndarray
    pu_pos: np.ndarray
    n_antennas: int
    noise_std: float

    @property
    def n_nodes(self) -> int:
        return self.network.n_nodes

    @property
    def dim(self) -> int:
        return self.alpha.size

    @property
    def w_star(self) -> np.ndarray:
        return np.tile(self.alpha.reshape(-1), (self.n_nodes, 1))

    @property
    def device_of(self) -> np.ndarray:
        return self.network.cluster_of

    def draw_block(self, rng: np.random.Generator, n: int):
        """x of shape (n, N, N_P N_B) and d of shape (n, N).

        Consumes one uniform array of shape (n, N, N_P + 2) per call.
        """
        N, n_p = self.n_nodes, self.alpha.shape[0]
        u = rng.random((n, N, n_p + 2))
        n_f = self.phi.shape[0]
        j = np.minimum((u[..., 0] * n_f).astype(np.intp), n_f - 1)
        rows = self.phi[j]                                   # (n, N, N_B)
        g = ndtri(u[..., 1:])
        p_bar = self.p_bar[self.device_of]                   # (N, N_P)
        p = p_bar * (1.0 + FADING_RATIO * g[..., :n_p])      # true path loss
        spectra = rows @ self.alpha.T                        # (n, N, N_P) = S_q(f_j)
        d = np.sum(p * spectra, axis=-1) + self.noise_std * g[..., n_p]
        p_hat = self.p_hat[self.device_of]
        x = (p_hat[None, :, :, None] * rows[:, :, None, :]).reshape(n, N, -1)
        return x, d


def _place_devices(rng, n_devices, comm_radius, pu_pos, min_gap, tries=1000):
    for _ in range(tries):
        pos = rng.random((n_devices, 2))
        gap = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        to_pu = np.linalg.norm(pos[:, None] - pu_pos[None, :], axis=-1)
        if to_pu.min() < min_gap:
            continue
        n_comp, _ = connected_components(sparse.csr_matrix(gap <= comm_radius), directed=False)
        if n_comp == 1:
            return pos
    raise ValueError(f"no connected placement of {n_devices} devices found within radius {comm_radius}")


def spectrum_env(p0: float, n_devices: int = 10, n_antennas: int = 1, n_freq: int = 80,
                 n_basis: int = 16, sigma2_b: float = 0.0025, noise_std: float = 0.01,
                 alpha=None, pu_pos=((0.15, 0.5), (0.85, 0.5)), device_pos=None,
                 comm_radius: float = 0.45, d_ref: float = 0.2,
                 placement_seed: int = 0) -> SpectrumEnv:
    """Build the multi-antenna sensing network.

    Parameters
    ----------
    p0 : float
        Synchronization threshold: path losses below it are estimated as 0.
    device_pos : array_like, shape (n_devices, 2), optional
        Device positions.  Drawn uniformly on the unit square (redrawn until
        the device graph is connected) when omitted.
    comm_radius : float
        Devices closer than this are linked antenna to antenna.
    d_ref : float
        Free-space reference distance, ``p_bar = (d_ref / d)**2``.
    """
    if n_devices < 1 or n_antennas < 1:
        raise ValueError("need at least one device and one antenna")
    pu_pos = np.atleast_2d(np.asarray(pu_pos, dtype=float))
    alpha = default_alpha(n_basis) if alpha is None else np.atleast_2d(np.asarray(alpha, dtype=float))
    if alpha.shape != (pu_pos.shape[0], n_basis):
        raise ValueError(f"alpha must have shape {(pu_pos.shape[0], n_basis)}, got {alpha.shape}")
    if device_pos is None:
        rng = np.random.default_rng(placement_seed)
        device_pos = _place_devices(rng, n_devices, comm_radius, pu_pos, min_gap=d_ref)
    device_pos = np.asarray(device_pos, dtype=float)
    if device_pos.shape != (n_devices, 2):
        raise ValueError(f"device_pos must have shape {(n_devices, 2)}")

    dist = np.linalg.norm(device_pos[:, None] - pu_pos[None, :], axis=-1)
    if (dist <= 0).any():
        raise ValueError("a device coincides with a primary user")
    p_bar = (d_ref / dist) ** 2
    p_hat = np.where(p_bar >= p0, p_bar, 0.0)

    n = n_devices * n_antennas
    owner = np.repeat(np.arange(n_devices), n_antennas)
    linked = np.linalg.norm(device_pos[:, None] - device_pos[None, :], axis=-1) <= comm_radius
    adj = linked[owner][:, owner]
    clusters = tuple(tuple(range(s * n_antennas, (s + 1) * n_antennas)) for s in range(n_devices))
    net = ClusteredNetwork(adj, clusters)
    return SpectrumEnv(net, uniform_combiners(net), gaussian_basis(n_freq, n_basis, sigma2_b), alpha,
                       p_bar, p_hat, device_pos, pu_pos, int(n_antennas), float(noise_std))
