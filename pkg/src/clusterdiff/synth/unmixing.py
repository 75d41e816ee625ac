"""Synthetic hyperspectral image for spatially regularized unmixing.

Pixels are nodes of a 4-neighbor lattice, each its own cluster.  Endmembers
are smooth positive spectra and abundance maps are piecewise constant.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..topology import ClusteredNetwork, singleton_clusters

__all__ = ["UnmixEnv", "unmix_env", "synthetic_endmembers", "lattice_edges", "similarity_weights"]


def synthetic_endmembers(rng: np.random.Generator, n_bands: int, n_endmembers: int) -> np.ndarray:
    """M of shape (L, R): each column is a baseline plus 2 to 4 Gaussian bumps, max 1."""
    grid = np.linspace(0.0, 1.0, n_bands)
    M = np.empty((n_bands, n_endmembers))
    for r in range(n_endmembers):
        n_bumps = rng.integers(2, 5)
        s = np.full(n_bands, rng.uniform(0.05, 0.2))
        for _ in range(n_bumps):
            c, w, h = rng.uniform(0, 1), rng.uniform(0.03, 0.15), rng.uniform(0.2, 1.0)
            s += h * np.exp(-0.5 * ((grid - c) / w) ** 2)
        M[:, r] = s / s.max()
    return M


def lattice_edges(height: int, width: int) -> np.ndarray:
    """Undirected 4-neighbor edges (i, j) with i < j, row-major pixel ids."""
    idx = np.arange(height * width).reshape(height, width)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([right, down])


def similarity_weights(Y: np.ndarray, edges: np.ndarray) -> sparse.csr_matrix:
    """rho_kj proportional to the cosine similarity of y_k and y_j, rows summing to 1."""
    n = Y.shape[0]
    i, j = edges[:, 0], edges[:, 1]
    unit = Y / np.linalg.norm(Y, axis=1, keepdims=True)
    cos = np.sum(unit[i] * unit[j], axis=1)
    cos = np.maximum(cos, 0.0)
    theta = sparse.coo_matrix((np.r_[cos, cos], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    tot = np.asarray(theta.sum(axis=1)).ravel()
    scale = np.divide(1.0, tot, out=np.zeros_like(tot), where=tot > 0)
    rho = sparse.diags(scale) @ theta
    rho = rho.tocsr()
    rho.sort_indices()
    return rho


@dataclass(frozen=True, eq=False)
class UnmixEnv:
    height: int
    width: int
    M: np.ndarray        # (L, R)
    W_true: np.ndarray   # (N, R), one row per pixel
    Y: np.ndarray        # (N, L) noisy pixel spectra
    rho: sparse.csr_matrix
    noise_var: float

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def measured_snr_db(self) -> float:
        clean = self.W_true @ self.M.T
        return float(10.0 * np.log10(np.sum(clean ** 2) / np.sum((self.Y - clean) ** 2)))

    def network(self) -> ClusteredNetwork:
        n = self.n_pixels
        return ClusteredNetwork.from_edges(n, lattice_edges(self.height, self.width), singleton_clusters(n))

    def initial_abundances(self) -> np.ndarray:
        R = self.M.shape[1]
        return np.full((self.n_pixels, R), 1.0 / R)

    def redraw(self, rng: np.random.Generator) -> "UnmixEnv":
        """Same scene, fresh noise from `rng` (and the matching weights)."""
        clean = self.W_true @ self.M.T
        Y = clean + np.sqrt(self.noise_var) * rng.standard_normal(clean.shape)
        rho = similarity_weights(Y, lattice_edges(self.height, self.width))
        return UnmixEnv(self.height, self.width, self.M, self.W_true, Y, rho, self.noise_var)

    def abundance_csv(self, r: int) -> str:
        """Ground-truth map of endmember `r` as a height x width CSV grid."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        for row in self.W_true[:, r].reshape(self.height, self.width):
            wr.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _abundance_maps(rng, height, width, R, n_regions):
    seeds = rng.random((n_regions, 2)) * [height, width]
    yy, xx = np.mgrid[0:height, 0:width]
    pts = np.stack([yy.ravel() + 0.5, xx.ravel() + 0.5], axis=1)
    label = np.argmin(np.linalg.norm(pts[:, None] - seeds[None], axis=-1), axis=1)
    values = rng.dirichlet(np.full(R, 0.5), size=n_regions)
    return values[label]


def unmix_env(height: int = 20, width: int = 20, n_endmembers: int = 5, n_bands: int = 64,
              snr_db: float = 20.0, n_regions: int | None = None, seed: int = 0,
              endmember_seed: int | None = None) -> UnmixEnv:
    """Generate the image Y = W M^T + V.

    `seed` drives the abundance maps and the noise; `endmember_seed`
    (defaults to `seed`) drives the endmember library.

    Raises
    ------
    ValueError
        If there are more endmembers than bands.
    """
    if n_endmembers > n_bands:
        raise ValueError(f"R = {n_endmembers} endmembers exceeds L = {n_bands} bands")
    if height < 1 or width < 1 or n_endmembers < 1:
        raise ValueError("image and endmember counts must be positive")
    M = synthetic_endmembers(np.random.default_rng(seed if endmember_seed is None else endmember_seed),
                             n_bands, n_endmembers)
    rng = np.random.default_rng(seed)
    if n_regions is None:
        n_regions = max(2, (height * width) // 40)
    W = _abundance_maps(rng, height, width, n_endmembers, n_regions)
    clean = W @ M.T
    noise_var = float(np.mean(clean ** 2) / 10.0 ** (snr_db / 10.0))
    Y = clean + np.sqrt(noise_var) * rng.standard_normal(clean.shape)
    rho = similarity_weights(Y, lattice_edges(height, width))
    return UnmixEnv(height, width, M, W, Y, rho, noise_var)
