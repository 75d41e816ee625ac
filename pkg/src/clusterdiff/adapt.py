"""Adaptive algorithms over clustered networks.

The step functions are pure: they read the iteration-n estimates of every node
and return iteration-(n+1) estimates.  Array helpers (``*_update``) accept any
leading batch dimensions, i.e. ``w`` of shape (..., N, L), ``x`` of shape
(..., N, L) and ``d`` of shape (..., N), which is how the Monte Carlo harness
runs many trials at once.

All variants evaluate the same elementary expressions in the same order, so
the reductions (single cluster, singleton clusters, eta = 0) hold bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .topology import ClusteredNetwork, CombinerSet

__all__ = [
    "AdaptConfig",
    "AdaptState",
    "ConvergenceError",
    "initial_state",
    "atc_step",
    "single_task_step",
    "multitask_step",
    "lms_step",
    "atc_update",
    "multitask_update",
    "lms_update",
    "centralized_descent",
    "p2_gradient",
    "project_simplex",
    "unmix_step",
    "rmse",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, grad_norm: float):
        super().__init__(message)
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class AdaptConfig:
    mu: float
    eta: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"step-size mu must be positive, got {self.mu}")
        if not self.eta >= 0:
            raise ValueError(f"regularization eta must be nonnegative, got {self.eta}")


@dataclass(frozen=True, eq=False)
class AdaptState:
    w: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if self.w.shape != self.psi.shape:
            raise ValueError("w and psi must have the same shape")


def initial_state(n_nodes: int, dim: int, w0=None) -> AdaptState:
    """w_k(0) = 0 unless `w0` is given."""
    w = np.zeros((n_nodes, dim)) if w0 is None else np.array(w0, dtype=float)
    return AdaptState(w, w.copy())


# --- array kernels ----------------------------------------------------------

def _residual(w, x, d):
    # e_k = d_k - x_k^T w_k, accumulated one coordinate at a time
    e = d
    for i in range(x.shape[-1]):
        e = e - x[..., i] * w[..., i]
    return e


def _residual_matrix(w, x, d):
    # e[..., l, k] = d_l - x_l^T w_k, same operation order as _residual
    e = d[..., :, None]
    for i in range(x.shape[-1]):
        e = e - x[..., :, None, i] * w[..., None, :, i]
    return e


def _exchange(C, e, x):
    # sum_l c_lk e_lk x_l
    return np.swapaxes(C * e, -1, -2) @ x


def _pull(P, w):
    # sum_l rho_kl (w_l - w_k)
    return P @ w - P.sum(axis=1)[:, None] * w


def _combine(A, psi):
    # sum_l a_lk psi_l
    return A.T @ psi


def atc_update(w, x, d, A, C, P, mu, eta):
    """Adapt-then-combine step on raw arrays; returns ``(w_next, psi)``."""
    e = _residual_matrix(w, x, d)
    psi = w + mu * (_exchange(C, e, x) + eta * _pull(P, w))
    return _combine(A, psi), psi


def multitask_update(w, x, d, P, mu, eta):
    e = _residual(w, x, d)
    return w + mu * (e[..., None] * x + eta * _pull(P, w))


def lms_update(w, x, d, mu):
    e = _residual(w, x, d)
    return w + mu * (e[..., None] * x)


# --- state-level steps ------------------------------------------------------

def atc_step(state: AdaptState, sample, network: ClusteredNetwork, combiners: CombinerSet,
             config: AdaptConfig) -> AdaptState:
    """Diffusion LMS for clustered multitask networks (adapt, then combine)."""
    w, psi = atc_update(state.w, sample.x, sample.d, combiners.A, combiners.C, combiners.P,
                        config.mu, config.eta)
    return AdaptState(w, psi)


def single_task_step(state: AdaptState, sample, network: ClusteredNetwork, combiners: CombinerSet,
                     config: AdaptConfig) -> AdaptState:
    """Diffusion LMS over full neighborhoods with no regularization term.

    `config.eta` is ignored.
    """
    e = _residual_matrix(state.w, sample.x, sample.d)
    psi = state.w + config.mu * _exchange(combiners.C, e, sample.x)
    return AdaptState(_combine(combiners.A, psi), psi)


def multitask_step(state: AdaptState, sample, network: ClusteredNetwork, combiners: CombinerSet,
                   config: AdaptConfig) -> AdaptState:
    """Per-node LMS plus regularization toward every neighbor, no combination."""
    w = multitask_update(state.w, sample.x, sample.d, combiners.P, config.mu, config.eta)
    return AdaptState(w, w)


def lms_step(state: AdaptState, sample, config: AdaptConfig) -> AdaptState:
    """Non-cooperative LMS at every node."""
    w = lms_update(state.w, sample.x, sample.d, config.mu)
    return AdaptState(w, w)


# --- centralized reference --------------------------------------------------

def p2_gradient(W, R_x, p_xd, network: ClusteredNetwork, P, eta):
    """Gradient of every cluster cost of the Nash problem, shape (Q, L).

    ``sum_{k in C_i} (R_k w_i - p_k) + eta sum_{k in C_i} sum_l rho_kl (w_i - w_C(l))``
    """
    owner = network.cluster_of
    wn = W[owner]
    node = np.einsum("kij,kj->ki", R_x, wn) - p_xd
    node = node + eta * (P.sum(axis=1)[:, None] * wn - P @ wn)
    grad = np.zeros_like(W)
    np.add.at(grad, owner, node)
    return grad


def centralized_descent(R_x, p_xd, network: ClusteredNetwork, P, config: AdaptConfig,
                        n_iters: int = 1_000_000, tol: float = 1e-10, W0=None) -> np.ndarray:
    """Steepest descent on every cluster cost simultaneously.

    Returns the per-cluster equilibrium, shape (Q, L).

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above `tol` after `n_iters` steps (or
        the iteration blows up); carries the last gradient norm.
    """
    R_x = np.asarray(R_x, dtype=float)
    p_xd = np.asarray(p_xd, dtype=float)
    P = np.asarray(P, dtype=float)
    W = np.zeros((network.n_clusters, R_x.shape[-1])) if W0 is None else np.array(W0, dtype=float)
    g = p2_gradient(W, R_x, p_xd, network, P, config.eta)
    gn = float(np.linalg.norm(g))
    for _ in range(n_iters):
        if gn <= tol:
            return W
        if not np.isfinite(gn) or gn > 1e300:
            break
        W = W - config.mu * g
        g = p2_gradient(W, R_x, p_xd, network, P, config.eta)
        gn = float(np.linalg.norm(g))
    if gn <= tol:
        return W
    raise ConvergenceError(f"steepest descent stopped with gradient norm {gn:.3e}", gn)


# --- constrained unmixing ---------------------------------------------------

def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each row of `v` onto {w >= 0, sum(w) = 1}.

    Sort-and-threshold method, O(R log R) per vector.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise ValueError("cannot project an empty vector")
    R = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, R + 1)
    # the condition holds on a prefix of the sorted vector
    count = (u - css / ind > 0).sum(axis=-1, keepdims=True)
    theta = np.take_along_axis(css, count - 1, axis=-1) / count
    return np.maximum(v - theta, 0.0)


def _as_csr(rho, n):
    m = sparse.csr_matrix(rho, dtype=float)
    if m.shape != (n, n):
        raise ValueError(f"weights must be {n} x {n}, got {m.shape}")
    m.sort_indices()
    return m


def sign_pull(W, rho) -> np.ndarray:
    """``sum_j rho_kj sgn(w_k - w_j)`` for every node, with sgn(0) = 0."""
    m = _as_csr(rho, W.shape[0])
    rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    terms = m.data[:, None] * np.sign(W[rows] - W[m.indices])
    out = np.zeros_like(W)
    nonempty = np.diff(m.indptr) > 0
    if terms.shape[0]:
        sums = np.add.reduceat(terms, m.indptr[:-1][nonempty], axis=0)
        out[nonempty] = sums
    return out


def unmix_step(W, Y, M, rho, config: AdaptConfig) -> np.ndarray:
    """Projected subgradient step for every pixel at once.

    Parameters
    ----------
    W : ndarray, shape (N, R)
        Current abundances, each row on the simplex.
    Y : ndarray, shape (N, L)
        Pixel spectra, one row per pixel.
    M : ndarray, shape (L, R)
        Endmember matrix.
    rho : array_like or sparse matrix, shape (N, N)
        Spatial regularization weights.
    """
    W = np.asarray(W, dtype=float)
    grad = (Y - W @ M.T) @ M
    pre = W + config.mu * grad
    if config.eta != 0:
        pre = pre - config.mu * config.eta * sign_pull(W, rho)
    return project_simplex(pre)


def rmse(W_est, W_true) -> float:
    W_est = np.asarray(W_est, dtype=float)
    W_true = np.asarray(W_true, dtype=float)
    if W_est.shape != W_true.shape:
        raise ValueError(f"shape mismatch: {W_est.shape} vs {W_true.shape}")
    return float(np.sqrt(np.mean((W_est - W_true) ** 2)))
