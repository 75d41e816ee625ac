"""Closed-form mean and mean-square performance models.

Weighted-variance vectors sigma = vec(Sigma) are never formed explicitly.  The
transition K = B^T kron B^T is applied as ``Sigma -> B^T Sigma B``, and a row
vector Gamma acting on sigma is stored as the LN x LN matrix whose inner
product with Sigma gives ``Gamma sigma``.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .topology import ClusteredNetwork, CombinerSet

__all__ = [
    "TheoryModel",
    "MsdCurve",
    "SizeCapExceeded",
    "StabilityError",
    "DEFAULT_SIZE_CAP",
    "assemble",
    "step_size_bound",
    "mean_recursion",
    "asymptotic_bias",
    "transient_msd",
    "steady_state_msd",
    "solve_weighting",
    "kron",
    "vec",
    "unvec",
    "spectral_radius",
    "to_db",
]

# Upper bound on (LN)^2, the number of entries of one LN x LN matrix.
DEFAULT_SIZE_CAP = 25_000_000


class SizeCapExceeded(MemoryError):
    pass


class StabilityError(ArithmeticError):
    pass


def kron(a, b) -> np.ndarray:
    return np.kron(a, b)


def vec(m) -> np.ndarray:
    """Stack the columns of `m`."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, n: int) -> np.ndarray:
    return np.asarray(v).reshape((n, n), order="F")


def spectral_radius(m) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(m, dtype=float)))))


def to_db(x):
    return 10.0 * np.log10(x)


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    n, L, _ = blocks.shape
    out = np.zeros((n * L, n * L))
    for k in range(n):
        out[k * L:(k + 1) * L, k * L:(k + 1) * L] = blocks[k]
    return out


@dataclass(frozen=True, eq=False)
class TheoryModel:
    """Matrices of the mean and mean-square recursions for one (mu, eta)."""

    mu: float
    eta: float
    n_nodes: int
    dim: int
    B: np.ndarray
    G: np.ndarray
    r: np.ndarray
    Q_mat: np.ndarray
    H_R: np.ndarray
    R_blocks: np.ndarray
    w_star: np.ndarray

    @property
    def size(self) -> int:
        return self.n_nodes * self.dim

    def K_apply(self, Sigma: np.ndarray) -> np.ndarray:
        """unvec(K vec(Sigma)) under K = B^T kron B^T."""
        return self.B.T @ Sigma @ self.B

    def K_dense(self) -> np.ndarray:
        return np.kron(self.B.T, self.B.T)

    @property
    def bias(self) -> np.ndarray:
        return asymptotic_bias(self)


def assemble(network: ClusteredNetwork, combiners: CombinerSet, env, mu: float, eta: float,
             size_cap: int = DEFAULT_SIZE_CAP) -> TheoryModel:
    """Build B, G, r, Q and H_R.

    `env` must expose ``w_star`` (N, L), ``R_x`` (N, L, L) and ``sigma2_z`` (N,).

    Raises
    ------
    SizeCapExceeded
        When (LN)^2 is above `size_cap`.
    """
    w_star = np.asarray(env.w_star, dtype=float)
    R_x = np.asarray(env.R_x, dtype=float)
    s2 = np.asarray(env.sigma2_z, dtype=float)
    n, L = w_star.shape
    if n != network.n_nodes:
        raise ValueError("environment and network sizes differ")
    LN = n * L
    if LN * LN > size_cap:
        raise SizeCapExceeded(
            f"(LN)^2 = {LN * LN} entries exceeds the size cap {size_cap}; "
            f"N = {n}, L = {L} needs about {8 * LN * LN / 2**20:.0f} MiB per matrix")

    I_L = np.eye(L)
    A_I = np.kron(combiners.A, I_L)
    C_I = np.kron(combiners.C, I_L)
    # I - P kron I_L when every row of P sums to 1; zero rows exert no pull
    P = np.asarray(combiners.P, dtype=float)
    Q = np.kron(np.diag(P.sum(axis=1)) - P, I_L)
    R_blocks = np.einsum("lk,lij->kij", combiners.C, R_x)
    H_R = _block_diag(R_blocks)
    B = A_I.T @ (np.eye(LN) - mu * (H_R + eta * Q))
    noise = _block_diag(s2[:, None, None] * R_x)
    CA = C_I @ A_I
    G = CA.T @ noise @ CA
    r = A_I.T @ Q @ w_star.reshape(-1)
    return TheoryModel(mu=float(mu), eta=float(eta), n_nodes=n, dim=L, B=B, G=G, r=r,
                       Q_mat=Q, H_R=H_R, R_blocks=R_blocks, w_star=w_star.reshape(-1).copy())


def step_size_bound(model: TheoryModel) -> float:
    """Right end of the sufficient mean-stability interval for mu."""
    lam = max(np.linalg.eigvalsh(0.5 * (Rk + Rk.T))[-1] for Rk in model.R_blocks)
    return 2.0 / (lam + 2.0 * model.eta)


def mean_recursion(model: TheoryModel, v0, T: int) -> np.ndarray:
    """E{v(n)} for n = 0 .. T-1, as an array of shape (T, LN)."""
    if spectral_radius(model.B) >= 1:
        warnings.warn("spectral radius of B is >= 1; the mean recursion does not converge",
                      RuntimeWarning, stacklevel=2)
    v = np.asarray(v0, dtype=float).reshape(-1)
    force = model.mu * model.eta * model.r
    out = np.empty((T, v.size))
    for n in range(T):
        out[n] = v
        v = model.B @ v - force
    return out


def asymptotic_bias(model: TheoryModel) -> np.ndarray:
    """lim E{v(n)} = mu eta (B - I)^{-1} r."""
    M = model.B - np.eye(model.size)
    if np.linalg.cond(M) > 1e14:
        raise StabilityError("B - I is singular; the mean recursion has no fixed point")
    return model.mu * model.eta * np.linalg.solve(M, model.r)


@dataclass(frozen=True, eq=False)
class MsdCurve:
    zeta: np.ndarray   # zeta(0..T)
    gamma: np.ndarray  # Gamma(T) as a row vector of length (LN)^2
    mean_v: np.ndarray  # E{v(n)}, n = 0..T

    @property
    def db(self) -> np.ndarray:
        return to_db(self.zeta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["iteration", "msd_linear", "msd_db"])
        for n, z in enumerate(self.zeta):
            wr.writerow([n, repr(float(z)), repr(float(to_db(z)))])
        return buf.getvalue()


def transient_msd(model: TheoryModel, v0, T: int) -> MsdCurve:
    """Network MSD learning curve zeta(0..T).

    Runs the zeta / Gamma recursion pair with Sigma = I / N.  `v0` is the
    initial weight error w(0) - w*, i.e. ``-w*`` for a zero start.
    """
    B, G, r = model.B, model.G, model.r
    mu, eta, N = model.mu, model.eta, model.n_nodes
    LN = model.size
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    means = mean_recursion(model, v0, T + 1)

    zeta = np.empty(T + 1)
    zeta[0] = v0 @ v0 / N
    S = np.eye(LN)            # unvec(K^n vec(I))
    Gam = np.zeros((LN, LN))  # Gamma(n)
    for n in range(T):
        S_next = B.T @ S @ B
        h = np.outer(r, B @ means[n])  # (B E{v(n)} kron r)^T as a matrix
        inc = (mu * mu * np.sum(G.T * S)
               - v0 @ (S - S_next) @ v0
               + mu * mu * eta * eta * (r @ S @ r)
               - 2.0 * mu * eta * (np.trace(Gam) + np.trace(h)))
        zeta[n + 1] = zeta[n] + inc / N
        Gam = B @ Gam @ B.T + B @ h @ B.T - h
        S = S_next
    return MsdCurve(zeta=zeta, gamma=vec(Gam), mean_v=means)


def solve_weighting(B: np.ndarray, rhs: np.ndarray, tol: float = 1e-12, max_doublings: int = 64) -> np.ndarray:
    """Solve Sigma - B^T Sigma B = rhs by the doubled fixed-point iteration.

    The series ``sum_j (B^T)^j rhs B^j`` is summed in 2^m-term chunks, so the
    iteration count grows with log(1 / (1 - rho(B))).
    """
    X = np.array(rhs, dtype=float)
    Ak = B.T.copy()
    for _ in range(max_doublings):
        inc = Ak @ X @ Ak.T
        X = X + inc
        if np.max(np.abs(inc)) <= tol * max(1.0, np.max(np.abs(X))):
            return X
        Ak = Ak @ Ak
    raise StabilityError("weighting series did not converge")


def steady_state_msd(model: TheoryModel) -> float:
    rho_B = spectral_radius(model.B)
    if rho_B * rho_B >= 1:
        raise StabilityError(f"K is not stable: rho(K) = {rho_B ** 2:.6g} >= 1")
    N = model.n_nodes
    Sig = solve_weighting(model.B, np.eye(model.size)) / N
    mu, eta, r = model.mu, model.eta, model.r
    noise = mu * mu * np.sum(model.G.T * Sig)
    if eta == 0:
        return float(noise)
    m_inf = asymptotic_bias(model)
    f = mu * mu * eta * eta * (r @ Sig @ r) - 2.0 * mu * eta * (r @ Sig @ (model.B @ m_inf))
    return float(noise + f)
