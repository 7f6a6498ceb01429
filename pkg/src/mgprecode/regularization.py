"""Leakage-aware regularization factor and receiver scaling.

For a gateway whose effective intra-cluster Gramian ``B^H H^H H B`` has
eigenvalues ``lambda_i`` (eigenvectors ``U``) and whose leakage Gramian
projects to ``sigma_i = [U^H B^H Sigma B U]_ii``, the regularization factor
minimizing the cluster's error trace is the root of

    sum_i lambda_i / (lambda_i + gamma)**3 * (gamma - sigma_i - k / P_m) = 0

which always lies in ``[k/P_m, k/P_m + max(sigma)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .linalg import eigh_desc

MAX_BISECTION = 200
SCAN_POINTS = 400


@dataclass
class RegularizationInputs:
    lam: np.ndarray
    sigma: np.ndarray
    k: int
    P_m: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.sigma = np.clip(np.asarray(self.sigma, dtype=float), 0.0, None)
        if self.lam.shape != self.sigma.shape:
            raise ValueError("lambda and sigma must have the same length")
        if not np.any(self.lam > 0):
            raise NumericalError("zero channel: no positive eigenvalue")
        if not self.P_m > 0:
            raise ValueError("P_m must be > 0")


def sigma_diagonal(U: np.ndarray, B: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Diagonal of ``U^H B^H Sigma B U``, clipped at zero."""
    V = B @ U
    q = np.einsum("ji,jk,ki->i", V.conj(), Sigma, V).real
    return np.clip(q, 0.0, None)


def root_function(gamma: float, lam: np.ndarray, sigma: np.ndarray, c: float) -> float:
    return float(np.sum(lam / (lam + gamma) ** 3 * (gamma - sigma - c)))


def _bisect(lo: float, hi: float, f_lo: float, lam, sigma, c: float, rtol: float) -> float:
    for _ in range(MAX_BISECTION):
        mid = 0.5 * (lo + hi)
        f_mid = root_function(mid, lam, sigma, c)
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        # stop an order of magnitude inside rtol so the root residual stays tiny
        if hi - lo <= 0.1 * rtol * hi:
            break
    return 0.5 * (lo + hi)


def solve_gamma(inp: RegularizationInputs, rtol: float = 1e-10, scan_points: int = SCAN_POINTS) -> float:
    """Leakage-aware regularization factor.

    The root equation can have several solutions inside the bracket.  The
    bracket is scanned for sign changes from negative to positive (local
    minima of the error trace), each one is refined by bisection, and the
    root with the lowest error trace is returned.
    """
    lam, sigma = inp.lam, inp.sigma
    c = inp.k / inp.P_m
    if np.all(sigma == sigma[0]):
        return c + float(sigma[0])
    width = float(sigma.max())
    # dense near the lower end, where small leakage puts the optimum
    u = np.concatenate([[0.0], np.geomspace(1e-6, 1.0, scan_points - 1)])
    g = c + width * u
    g[-1] = c + width
    q = lam + g[:, np.newaxis]
    f = np.sum(lam / q**3 * (g[:, np.newaxis] - sigma - c), axis=1)
    candidates = [float(x) for x, fx in zip(g, f) if fx == 0.0]
    for i in np.flatnonzero((f[:-1] < 0) & (f[1:] > 0)):
        candidates.append(_bisect(g[i], g[i + 1], f[i], lam, sigma, c, rtol))
    if not candidates:
        raise NumericalError("no sign change of the regularization root equation in its bracket")
    obj = error_objective(np.array(candidates), lam, sigma, inp.k, inp.P_m)
    return float(candidates[int(np.argmin(obj))])


def scaling_tm(lam, gamma: float, P_m: float) -> float:
    """``t_m = P_m / sum_i lambda_i / (lambda_i + gamma)**2``."""
    lam = np.asarray(lam, dtype=float)
    denom = float(np.sum(lam / (lam + gamma) ** 2))
    if not denom > 0:
        raise NumericalError("zero channel")
    return P_m / denom


def gamma_closed_form(B: np.ndarray, Sigma_hat: np.ndarray, k: int, P_m: float) -> float:
    """``k / P_m + tr(B^H Sigma_hat B) / k``."""
    return k / P_m + float(np.trace(B.conj().T @ Sigma_hat @ B).real) / k


def error_objective(gamma, lam, sigma, k: int, P_m: float):
    """Cluster error trace (minus the constant ``k``) once ``t_m`` is eliminated.

    Vectorized over ``gamma``.
    """
    g = np.asarray(gamma, dtype=float)[..., np.newaxis]
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = lam + g
    terms = -2 * lam / q + lam**2 / q**2 + sigma * lam / q**2 + (k / P_m) * lam / q**2
    return terms.sum(axis=-1)


def gamma_grid(k: int, P_m: float, sigma_max: float, grid_points: int = 2000) -> np.ndarray:
    return np.geomspace(k / (10 * P_m), 10 * (k / P_m + sigma_max), grid_points)


def gamma_oracle_grid(H_mm: np.ndarray, B: np.ndarray, Sigma: np.ndarray, k: int, P_m: float,
                      grid_points: int = 2000) -> float:
    """Brute-force minimizer of :func:`error_objective` on a geometric grid."""
    if grid_points < 100:
        raise ValueError("grid_points must be >= 100")
    HB = H_mm @ B
    lam, U = eigh_desc(HB.conj().T @ HB)
    lam = np.clip(lam, 0.0, None)
    sigma = sigma_diagonal(U, B, Sigma)
    grid = gamma_grid(k, P_m, float(sigma.max()), grid_points)
    return float(grid[np.argmin(error_objective(grid, lam, sigma, k, P_m))])
