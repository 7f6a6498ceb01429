"""On-ground beamforming: joint precoders ``F_m`` with diagonal receivers.

With the receivers fixed, every gateway solves a least-squares problem with a
quadratic power constraint (:func:`find_multiplier`).  With the precoders
fixed, each receiver gain has a closed form (:func:`update_receivers`).
:func:`ogbf_alternating` cycles the two until the sum MSE stalls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .linalg import RANK_RTOL, eigh_desc, hermitize
from .scenario import ChannelRealization, cluster_block

log = logging.getLogger(__name__)

MAX_BISECTION = 200


@dataclass
class QuadraticSubproblem:
    """``min tr(F^H A F - F^H X - X^H F)`` s.t. ``tr(F F^H) <= P``."""

    A: np.ndarray
    X: np.ndarray
    P: float

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError(f"power budget must be > 0, got {self.P!r}")


@dataclass
class OgbfState:
    F: list[np.ndarray]
    D: list[np.ndarray]
    nu: list[float]
    smse_history: list[float] = field(default_factory=list)
    iterations: int = 0


def build_subproblem(ch: ChannelRealization, D: list[np.ndarray], m: int, P: float = np.inf) -> QuadraticSubproblem:
    """Assemble ``A_m = sum_p H_pm^H D_p^H D_p H_pm`` and ``X_m = H_mm^H D_m^H``.

    ``D[p]`` holds the diagonal of the receiver matrix of cluster ``p``.
    """
    n = len(ch.feed_sets[m])
    A = np.zeros((n, n), dtype=complex)
    for p in range(ch.M):
        DH = np.asarray(D[p])[:, np.newaxis] * cluster_block(ch, p, m)
        A += DH.conj().T @ DH
    X = cluster_block(ch, m, m).conj().T * np.conj(np.asarray(D[m]))[np.newaxis, :]
    return QuadraticSubproblem(A=hermitize(A), X=X, P=float(P))


def phi(nu: float, eigvals: np.ndarray, Xt: np.ndarray) -> float:
    """Power of ``(Gamma + nu I)^{-1} Xt``: ``sum_i ||x_i||^2 / (gamma_i + nu)^2``.

    Returns ``inf`` when a zero eigenvalue meets ``nu == 0`` with a nonzero row.
    """
    eigvals = np.asarray(eigvals, dtype=float)
    row_power = np.sum(np.abs(Xt) ** 2, axis=1)
    denom = (eigvals + nu) ** 2
    zero = denom <= 0.0
    if np.any(zero & (row_power > 0)):
        return float("inf")
    return float(np.sum(row_power[~zero] / denom[~zero]))


def find_multiplier(sub: QuadraticSubproblem) -> tuple[float, np.ndarray]:
    """Solve the power-constrained quadratic problem.

    The unconstrained minimizer ``A^+ X`` is returned with ``nu = 0`` when it
    meets the budget.  Otherwise the constraint is active and ``nu > 0``
    solves ``phi(nu) = P``; the bracket starts at ``[0, 1]`` and its upper
    end doubles until ``phi`` drops below ``P``.
    """
    gamma, U = eigh_desc(sub.A)
    Xt = U.conj().T @ sub.X
    P = sub.P
    lam_max = max(gamma[0], 0.0) if len(gamma) else 0.0
    keep = gamma > RANK_RTOL * lam_max if lam_max > 0 else np.zeros(len(gamma), dtype=bool)

    Ft = np.zeros_like(Xt)
    Ft[keep] = Xt[keep] / gamma[keep, np.newaxis]
    if np.sum(np.abs(Ft) ** 2) <= P * (1 + 1e-12):
        return 0.0, U @ Ft

    g = np.where(keep, gamma, 0.0)
    lo, hi = 0.0, 1.0
    while phi(hi, g, Xt) >= P:
        lo, hi = hi, 2.0 * hi
        if not np.isfinite(hi):
            raise ConvergenceError("multiplier bracket diverged", bracket=(lo, hi))
    tol = 1e-9 * P
    for _ in range(MAX_BISECTION):
        nu = 0.5 * (lo + hi)
        val = phi(nu, g, Xt)
        if abs(val - P) <= tol:
            break
        if val > P:
            lo = nu
        else:
            hi = nu
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    else:
        raise ConvergenceError(f"bisection did not converge; bracket [{lo:.17g}, {hi:.17g}]", bracket=(lo, hi))
    if abs(phi(nu, g, Xt) - P) > tol:
        raise ConvergenceError(f"bisection stalled at nu={nu:.17g}; bracket [{lo:.17g}, {hi:.17g}]",
                               bracket=(lo, hi))
    F = U @ (Xt / (g + nu)[:, np.newaxis])
    return float(nu), F


def update_receivers(ch: ChannelRealization, F: list[np.ndarray]) -> list[np.ndarray]:
    """Per-user gains ``d_j = [G_m]_jj / [C_m]_jj``.

    ``C_m = I + sum_p H_mp F_p F_p^H H_mp^H`` and ``G_m = F_m^H H_mm^H``.
    """
    D = []
    for m in range(ch.M):
        c = np.ones(ch.k)
        for p in range(ch.M):
            c += np.sum(np.abs(cluster_block(ch, m, p) @ F[p]) ** 2, axis=1)
        HF = cluster_block(ch, m, m) @ F[m]
        D.append(np.conj(np.diagonal(HF)) / c)
    return D


def _smse(ch: ChannelRealization, F: list[np.ndarray], D: list[np.ndarray]) -> float:
    from .metrics import smse

    return smse(ch, F, D)[0]


def ogbf_alternating(ch: ChannelRealization, P_m, tol: float = 1e-8, max_iter: int = 100) -> OgbfState:
    """Cyclic minimization over precoders and receivers, starting from ``D = I``.

    The sum MSE is recorded at the start and after every half-step.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    M = ch.M
    P_m = np.broadcast_to(np.asarray(P_m, dtype=float), (M,))
    D = [np.ones(ch.k, dtype=complex) for _ in range(M)]
    F = [np.zeros((len(ch.feed_sets[m]), ch.k), dtype=complex) for m in range(M)]
    nu = [0.0] * M
    state = OgbfState(F=F, D=D, nu=nu, smse_history=[_smse(ch, F, D)])
    for it in range(1, max_iter + 1):
        prev = state.smse_history[-1]
        for m in range(M):
            nu[m], F[m] = find_multiplier(build_subproblem(ch, D, m, P_m[m]))
        state.smse_history.append(_smse(ch, F, D))
        D[:] = update_receivers(ch, F)
        cur = _smse(ch, F, D)
        state.smse_history.append(cur)
        state.iterations = it
        if prev - cur < tol * abs(prev):
            break
    log.debug("ogbf converged after %d sweeps, smse=%.6g", state.iterations, state.smse_history[-1])
    return state


def ogbf_single_gateway(H: np.ndarray, P: float) -> np.ndarray:
    """Closed-form single-gateway design with a common receiver scaling.

    ``F = sqrt(t) (H^H H + gamma I)^{-1} H^H`` with ``gamma = K / P`` and ``t``
    fixed by ``tr(F F^H) = P``.
    """
    H = np.asarray(H, dtype=complex)
    K = H.shape[0]
    gamma = K / P
    # (H^H H + g I)^{-1} H^H == H^H (H H^H + g I)^{-1}; the K x K form is cheaper
    F0 = H.conj().T @ np.linalg.inv(hermitize(H @ H.conj().T) + gamma * np.eye(K))
    t = P / np.sum(np.abs(F0) ** 2)
    return np.sqrt(t) * F0
