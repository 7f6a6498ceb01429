"""On-board beamforming networks and the distributed gateway precoders.

Every beamformer returned here is semi-unitary (``B^H B = I_k``); any
invertible factor left over is absorbed by the gateway precoder

    T_m = sqrt(t_m) (B^H H_mm^H H_mm B + gamma_m I)^{-1} B^H H_mm^H
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RankDeficientError
from .linalg import RANK_RTOL, eigh_desc, hermitize, leading_eigvecs
from .scenario import ChannelRealization, ExpectedGramians, Scenario, cluster_block

MODES = ("adaptive", "nulling", "coarse", "prefixed")


@dataclass
class NullingBeamformer:
    B: np.ndarray
    Vbar0: np.ndarray
    B0: np.ndarray
    Hbar: np.ndarray
    Q: np.ndarray


@dataclass
class BeamformerSet:
    B: list[np.ndarray]
    mode: str
    Vbar0: list[np.ndarray] = field(default_factory=list)
    B0: list[np.ndarray] = field(default_factory=list)
    Hbar: list[np.ndarray] = field(default_factory=list)
    Q: list[np.ndarray] = field(default_factory=list)


@dataclass
class ObbfPrecoderSet:
    T: list[np.ndarray]
    gamma: list[float]
    t: list[float]
    eig_U: list[np.ndarray]
    eig_lambda: list[np.ndarray]


def bfn_adaptive(H_mm: np.ndarray) -> np.ndarray:
    """The ``k`` dominant eigenvectors of ``H_mm^H H_mm``.

    This choice minimizes ``tr((B^H H^H H B)^{-1})`` over semi-unitary ``B``,
    i.e. the noise enhancement left after cancelling intra-cluster
    interference.
    """
    H_mm = np.asarray(H_mm, dtype=complex)
    k = H_mm.shape[0]
    _, B = leading_eigvecs(H_mm.conj().T @ H_mm, k, what="intra-cluster channel")
    return B


def bfn_coarse(G_expected: np.ndarray, k: int) -> np.ndarray:
    """Adaptive design applied to the expected Gramian ``E[H_mm^H H_mm]``."""
    _, B = leading_eigvecs(G_expected, k, what="expected intra-cluster Gramian")
    return B


def bfn_prefixed(B_given: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space of a given rank-``k`` BFN."""
    B_given = np.asarray(B_given, dtype=complex)
    Q, R = np.linalg.qr(B_given)
    d = np.abs(np.diagonal(R))
    if d.size and d.min() <= RANK_RTOL * max(d.max(), np.finfo(float).tiny):
        raise RankDeficientError("pre-fixed beamformer is rank-deficient")
    # make R's diagonal real positive so the factorization is unique
    ph = np.diagonal(R) / d
    return Q * ph[np.newaxis, :]


def bfn_nulling(H_mm: np.ndarray, Hbar: np.ndarray) -> NullingBeamformer:
    """Adaptive design restricted to the null space of the protected users.

    ``Hbar`` (``k_bar x n``) holds the channels from this gateway's feeds to
    the protected off-cluster users; the returned ``B`` satisfies
    ``Hbar @ B == 0``.
    """
    H_mm = np.asarray(H_mm, dtype=complex)
    k, n = H_mm.shape
    Hbar = np.asarray(Hbar, dtype=complex).reshape(-1, n)
    k_bar = Hbar.shape[0]
    if k_bar > n - k:
        raise ConfigError(f"null steering infeasible: k_bar={k_bar} > n-k={n - k}")
    if k_bar == 0:
        V0 = np.eye(n, dtype=complex)
    else:
        _, s, Vh = np.linalg.svd(Hbar, full_matrices=True)
        if s[-1] <= RANK_RTOL * s[0]:
            raise RankDeficientError("protected-user channel is rank-deficient")
        V0 = Vh[k_bar:].conj().T
    Q = H_mm @ V0
    B0 = bfn_adaptive(Q)
    return NullingBeamformer(B=V0 @ B0, Vbar0=V0, B0=B0, Hbar=Hbar, Q=Q)


def protected_users(scenario: Scenario, m: int) -> np.ndarray:
    """The ``k_bar`` off-cluster users whose beams are closest to cluster ``m``."""
    centers = scenario.beam_centers
    centroid = centers[scenario.users(m)].mean(axis=0)
    others = np.setdiff1d(np.arange(scenario.K), np.arange(scenario.K)[scenario.users(m)])
    d = np.linalg.norm(centers[others] - centroid, axis=1)
    order = np.lexsort((others, np.round(d, 9)))
    return np.sort(others[order[: scenario.k_bar]])


def effective_eig(B: np.ndarray, H_mm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of ``B^H H_mm^H H_mm B``, descending, clipped at zero."""
    HB = H_mm @ B
    lam, U = eigh_desc(HB.conj().T @ HB)
    return np.clip(lam, 0.0, None), U


def precoder_Tm(B: np.ndarray, H_mm: np.ndarray, gamma: float, P_m: float) -> tuple[np.ndarray, float]:
    """Regularized gateway precoder using its full power budget.

    Returns ``(T, t)``; ``t`` equals ``P_m / sum_i lambda_i/(lambda_i+gamma)**2``.
    """
    lam, U = effective_eig(B, H_mm)
    if gamma == 0 and (lam[-1] <= RANK_RTOL * lam[0]):
        raise RankDeficientError("zero-forcing precoder on a singular effective channel")
    HB = H_mm @ B
    T0 = (U / (lam + gamma)[np.newaxis, :]) @ U.conj().T @ HB.conj().T
    t = P_m / float(np.sum(np.abs(T0) ** 2))
    return np.sqrt(t) * T0, t


def build_sigma_hat(gramians: ExpectedGramians, m: int) -> np.ndarray:
    """``sum_{p != m} E[H_pm^H H_pm]`` from the sampled statistics."""
    n = gramians.G.shape[-1]
    S = np.zeros((n, n), dtype=complex)
    for p in range(gramians.M):
        if p != m:
            S += gramians[p, m]
    return hermitize(S)


def build_sigma_instantaneous(ch: ChannelRealization, m: int) -> np.ndarray:
    """``sum_{p != m} H_pm^H H_pm`` for the current realization."""
    n = len(ch.feed_sets[m])
    S = np.zeros((n, n), dtype=complex)
    for p in range(ch.M):
        if p != m:
            Hpm = cluster_block(ch, p, m)
            S += Hpm.conj().T @ Hpm
    return hermitize(S)


def design_bfn(mode: str, ch: ChannelRealization, scenario: Scenario,
               gramians: ExpectedGramians | None = None,
               prefixed: list[np.ndarray] | None = None) -> BeamformerSet:
    """Build one beamformer per gateway for the requested ``mode``."""
    if mode not in MODES:
        raise ValueError(f"unknown BFN mode {mode!r}")
    out = BeamformerSet(B=[], mode=mode)
    for m in range(ch.M):
        H_mm = cluster_block(ch, m, m)
        if mode == "adaptive":
            out.B.append(bfn_adaptive(H_mm))
        elif mode == "nulling":
            prot = protected_users(scenario, m)
            nb = bfn_nulling(H_mm, ch.H_tilde[prot][:, ch.feed_sets[m]])
            out.B.append(nb.B)
            out.Vbar0.append(nb.Vbar0)
            out.B0.append(nb.B0)
            out.Hbar.append(nb.Hbar)
            out.Q.append(nb.Q)
        elif mode == "coarse":
            if gramians is None:
                raise ValueError("coarse BFN needs expected Gramians")
            out.B.append(bfn_coarse(gramians[m, m], ch.k))
        else:
            if prefixed is None:
                raise ValueError("pre-fixed BFN needs the given beamformers")
            out.B.append(bfn_prefixed(prefixed[m]))
    return out

