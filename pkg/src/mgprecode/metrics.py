"""Analytic performance figures for a fixed channel realization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelRealization, Scenario, _draw_channel, cluster_block

HIST_LOW_DB = -10.0
HIST_HIGH_DB = 40.0
HIST_WIDTH_DB = 1.0


@dataclass
class TrialResult:
    scheme: str
    regularizer: str
    snr_db: float
    seed: int
    smse: float
    trace_Em: np.ndarray
    sinr_db: np.ndarray
    t: np.ndarray | None = None
    gamma: np.ndarray | None = None
    nu: np.ndarray | None = None
    sir_db: np.ndarray | None = None
    trial: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def tm_dispersion(self) -> float | None:
        return None if self.t is None else tm_dispersion(self.t)


def db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def _diag_gains(D, k: int) -> np.ndarray:
    d = np.asarray(D, dtype=complex)
    if d.ndim == 2:
        d = np.diagonal(d)
    return np.broadcast_to(d, (k,))


def smse(ch: ChannelRealization, F: list[np.ndarray], D: list) -> tuple[float, np.ndarray]:
    """Sum MSE and its per-cluster error traces ``tr(E_m)``.

    ``F[m]`` is the joint precoder of gateway ``m`` (``n x k``; ``B_m T_m``
    for on-board designs) and ``D[m]`` the diagonal receiver of cluster ``m``
    (vector, diagonal matrix or scalar).  Noise and symbols have unit
    variance.
    """
    M, k = ch.M, ch.k
    per = np.empty(M)
    for m in range(M):
        d = _diag_gains(D[m], k)
        c = np.ones(k)
        for p in range(M):
            c = c + np.sum(np.abs(cluster_block(ch, m, p) @ F[p]) ** 2, axis=1)
        g = np.conj(np.diagonal(cluster_block(ch, m, m) @ F[m]))
        per[m] = np.sum(1.0 - 2.0 * np.real(d * np.conj(g)) + np.abs(d) ** 2 * c)
    return float(np.sum(per)), per


def stacked_precoder(ch: ChannelRealization, F: list[np.ndarray]) -> np.ndarray:
    """``N x K`` matrix whose block column ``m`` is ``S_m F_m``."""
    N = ch.H_tilde.shape[1]
    Ff = np.zeros((N, ch.K), dtype=complex)
    for m, Fm in enumerate(F):
        Ff[ch.feed_sets[m], m * ch.k:(m + 1) * ch.k] += Fm
    return Ff


def effective_matrix(ch: ChannelRealization, F: list[np.ndarray]) -> np.ndarray:
    """``W[u, v]``: gain from the symbol of user ``v`` to user ``u``."""
    return ch.H_tilde @ stacked_precoder(ch, F)


def sinr_from_effective(W: np.ndarray, noise: float = 1.0) -> np.ndarray:
    p = np.abs(W) ** 2
    sig = np.diagonal(p).copy()
    interf = p.sum(axis=1) - sig + noise
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(interf > 0, sig / interf, np.inf)


def sinr_per_user(ch: ChannelRealization, F: list[np.ndarray]) -> np.ndarray:
    """Linear SINR of every user with unit noise variance."""
    return sinr_from_effective(effective_matrix(ch, F))


def sir_no_precoding(ch: ChannelRealization, B: list[np.ndarray], P_m) -> np.ndarray:
    """Linear SIR with equal-power streams and no gateway precoding.

    Users without interferers get ``inf``.
    """
    P_m = np.broadcast_to(np.asarray(P_m, dtype=float), (ch.M,))
    F = [np.sqrt(P_m[m] / ch.k) * np.asarray(B[m]) for m in range(ch.M)]
    return sinr_from_effective(effective_matrix(ch, F), noise=0.0)


def _calibration_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 0x63616C]))


def trace_ratio(H: np.ndarray) -> float:
    """``tr((H H^H)^2) / tr(H H^H)``."""
    G = H @ H.conj().T
    return float(np.sum(np.abs(G) ** 2) / np.trace(G).real)


def mean_trace_ratio(scenario: Scenario, samples: int, seed: int) -> float:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = _calibration_rng(seed)
    return float(np.mean([trace_ratio(_draw_channel(scenario, rng)[0]) for _ in range(samples)]))


def calibrate_power(scenario: Scenario, samples: int, seed: int, snr_target: float) -> float:
    """Total power giving the target SNR under matched-filter transmission.

    SNR is ``E[tr(H F F^H H^H)] / K`` with ``F = sqrt(P / tr(H^H H)) H^H``.
    """
    return snr_target * scenario.K / mean_trace_ratio(scenario, samples, seed)


def matched_filter_snr(H_draws, P: float) -> float:
    """SNR obtained with power ``P`` averaged over the given channel draws."""
    vals = []
    for H in H_draws:
        F = np.sqrt(P / np.sum(np.abs(H) ** 2)) * H.conj().T
        vals.append(np.sum(np.abs(H @ F) ** 2) / H.shape[0])
    return float(np.mean(vals))


def tm_dispersion(t) -> float:
    """``max(t) / min(t)``."""
    t = np.asarray(t, dtype=float)
    if t.size == 0 or np.any(~(t > 0)):
        raise ValueError("receiver scalings must be positive")
    return float(t.max() / t.min())


def histogram_db(values_db) -> list[tuple[float, float, int]]:
    """1 dB histogram over [-10, 40] dB plus underflow and overflow bins.

    Non-finite values are dropped.
    """
    v = np.asarray(values_db, dtype=float)
    v = v[np.isfinite(v)]
    edges = np.arange(HIST_LOW_DB, HIST_HIGH_DB + HIST_WIDTH_DB / 2, HIST_WIDTH_DB)
    rows = [(-np.inf, HIST_LOW_DB, int(np.sum(v < HIST_LOW_DB)))]
    inner = v[(v >= HIST_LOW_DB) & (v < HIST_HIGH_DB)]
    counts, _ = np.histogram(inner, bins=edges)
    rows += [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    rows.append((HIST_HIGH_DB, np.inf, int(np.sum(v >= HIST_HIGH_DB))))
    return rows
