"""Small deterministic helpers around Hermitian eigendecompositions."""

from __future__ import annotations

import numpy as np

# eigenvalues below this fraction of the largest are treated as zero
RANK_RTOL = 1e-12


def hermitize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.conj().T)


def fix_phase(V: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive.

    Ties in magnitude go to the lowest row index (``np.argmax`` order).
    """
    V = np.array(V, dtype=complex, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    pivots = V[idx, np.arange(V.shape[1])]
    mags = np.abs(pivots)
    rot = np.where(mags > 0, pivots.conj() / np.where(mags > 0, mags, 1.0), 1.0)
    return V * rot[np.newaxis, :]


def eigh_desc(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian eigendecomposition with descending eigenvalues.

    Eigenvectors are phase-normalized with :func:`fix_phase` so results are
    reproducible across runs.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues, largest first.
    U : ndarray, shape (n, n)
        Matching unitary eigenvector matrix.
    """
    w, U = np.linalg.eigh(hermitize(np.asarray(A, dtype=complex)))
    order = np.argsort(-w, kind="stable")
    return w[order], fix_phase(U[:, order])


def leading_eigvecs(G: np.ndarray, k: int, what: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` dominant eigenpairs of a Hermitian PSD matrix.

    Raises :class:`RankDeficientError` when the k-th eigenvalue falls below
    the rank threshold.
    """
    from .errors import RankDeficientError

    w, U = eigh_desc(G)
    if k > len(w):
        raise RankDeficientError(f"{what}: requested {k} eigenvectors from a {len(w)}x{len(w)} matrix")
    lam_max = max(w[0], 0.0) if len(w) else 0.0
    if k > 0 and (lam_max <= 0.0 or w[k - 1] <= RANK_RTOL * lam_max):
        raise RankDeficientError(f"{what} rank-deficient: eigenvalue {k} is {w[k - 1]:.3e} (max {lam_max:.3e})")
    return w[:k], U[:, :k]


def is_hermitian_psd(A: np.ndarray, herm_rtol: float = 1e-12, psd_rtol: float = 1e-10) -> bool:
    A = np.asarray(A)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    if np.linalg.norm(A - A.conj().T) > herm_rtol * scale:
        return False
    w = np.linalg.eigvalsh(hermitize(A))
    return bool(w.min() >= -psd_rtol * max(w.max(), 0.0))


def projector(B: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of ``B``."""
    Q, _ = np.linalg.qr(B)
    return Q @ Q.conj().T
