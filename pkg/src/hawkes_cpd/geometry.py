"""Signed Laplacians, SPD projection and Log-Euclidean Fréchet statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_RELATIVE_FLOOR = 1e-8


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2


def _square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def symmetrize(H) -> tuple[np.ndarray, float]:
    """Symmetric part of ``H`` and the relative size of its antisymmetric part.

    The second value is ``||(H - H^T)/2||_F / ||(H + H^T)/2||_F`` (0 when both
    vanish, ``inf`` for a nonzero purely antisymmetric input).
    """
    H = _square(H)
    A = _sym(H)
    anti = np.linalg.norm((H - H.T) / 2)
    sym = np.linalg.norm(A)
    if anti == 0:
        ratio = 0.0
    elif sym == 0:
        ratio = float("inf")
    else:
        ratio = float(anti / sym)
    return A, ratio


def signed_laplacian(A) -> np.ndarray:
    """``D - A`` with unsigned degrees ``D_ii = sum_j |A_ij|`` (self-loops included)."""
    A = _square(A)
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max(initial=0))):
        raise ValueError("adjacency must be symmetric")
    return np.diag(np.abs(A).sum(axis=1)) - A


def spd_floor(M, relative: float = DEFAULT_RELATIVE_FLOOR) -> float:
    """Eigenvalue floor scaled by the mean absolute diagonal of ``M``."""
    scale = float(np.mean(np.abs(np.diag(M))))
    return relative * scale if scale > 0 else relative


def nearest_spd(M, eps: float | None = None) -> np.ndarray:
    """Frobenius-nearest symmetric matrix with all eigenvalues ``>= eps``."""
    M = _square(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    eps = spd_floor(M) if eps is None else eps
    if not eps > 0:
        raise ValueError("eps must be positive")
    S = _sym(M)
    w, V = np.linalg.eigh(S)
    if w[0] >= eps:
        return S
    return _sym((V * np.maximum(w, eps)) @ V.T)


def _is_spd(X: np.ndarray) -> bool:
    return np.allclose(X, X.T, rtol=0, atol=1e-10 * max(1.0, np.abs(X).max(initial=0)))


def spd_log(X) -> np.ndarray:
    X = _square(X)
    if not _is_spd(X):
        raise ValueError("spd_log needs a symmetric matrix")
    w, V = np.linalg.eigh(_sym(X))
    if w[0] <= 0:
        raise ValueError("spd_log needs a positive definite matrix")
    return _sym((V * np.log(w)) @ V.T)


def spd_exp(S) -> np.ndarray:
    S = _square(S)
    w, V = np.linalg.eigh(_sym(S))
    return _sym((V * np.exp(w)) @ V.T)


def le_distance(X, Y) -> float:
    """Log-Euclidean distance ``||log X - log Y||_F``."""
    return float(np.linalg.norm(spd_log(X) - spd_log(Y)))


def frechet_mean(snapshots: Sequence) -> np.ndarray:
    """Log-Euclidean Fréchet mean ``exp(mean(log X_i))``."""
    if len(snapshots) == 0:
        raise ValueError("Fréchet mean of an empty sequence")
    return spd_exp(np.mean([spd_log(X) for X in snapshots], axis=0))


def frechet_variance(snapshots: Sequence, mean=None) -> float:
    if len(snapshots) == 0:
        raise ValueError("Fréchet variance of an empty sequence")
    mean = frechet_mean(snapshots) if mean is None else mean
    log_mean = spd_log(mean)
    return float(np.mean([np.sum((spd_log(X) - log_mean) ** 2) for X in snapshots]))


@dataclass(frozen=True)
class CausalSnapshot:
    window_index: int
    A: np.ndarray
    Lbar: np.ndarray
    Ltilde: np.ndarray
    logL: np.ndarray
    eps: float
    antisymmetry: float = 0.0

    @property
    def floor_applied(self) -> bool:
        return bool(np.linalg.eigvalsh(self.Lbar)[0] < self.eps)

    def to_dict(self, include_log: bool = False) -> dict:
        w = np.linalg.eigvalsh(self.Lbar)
        d = {
            "window_index": self.window_index,
            "A": self.A.tolist(),
            "laplacian_eig_min": float(w[0]),
            "laplacian_eig_max": float(w[-1]),
            "spd_floor": self.eps,
            "floor_applied": bool(w[0] < self.eps),
            "antisymmetry": self.antisymmetry,
        }
        if include_log:
            d["logL"] = self.logL.tolist()
        return d


def build_snapshot(H, window_index: int = 0, relative_floor: float = DEFAULT_RELATIVE_FLOOR) -> CausalSnapshot:
    """Adjacency, signed Laplacian, SPD representative and its log for one window."""
    A, anti = symmetrize(H)
    return snapshot_from_adjacency(A, window_index, relative_floor, anti)


def snapshot_from_adjacency(
    A, window_index: int = 0, relative_floor: float = DEFAULT_RELATIVE_FLOOR, antisymmetry: float = 0.0
) -> CausalSnapshot:
    A = _sym(_square(A))
    Lbar = signed_laplacian(A)
    eps = spd_floor(Lbar, relative_floor)
    Ltilde = nearest_spd(Lbar, eps)
    return CausalSnapshot(window_index, A, Lbar, Ltilde, spd_log(Ltilde), eps, antisymmetry)
