"""Integrated cumulant estimators over a truncation window ``[-W, W]``.

Window counts use the interval ``(tau - W, tau + W]`` and therefore include
the central event when the two subjects coincide. Events live in ``[0, T]``
so counts clip at the recording boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .events import EventStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CumulantSet:
    lambda_hat: np.ndarray
    C_hat: np.ndarray
    Kc_hat: np.ndarray
    W: float
    T: float

    def __post_init__(self):
        if not self.W > 0 or not self.T > 0:
            raise ValueError("W and T must be positive")
        if np.any(np.asarray(self.lambda_hat) < 0):
            raise ValueError("lambda_hat must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lambda_hat)

    def to_dict(self) -> dict:
        return {
            "lambda": np.asarray(self.lambda_hat).tolist(),
            "C": np.asarray(self.C_hat).tolist(),
            "Kc": np.asarray(self.Kc_hat).tolist(),
            "W": self.W,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CumulantSet":
        return cls(np.array(d["lambda"]), np.array(d["C"]), np.array(d["Kc"]), float(d["W"]), float(d["T"]))


@njit(cache=True, nogil=True)
def _window_counts(queries, targets, lo, hi):
    """For sorted ``queries`` count sorted ``targets`` in ``(q + lo, q + hi]``."""
    out = np.empty(queries.size, dtype=np.int64)
    a = 0
    b = 0
    nt = targets.size
    for k in range(queries.size):
        q = queries[k]
        while a < nt and targets[a] <= q + lo:
            a += 1
        while b < nt and targets[b] <= q + hi:
            b += 1
        out[k] = b - a
    return out


@njit(cache=True, nogil=True)
def _triangle_pair_sum(x, y, width):
    """``sum_{s in x} sum_{t in y} (width - |t - s|)^+`` by a two-pointer sweep."""
    total = 0.0
    start = 0
    ny = y.size
    for k in range(x.size):
        s = x[k]
        while start < ny and y[start] <= s - width:
            start += 1
        idx = start
        while idx < ny and y[idx] < s + width:
            total += width - abs(y[idx] - s)
            idx += 1
    return total


def _check_W(stream: EventStream, W: float) -> None:
    if not stream.horizon > 0:
        raise ValueError("zero horizon")
    if not 0 < W < stream.horizon / 2:
        raise ValueError(f"W={W} out of range (0, {stream.horizon / 2})")


def estimate_lambda(stream: EventStream) -> np.ndarray:
    """Mean intensity per subject, ``N_i(T) / T``."""
    if not stream.horizon > 0:
        raise ValueError("zero horizon")
    return stream.counts / stream.horizon


def _centered_counts(stream: EventStream, W: float, lam: np.ndarray) -> list[np.ndarray]:
    """For each subject i, an ``(n_i, m)`` array of centred window counts around its events."""
    out = []
    for zi in stream.events:
        cols = [
            _window_counts(zi, zj, -W, W) - 2 * W * lam[j]
            for j, zj in enumerate(stream.events)
        ]
        out.append(np.column_stack(cols) if cols else np.empty((zi.size, 0)))
    return out


def estimate_C(stream: EventStream, W: float) -> np.ndarray:
    """Integrated covariance estimate ``C_hat[i, j]``; not symmetrised."""
    _check_W(stream, W)
    lam = estimate_lambda(stream)
    D = _centered_counts(stream, W, lam)
    return np.vstack([d.sum(axis=0) for d in D]) / stream.horizon


def pair_term(stream: EventStream, W: float, j: int, k: int) -> float:
    """``sum_{tau in Z_j} sum_{tau' in Z_k} (2W - |tau' - tau|)^+``."""
    return float(_triangle_pair_sum(stream.events[j], stream.events[k], 2 * W))


def estimate_K(stream: EventStream, W: float, i: int, j: int, k: int) -> float:
    """Third-order integrated cumulant estimate for one index triple."""
    _check_W(stream, W)
    T = stream.horizon
    lam = estimate_lambda(stream)
    zi = stream.events[i]
    cj = _window_counts(zi, stream.events[j], -W, W) - 2 * W * lam[j]
    ck = _window_counts(zi, stream.events[k], -W, W) - 2 * W * lam[k]
    return float(
        np.dot(cj, ck) / T
        - lam[i] / T * pair_term(stream, W, j, k)
        + 4 * W**2 * lam[i] * lam[j] * lam[k]
    )


def _Kc_from_counts(stream: EventStream, W: float, lam: np.ndarray, D: list[np.ndarray]) -> np.ndarray:
    T = stream.horizon
    m = stream.dim
    K = np.empty((m, m))
    for i in range(m):
        first = D[i][:, i] @ D[i] / T
        for j in range(m):
            K[i, j] = (
                first[j]
                - lam[i] / T * pair_term(stream, W, i, j)
                + 4 * W**2 * lam[i] ** 2 * lam[j]
            )
    return K


def estimate_Kc(stream: EventStream, W: float) -> np.ndarray:
    """The ``K_iij`` slice of the third cumulant, arranged as an m x m matrix."""
    _check_W(stream, W)
    lam = estimate_lambda(stream)
    return _Kc_from_counts(stream, W, lam, _centered_counts(stream, W, lam))


def estimate_cumulants(stream: EventStream, W: float) -> CumulantSet:
    """Lambda, C and K^c from one shared pass of window counts."""
    _check_W(stream, W)
    lam = estimate_lambda(stream)
    D = _centered_counts(stream, W, lam)
    C = np.vstack([d.sum(axis=0) for d in D]) / stream.horizon
    Kc = _Kc_from_counts(stream, W, lam, D)
    return CumulantSet(lam, C, Kc, float(W), stream.horizon)


def covariance_density(stream: EventStream, t: float, delta: float) -> np.ndarray:
    """Binned covariance density ``C_hat_ij(t)`` over lag bin ``(t, t + delta]``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not stream.horizon > 0:
        raise ValueError("zero horizon")
    if t < 0:
        raise ValueError("lag must be nonnegative")
    T = stream.horizon
    lam = estimate_lambda(stream)
    m = stream.dim
    out = np.empty((m, m))
    for i, zi in enumerate(stream.events):
        for j, zj in enumerate(stream.events):
            counts = _window_counts(zi, zj, t, t + delta)
            out[i, j] = (counts.sum() - zi.size * delta * lam[j]) / (delta * T)
    return out


def default_delta(stream: EventStream) -> float:
    """A tenth of the mean per-subject inter-event time."""
    n = stream.n_events
    if n == 0:
        raise ValueError("empty stream")
    return 0.1 * stream.dim * stream.horizon / n


def lag_grid(stream: EventStream, delta: float, n_lags: int = 40) -> np.ndarray:
    t_max = min(stream.horizon / 10, 1000 * delta)
    if t_max < 10 * delta:
        raise ValueError("recording too short for the covariance-density lag grid")
    return np.geomspace(delta, t_max, n_lags)


def characteristic_time(lags: np.ndarray, norms: np.ndarray) -> float | None:
    """E-folding lag of the covariance-density norm above its tail level.

    The tail level is the median norm over the last lag decade. If the
    first-lag norm is within twice that level there is no detectable
    correlation and the first lag is returned. Otherwise the result is the
    smallest lag after which the norm stays below
    ``tail + (norms[0] - tail) / e``; ``None`` if that only happens in the
    last decade.
    """
    lags = np.asarray(lags, dtype=float)
    norms = np.asarray(norms, dtype=float)
    tail = lags >= lags[-1] / 10
    level = float(np.median(norms[tail]))
    if norms[0] <= 2 * level:
        return float(lags[0])
    threshold = level + (norms[0] - level) / np.e
    last = np.nonzero(norms > threshold)[0][-1]
    if last + 1 >= lags.size or tail[last + 1]:
        return None
    return float(lags[last + 1])


def select_W(stream: EventStream, delta: float | None = None, multiple: float = 5.0, n_lags: int = 40) -> float:
    """Truncation half-width ``multiple * tau_c`` from the covariance density decay."""
    if stream.n_events == 0:
        raise ValueError("cannot select W on an empty stream")
    delta = default_delta(stream) if delta is None else delta
    lags = lag_grid(stream, delta, n_lags)
    norms = np.array([np.linalg.norm(covariance_density(stream, t, delta)) for t in lags])
    tau_c = characteristic_time(lags, norms)
    if tau_c is None:
        fallback = 100 * stream.horizon / stream.n_events
        log.warning("covariance density does not decay; falling back to W=%g", fallback)
        return float(fallback)
    return float(multiple * tau_c)
