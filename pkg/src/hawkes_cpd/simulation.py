"""Multivariate exponential-kernel Hawkes simulation by Ogata thinning."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .events import EventStream

_CHUNK = 1 << 16


@dataclass(frozen=True)
class HawkesParams:
    """Background rates ``mu`` (m,), amplitudes ``alpha`` (m, m), decays ``beta`` (m, m).

    ``alpha[i, j]`` is the jump in subject ``i``'s intensity caused by an
    event of subject ``j``.
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        m = mu.size
        if beta.ndim == 0:
            beta = np.full((m, m), float(beta))
        if alpha.shape != (m, m) or beta.shape != (m, m):
            raise ValueError(f"alpha and beta must be {m}x{m}")
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ValueError("mu entries must be finite and nonnegative")
        if np.any(~(beta > 0)) or not np.all(np.isfinite(beta)):
            raise ValueError("beta entries must be strictly positive")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("alpha entries must be finite")
        for a in (mu, alpha, beta):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def is_stationary(self) -> bool:
        return spectral_radius(kernel_integral(self)) < 1

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.mu, self.alpha, self.beta):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


@dataclass(frozen=True)
class Scenario:
    """Consecutive regimes ``(duration, params)`` simulated with a common seed."""

    segments: tuple[tuple[float, HawkesParams], ...]
    seed: int = 0

    def __post_init__(self):
        segs = tuple((float(d), p) for d, p in self.segments)
        if not segs:
            raise ValueError("a scenario needs at least one segment")
        if any(not d > 0 for d, _ in segs):
            raise ValueError("segment durations must be positive")
        if len({p.dim for _, p in segs}) != 1:
            raise ValueError("all segments must share the same dimension")
        object.__setattr__(self, "segments", segs)

    @property
    def horizon(self) -> float:
        return float(sum(d for d, _ in self.segments))

    @property
    def change_times(self) -> list[float]:
        return np.cumsum([d for d, _ in self.segments])[:-1].tolist()


def kernel_integral(params: HawkesParams) -> np.ndarray:
    """Branching ratios ``h_ij = alpha_ij / beta_ij`` of exponential kernels."""
    return params.alpha / params.beta


def spectral_radius(H) -> float:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    if H.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(H))))


@njit(cache=True, nogil=True)
def _thin(mu, alpha, beta, horizon, t, S, uniforms, out_t, out_k):
    """Advance the thinning loop until the horizon, buffer exhaustion or full output.

    ``S[i, j]`` holds the decayed excitation of subject ``i`` by subject ``j``.
    Returns ``(time, n_events, n_uniforms_used, done)``.
    """
    m = mu.size
    n = 0
    p = 0
    lam = np.empty(m)
    while True:
        if p + 2 > uniforms.size or n >= out_t.size:
            return t, n, p, False
        bound = 0.0
        for i in range(m):
            bound += mu[i]
            for j in range(m):
                if S[i, j] > 0.0:
                    bound += S[i, j]
        if bound <= 0.0:
            return horizon, n, p, True
        dt = -np.log(1.0 - uniforms[p]) / bound
        u = uniforms[p + 1] * bound
        p += 2
        t_new = t + dt
        if t_new > horizon:
            return horizon, n, p, True
        for i in range(m):
            for j in range(m):
                S[i, j] *= np.exp(-beta[i, j] * dt)
        total = 0.0
        for i in range(m):
            li = mu[i]
            for j in range(m):
                li += S[i, j]
            lam[i] = li if li > 0.0 else 0.0
            total += lam[i]
        # A zero-length step would duplicate a timestamp; treat it as a rejection.
        if u < total and t_new > t:
            acc = 0.0
            k = m - 1
            for i in range(m):
                acc += lam[i]
                if u < acc:
                    k = i
                    break
            for i in range(m):
                S[i, k] += alpha[i, k]
            out_t[n] = t_new
            out_k[n] = k
            n += 1
        t = t_new


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def simulate(params: HawkesParams, T: float, seed=0) -> EventStream:
    """Draw one path on ``[0, T]`` starting from an empty history.

    Intensities are floored at zero, so negative amplitudes act as inhibition.
    Identical ``(params, T, seed)`` give bit-identical output.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    if not params.is_stationary:
        raise ValueError("nonstationary parameters: spectral radius of H must be < 1")
    rng = np.random.default_rng(_seed_sequence(seed))
    m = params.dim
    mu = np.ascontiguousarray(params.mu)
    alpha = np.ascontiguousarray(params.alpha)
    beta = np.ascontiguousarray(params.beta)
    S = np.zeros((m, m))
    t = 0.0
    times, subjects = [], []
    while True:
        uniforms = rng.random(_CHUNK)
        out_t = np.empty(_CHUNK // 2)
        out_k = np.empty(_CHUNK // 2, dtype=np.int64)
        t, n, _, done = _thin(mu, alpha, beta, float(T), t, S, uniforms, out_t, out_k)
        times.append(out_t[:n])
        subjects.append(out_k[:n])
        if done:
            break
    times = np.concatenate(times)
    subjects = np.concatenate(subjects)
    return EventStream(float(T), tuple(times[subjects == i] for i in range(m)))


def segment_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Seed for regime ``index``; regime 0 reuses ``seed`` itself."""
    if index == 0:
        return np.random.SeedSequence(seed)
    return np.random.SeedSequence(seed, spawn_key=(index,))


def simulate_scenario(scenario: Scenario) -> tuple[EventStream, list[float]]:
    """Simulate each regime independently and concatenate them in time.

    Excitation does not carry across regime boundaries.
    """
    m = scenario.segments[0][1].dim
    parts: list[list[np.ndarray]] = [[] for _ in range(m)]
    offset = 0.0
    for k, (duration, params) in enumerate(scenario.segments):
        seg = simulate(params, duration, segment_seed(scenario.seed, k))
        for i, e in enumerate(seg.events):
            # Drop an event landing exactly on a boundary already used by the
            # previous regime's last event.
            shifted = e + offset
            if parts[i] and parts[i][-1].size and shifted.size and shifted[0] <= parts[i][-1][-1]:
                shifted = shifted[shifted > parts[i][-1][-1]]
            parts[i].append(shifted)
        offset += duration
    events = tuple(np.concatenate(p) if p else np.empty(0) for p in parts)
    return EventStream(scenario.horizon, events), scenario.change_times


def _benchmark_alpha(rng: np.random.Generator, dim: int) -> np.ndarray:
    raw = rng.normal(0.0, 1.0 / 8.0, size=(dim, dim))
    np.fill_diagonal(raw, 1.0 / 8.0)
    return (raw + raw.T) / 2


def make_benchmark_params(dim: int, seed=0, *, mu: float = 0.3, max_draws: int = 1000) -> HawkesParams:
    """Random stationary parameters following the synthetic benchmark recipe.

    ``beta_ij = 0.5 + U(0, 1)``, unit-free diagonal amplitude ``1/8`` and
    ``N(0, 1/64)`` off-diagonal amplitudes, symmetrised. Draws are repeated
    until the branching matrix is stationary.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(_seed_sequence(seed))
    for _ in range(max_draws):
        beta = 0.5 + rng.uniform(0.0, 1.0, size=(dim, dim))
        alpha = _benchmark_alpha(rng, dim)
        if spectral_radius(alpha / beta) < 1:
            return HawkesParams(np.full(dim, mu), alpha, beta)
    raise RuntimeError(f"no stationary parameters after {max_draws} draws")


def make_benchmark_scenario(
    dim: int,
    n_segments: int,
    segment_length: float,
    seed: int = 0,
    *,
    mu: float = 0.3,
    max_draws: int = 1000,
) -> Scenario:
    """Regime-switching scenario: decays and rates fixed, amplitudes redrawn per regime."""
    rng = np.random.default_rng(seed)
    beta = 0.5 + rng.uniform(0.0, 1.0, size=(dim, dim))
    segments = []
    for _ in range(n_segments):
        for _ in range(max_draws):
            alpha = _benchmark_alpha(rng, dim)
            if spectral_radius(alpha / beta) < 1:
                break
        else:
            raise RuntimeError(f"no stationary amplitudes after {max_draws} draws")
        segments.append((segment_length, HawkesParams(np.full(dim, mu), alpha, beta)))
    return Scenario(tuple(segments), seed)


def params_digest(params: Sequence[HawkesParams]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.digest().encode())
    return h.hexdigest()
