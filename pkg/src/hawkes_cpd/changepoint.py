"""Fréchet-variance change-point test with binary segmentation.

All statistics are computed in the log chart: every SPD snapshot is replaced
by its matrix logarithm once, after which Log-Euclidean distances are plain
Frobenius distances and Fréchet means are arithmetic means.

Two calibrations of the rejection threshold are available. ``"asymptotic"``
uses one Monte-Carlo quantile of the squared standardised Brownian bridge
for every segment. ``"bootstrap"`` (default) resamples each tested segment
with replacement and takes the quantile of the recomputed sup statistic,
which absorbs the finite-sample bias of the mean-contamination term when
the snapshots are high dimensional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import CausalSnapshot, spd_log

DEGENERATE_SIGMA2 = 1e-14


@dataclass(frozen=True)
class CpConfig:
    c: float = 0.1
    alpha: float = 0.05
    mc_samples: int = 10000
    grid: int = 1000
    min_segment: int = 10
    max_depth: int = 6
    calibration: str = "bootstrap"
    bootstrap_samples: int = 1000

    def __post_init__(self):
        if not 0 < self.c < 0.5:
            raise ValueError("c must lie in (0, 0.5)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.grid < 100:
            raise ValueError("grid must be >= 100")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")
        if self.min_segment < 4:
            raise ValueError("min_segment must be >= 4")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.calibration not in ("bootstrap", "asymptotic"):
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.bootstrap_samples < 1:
            raise ValueError("bootstrap_samples must be positive")

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "alpha": self.alpha,
            "mc_samples": self.mc_samples,
            "grid": self.grid,
            "min_segment": self.min_segment,
            "max_depth": self.max_depth,
            "calibration": self.calibration,
            "bootstrap_samples": self.bootstrap_samples,
        }


def to_log_chart(Y) -> np.ndarray:
    """Stack of matrix logarithms, shape ``(n, m, m)``.

    Accepts ``CausalSnapshot`` objects (their cached logs are reused) or SPD
    matrices.
    """
    if isinstance(Y, np.ndarray) and Y.ndim == 3:
        return np.stack([spd_log(X) for X in Y]) if len(Y) else Y.astype(float)
    logs = [y.logL if isinstance(y, CausalSnapshot) else spd_log(y) for y in Y]
    if not logs:
        return np.empty((0, 0, 0))
    return np.stack(logs)


def _sq_dist(logs: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = logs - point
    return np.einsum("kij,kij->k", diff, diff)


def _segment_stats(logs: np.ndarray, k: int) -> tuple[float, float, float, float]:
    if not 1 <= k <= len(logs) - 1:
        raise ValueError(f"split index {k} leaves an empty segment (n={len(logs)})")
    left, right = logs[:k], logs[k:]
    mean_left, mean_right = left.mean(axis=0), right.mean(axis=0)
    return (
        float(_sq_dist(left, mean_left).mean()),
        float(_sq_dist(right, mean_right).mean()),
        float(_sq_dist(left, mean_right).mean()),
        float(_sq_dist(right, mean_left).mean()),
    )


def segment_frechet_stats(Y, k: int) -> tuple[float, float, float, float]:
    """``(V1, V2, V1C, V2C)`` for the split ``Y[:k] | Y[k:]``.

    ``V1C`` measures the first segment around the second segment's mean and
    vice versa.
    """
    return _segment_stats(to_log_chart(Y), k)


def _sigma2(logs: np.ndarray) -> float:
    d2 = _sq_dist(logs, logs.mean(axis=0))
    return float(np.mean(d2**2) - np.mean(d2) ** 2)


def sigma2_hat(Y) -> float:
    """Variance of squared distances to the full-sample Fréchet mean."""
    logs = to_log_chart(Y)
    if len(logs) < 2:
        raise ValueError("sigma2_hat needs at least two observations")
    return max(_sigma2(logs), 0.0)


def interior_indices(n: int, c: float) -> np.ndarray:
    """Split indices ``floor(nc) <= k <= n - floor(nc)``, restricted to ``1..n-1``."""
    lo = max(math.floor(n * c), 1)
    hi = min(n - math.floor(n * c), n - 1)
    return np.arange(lo, hi + 1)


@dataclass(frozen=True)
class Profile:
    ks: np.ndarray
    values: np.ndarray  # n * T_n(k / n)
    sigma2: float
    degenerate: bool


def _profile(logs: np.ndarray, c: float) -> Profile:
    """Vectorised profile from prefix sums of the flattened, centred logs.

    Uses ``V1 = mean ||x||^2 - ||m1||^2`` and ``V1C - V1 = V2C - V2 = ||m1 - m2||^2``,
    both exact in the flat log chart.
    """
    n = len(logs)
    ks = interior_indices(n, c)
    X = logs.reshape(n, -1)
    X = X - X.mean(axis=0)
    d2 = np.einsum("ij,ij->i", X, X)
    s2 = float(np.mean(d2**2) - np.mean(d2) ** 2)
    if s2 < DEGENERATE_SIGMA2:
        return Profile(ks, np.zeros(ks.size), max(s2, 0.0), True)
    csum = np.cumsum(X, axis=0)
    csq = np.cumsum(d2)
    left_n = ks.astype(float)
    right_n = n - left_n
    m1 = csum[ks - 1] / left_n[:, None]
    m2 = (csum[-1] - csum[ks - 1]) / right_n[:, None]
    v1 = csq[ks - 1] / left_n - np.einsum("ij,ij->i", m1, m1)
    v2 = (csq[-1] - csq[ks - 1]) / right_n - np.einsum("ij,ij->i", m2, m2)
    gap = m1 - m2
    between = 2 * np.einsum("ij,ij->i", gap, gap)
    u = ks / n
    values = n * u * (1 - u) / s2 * ((v1 - v2) ** 2 + between**2)
    return Profile(ks, values, s2, False)


def _profile_direct(logs: np.ndarray, c: float) -> Profile:
    """Reference profile evaluating the four segment variances at every split."""
    n = len(logs)
    ks = interior_indices(n, c)
    s2 = _sigma2(logs)
    if s2 < DEGENERATE_SIGMA2:
        return Profile(ks, np.zeros(ks.size), max(s2, 0.0), True)
    values = np.empty(ks.size)
    for idx, k in enumerate(ks):
        v1, v2, v1c, v2c = _segment_stats(logs, int(k))
        u = k / n
        values[idx] = n * u * (1 - u) / s2 * ((v1 - v2) ** 2 + (v1c - v1 + v2c - v2) ** 2)
    return Profile(ks, values, s2, False)


def tn_profile(Y, config: CpConfig = CpConfig()) -> Profile:
    """Scan statistic ``n T_n(k/n)`` over the interior split indices."""
    logs = to_log_chart(Y)
    if len(logs) < config.min_segment:
        raise ValueError(f"segment of {len(logs)} snapshots shorter than min_segment={config.min_segment}")
    return _profile(logs, config.c)


@lru_cache(maxsize=32)
def bb_sup_quantile(config: CpConfig = CpConfig(), seed: int = 0) -> float:
    """Monte-Carlo ``(1 - alpha)`` quantile of ``sup_{u in [c, 1-c]} B(u)^2 / (u (1 - u))``.

    Brownian bridges are sampled on the uniform grid ``k / grid``.
    """
    rng = np.random.default_rng(seed)
    u = np.arange(1, config.grid + 1) / config.grid
    inside = (u >= config.c - 1e-12) & (u <= 1 - config.c + 1e-12)
    u_in = u[inside]
    scale = u_in * (1 - u_in)
    sups = np.empty(config.mc_samples)
    batch = 1000
    for start in range(0, config.mc_samples, batch):
        size = min(batch, config.mc_samples - start)
        walk = np.cumsum(rng.standard_normal((size, config.grid)), axis=1) / math.sqrt(config.grid)
        bridge = walk[:, inside] - u_in * walk[:, -1:]
        sups[start : start + size] = np.max(bridge**2 / scale, axis=1)
    return float(np.quantile(sups, 1 - config.alpha))


def bootstrap_quantile(logs: np.ndarray, config: CpConfig, seed) -> float:
    """``(1 - alpha)`` quantile of ``sup n T_n`` over i.i.d. resamples of ``logs``.

    Degenerate resamples contribute a zero statistic.
    """
    rng = np.random.default_rng(seed)
    n = len(logs)
    sups = np.empty(config.bootstrap_samples)
    for b in range(config.bootstrap_samples):
        prof = _profile(logs[rng.integers(0, n, n)], config.c)
        sups[b] = prof.values.max() if prof.values.size else 0.0
    return float(np.quantile(sups, 1 - config.alpha))


def segment_seed(seed: int, start: int, stop: int) -> np.random.SeedSequence:
    """Bootstrap seed tied to the segment position, independent of recursion order."""
    return np.random.SeedSequence(seed, spawn_key=(start, stop))


@dataclass(frozen=True)
class SingleResult:
    index: int | None
    stat: float
    threshold: float
    profile: Profile | None
    reason: str = ""

    @property
    def rejected(self) -> bool:
        return self.index is not None


def _detect_single_logs(logs: np.ndarray, config: CpConfig, threshold, seed) -> SingleResult:
    """``threshold`` is a float, or ``None`` to bootstrap one with ``seed``."""
    if len(logs) < config.min_segment:
        return SingleResult(None, 0.0, float("nan") if threshold is None else threshold, None, "segment too short")
    prof = _profile(logs, config.c)
    if prof.degenerate:
        return SingleResult(None, 0.0, float("nan") if threshold is None else threshold, prof, "degenerate segment")
    if threshold is None:
        threshold = bootstrap_quantile(logs, config, seed)
    best = int(np.argmax(prof.values))
    stat = float(prof.values[best])
    if stat > threshold:
        return SingleResult(int(prof.ks[best]), stat, threshold, prof, "rejected")
    return SingleResult(None, stat, threshold, prof, "not significant")


def _fixed_threshold(config: CpConfig, seed: int, threshold: float | None) -> float | None:
    if threshold is None and config.calibration == "asymptotic":
        return bb_sup_quantile(config, seed)
    return threshold


def detect_single(Y, config: CpConfig = CpConfig(), seed: int = 0, threshold: float | None = None) -> SingleResult:
    """At-most-one-change test; the split index is the first profile maximiser."""
    logs = to_log_chart(Y)
    fixed = _fixed_threshold(config, seed, threshold)
    return _detect_single_logs(logs, config, fixed, segment_seed(seed, 0, len(logs)))


def _json_float(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


@dataclass
class SegmentRecord:
    start: int
    stop: int
    depth: int
    result: SingleResult
    children: list["SegmentRecord"] = field(default_factory=list)

    @property
    def change(self) -> int | None:
        return None if self.result.index is None else self.start + self.result.index

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "stop": self.stop,
            "depth": self.depth,
            "change": self.change,
            "stat": self.result.stat,
            "threshold": _json_float(self.result.threshold),
            "reason": self.result.reason,
            "sigma2": None if self.result.profile is None else self.result.profile.sigma2,
            "children": [ch.to_dict() for ch in self.children],
        }


@dataclass
class CpReport:
    change_indices: list[int]
    threshold: float | None  # shared threshold; None when bootstrapped per segment
    root: SegmentRecord
    n: int
    depth_exhausted: bool = False

    def segments(self) -> list[SegmentRecord]:
        """All analysed segments in depth-first order (left before right)."""
        out, stack = [], [self.root]
        while stack:
            rec = stack.pop()
            out.append(rec)
            stack.extend(reversed(rec.children))
        return out

    @property
    def profiles(self) -> list[tuple[int, np.ndarray, np.ndarray]]:
        """``(segment start, global indices, n T_n values)`` for each profiled segment."""
        return [
            (rec.start, rec.start + rec.result.profile.ks, rec.result.profile.values)
            for rec in self.segments()
            if rec.result.profile is not None
        ]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "changes": list(self.change_indices),
            "threshold": self.threshold,
            "depth_exhausted": self.depth_exhausted,
            "segments": [
                {
                    "start": rec.start,
                    "stop": rec.stop,
                    "depth": rec.depth,
                    "change": rec.change,
                    "stat": rec.result.stat,
                    "threshold": _json_float(rec.result.threshold),
                    "reason": rec.result.reason,
                    "sigma2": None if rec.result.profile is None else rec.result.profile.sigma2,
                }
                for rec in self.segments()
            ],
            "tree": self.root.to_dict(),
        }


def detect_multiple(Y, config: CpConfig = CpConfig(), seed: int = 0, threshold: float | None = None) -> CpReport:
    """Recursive binary segmentation.

    Under asymptotic calibration one Monte-Carlo threshold serves every level;
    under bootstrap calibration each segment gets its own threshold. No
    multiplicity correction is applied across levels.
    """
    logs = to_log_chart(Y)
    threshold = _fixed_threshold(config, seed, threshold)
    exhausted = False

    def recurse(start: int, stop: int, depth: int) -> SegmentRecord:
        nonlocal exhausted
        res = _detect_single_logs(logs[start:stop], config, threshold, segment_seed(seed, start, stop))
        rec = SegmentRecord(start, stop, depth, res)
        if res.index is not None:
            if depth >= config.max_depth:
                exhausted = True
            else:
                split = start + res.index
                rec.children = [recurse(start, split, depth + 1), recurse(split, stop, depth + 1)]
        return rec

    root = recurse(0, len(logs), 1)
    report = CpReport([], threshold, root, len(logs), exhausted)
    report.change_indices = sorted(rec.change for rec in report.segments() if rec.change is not None)
    return report
