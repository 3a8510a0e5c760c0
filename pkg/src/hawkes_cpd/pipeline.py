"""Window -> cumulants -> NPHC -> snapshot -> change-point orchestration."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .changepoint import CpConfig, CpReport, detect_multiple
from .cumulants import CumulantSet, estimate_cumulants, select_W
from .events import EventStream, WindowSpec, slice_windows, window_event_counts
from .geometry import DEFAULT_RELATIVE_FLOOR, CausalSnapshot, build_snapshot
from .nphc import KernelMatrix, NphcConfig, fit_R

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    window: WindowSpec
    W: float | None = None  # None: choose once on the full recording
    W_multiple: float = 2.0  # detection favours low-variance snapshots over small truncation bias
    W_delta: float | None = None
    W_overrides: dict[int, float] = field(default_factory=dict)  # window index -> W
    nphc: NphcConfig = field(default_factory=NphcConfig)
    cp: CpConfig = field(default_factory=CpConfig)
    spd_floor: float = DEFAULT_RELATIVE_FLOOR
    seed: int = 0
    workers: int | None = None

    def to_dict(self) -> dict:
        return {
            "window": {"length": self.window.length, "stride": self.window.stride, "origin": self.window.origin},
            "W": self.W,
            "W_multiple": self.W_multiple,
            "W_delta": self.W_delta,
            "W_overrides": {str(k): float(v) for k, v in sorted(self.W_overrides.items())},
            "nphc": self.nphc.to_dict(),
            "cp": self.cp.to_dict(),
            "spd_floor": self.spd_floor,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        """Build from a (possibly partial) nested mapping, e.g. a parsed TOML file."""
        d = dict(d)
        if "window" not in d:
            raise ValueError("config needs a [window] table with length and stride")
        window = WindowSpec(**d.pop("window"))
        nphc_d = dict(d.pop("nphc", {}))
        if isinstance(nphc_d.get("init"), list):
            nphc_d["init"] = np.array(nphc_d["init"])
        nphc = NphcConfig(**nphc_d)
        cp = CpConfig(**d.pop("cp", {}))
        if "W_overrides" in d:
            d["W_overrides"] = {int(k): float(v) for k, v in d["W_overrides"].items()}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(window=window, nphc=nphc, cp=cp, **d)


@dataclass
class PipelineResult:
    config: PipelineConfig
    W: float
    window_starts: np.ndarray
    window_counts: np.ndarray
    cumulants: list[CumulantSet]
    kernels: list[KernelMatrix]
    snapshots: list[CausalSnapshot]
    report: CpReport

    @property
    def resolved_config(self) -> dict:
        """Configuration with the selected ``W`` filled in, enough to rerun exactly."""
        d = self.config.to_dict()
        d["W"] = self.W
        return d


def _process_window(k: int, window: EventStream, W: float, config: PipelineConfig):
    try:
        cums = estimate_cumulants(window, W)
        km = fit_R(cums, config.nphc)
        snap = build_snapshot(km.H, k, config.spd_floor)
    except Exception as exc:  # surface the failing window
        raise PipelineError(f"window {k}: {exc}") from exc
    return cums, km, snap


def resolve_widths(events: EventStream, config: PipelineConfig, n_windows: int) -> tuple[float, list[float]]:
    """The shared ``W`` (selected on the full recording unless fixed) and the
    per-window widths after overrides."""
    if config.W is None:
        W = select_W(events, config.W_delta, config.W_multiple)
        log.info("selected W=%g on the full recording", W)
    else:
        W = float(config.W)
    bad = [k for k in config.W_overrides if not 0 <= k < n_windows]
    if bad:
        raise PipelineError(f"W override for nonexistent window(s) {sorted(bad)}")
    widths = [float(config.W_overrides.get(k, W)) for k in range(n_windows)]
    for k, w in enumerate(widths):
        if not 0 < w < config.window.length / 2:
            raise PipelineError(f"window {k}: W={w} must lie in (0, {config.window.length / 2})")
    return W, widths


def run_pipeline(events: EventStream, config: PipelineConfig) -> PipelineResult:
    """Run every stage; windows are processed on a thread pool and reduced in index order."""
    try:
        windows = slice_windows(events, config.window)
    except ValueError as exc:
        raise PipelineError(str(exc)) from exc
    if len(windows) < config.cp.min_segment:
        raise PipelineError(
            f"fewer windows than min_segment ({len(windows)} < {config.cp.min_segment})"
        )
    W, widths = resolve_widths(events, config, len(windows))

    workers = config.workers or os.cpu_count() or 1
    jobs = list(enumerate(windows))
    if workers == 1:
        results = [_process_window(k, w, widths[k], config) for k, w in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda kw: _process_window(kw[0], kw[1], widths[kw[0]], config), jobs))
    cumulants, kernels, snapshots = (list(x) for x in zip(*results))
    report = detect_multiple(snapshots, config.cp, config.seed)
    return PipelineResult(
        config=config,
        W=W,
        window_starts=config.window.starts(events.horizon),
        window_counts=window_event_counts(events, config.window),
        cumulants=cumulants,
        kernels=kernels,
        snapshots=snapshots,
        report=report,
    )


def dump_json(obj, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def report_render(
    report: CpReport,
    out_dir: str | Path,
    *,
    window_counts: np.ndarray | None = None,
    window_starts: np.ndarray | None = None,
    config: dict | None = None,
) -> list[Path]:
    """Write ``changes.json``, one ``profile_<k>.tsv`` per profiled segment and
    ``events_per_window.tsv`` when counts are given. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    payload = {"changes": sorted(int(c) for c in report.change_indices)}
    if window_starts is not None:
        payload["change_times"] = [float(window_starts[c]) for c in payload["changes"]]
    payload["report"] = report.to_dict()
    if config is not None:
        payload["config"] = config
        payload["seed"] = config.get("seed")
    path = out / "changes.json"
    dump_json(payload, path)
    written.append(path)

    for k, rec in enumerate(rec for rec in report.segments() if rec.result.profile is not None):
        prof = rec.result.profile
        path = out / f"profile_{k}.tsv"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# segment [{rec.start}, {rec.stop}) depth={rec.depth}\n")
            fh.write("window_index\tnTn\tthreshold\n")
            for idx, val in zip(rec.start + prof.ks, prof.values):
                fh.write(f"{int(idx)}\t{float(val)!r}\t{float(rec.result.threshold)!r}\n")
        written.append(path)

    if window_counts is not None:
        path = out / "events_per_window.tsv"
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("window_index\tstart\tevents\n")
            starts = window_starts if window_starts is not None else np.full(len(window_counts), np.nan)
            for k, (s, n) in enumerate(zip(starts, window_counts)):
                fh.write(f"{k}\t{float(s)!r}\t{int(n)}\n")
        written.append(path)
    return written


def write_artifacts(
    result: PipelineResult, out_dir: str | Path, *, emit_intermediate: bool = False, include_log: bool = False
) -> list[Path]:
    out = Path(out_dir)
    config = result.resolved_config
    written = report_render(
        result.report,
        out,
        window_counts=result.window_counts,
        window_starts=result.window_starts,
        config=config,
    )
    if emit_intermediate:
        for name, items in (
            ("cumulants.json", [dict(window_index=k, **c.to_dict()) for k, c in enumerate(result.cumulants)]),
            ("kernels.json", [km.to_dict(k) for k, km in enumerate(result.kernels)]),
            ("snapshots.json", [s.to_dict(include_log) for s in result.snapshots]),
        ):
            path = out / name
            dump_json({"config": config, "windows": items}, path)
            written.append(path)
    return written


def with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Return ``config`` with non-``None`` top-level or nested overrides applied.

    Nested keys use ``nphc__kappa`` / ``cp__alpha`` style names.
    """
    top, nphc, cp = {}, {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key.startswith("nphc__"):
            nphc[key[6:]] = value
        elif key.startswith("cp__"):
            cp[key[4:]] = value
        else:
            top[key] = value
    if nphc:
        top["nphc"] = replace(config.nphc, **nphc)
    if cp:
        top["cp"] = replace(config.cp, **cp)
    return replace(config, **top)
