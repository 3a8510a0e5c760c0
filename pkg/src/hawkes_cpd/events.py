"""Event streams, overlapping windows and price-threshold event extraction."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class EventFormatError(ValueError):
    """Raised when an event or price file cannot be parsed or violates an invariant."""


def _as_sequence(times) -> np.ndarray:
    arr = np.asarray(times, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EventStream:
    """Per-subject event timestamps on ``[0, horizon]``.

    ``events[i]`` is a read-only, strictly increasing float array.
    """

    horizon: float
    events: tuple[np.ndarray, ...]

    def __post_init__(self):
        events = tuple(_as_sequence(e) for e in self.events)
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "horizon", float(self.horizon))
        if not np.isfinite(self.horizon) or self.horizon < 0:
            raise ValueError(f"horizon must be finite and nonnegative, got {self.horizon}")
        if not events:
            raise ValueError("an event stream needs at least one subject")
        for i, e in enumerate(events):
            if e.size == 0:
                continue
            if not np.all(np.isfinite(e)):
                raise ValueError(f"subject {i}: non-finite timestamp")
            if e[0] < 0 or e[-1] > self.horizon:
                raise ValueError(f"subject {i}: timestamps outside [0, {self.horizon}]")
            if e.size > 1 and np.any(np.diff(e) <= 0):
                raise ValueError(f"subject {i}: timestamps not strictly increasing")

    @property
    def dim(self) -> int:
        return len(self.events)

    @property
    def counts(self) -> np.ndarray:
        return np.array([e.size for e in self.events], dtype=np.int64)

    @property
    def n_events(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def empty(cls, dim: int, horizon: float) -> "EventStream":
        return cls(horizon, tuple(np.empty(0) for _ in range(dim)))

    def shifted(self, offset: float, horizon: float | None = None) -> "EventStream":
        new_horizon = self.horizon + offset if horizon is None else horizon
        return EventStream(new_horizon, tuple(e + offset for e in self.events))


@dataclass(frozen=True)
class WindowSpec:
    length: float
    stride: float
    origin: float = 0.0

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("window length must be positive")
        if not 0 < self.stride <= self.length:
            raise ValueError("window stride must satisfy 0 < stride <= length")

    @property
    def overlap(self) -> float:
        return self.length - self.stride

    def starts(self, horizon: float) -> np.ndarray:
        """Window start times that fit entirely inside ``[origin, horizon]``."""
        if self.origin + self.length > horizon:
            raise ValueError("window longer than recording")
        # Tolerate round-off so that e.g. 600000 / 5000 windows are all kept.
        n = int(np.floor((horizon - self.origin - self.length) / self.stride + 1e-9)) + 1
        return self.origin + self.stride * np.arange(n)


@dataclass(frozen=True)
class PriceSeries:
    """Per-instrument ``(time, price)`` samples with positive prices."""

    times: tuple[np.ndarray, ...]
    prices: tuple[np.ndarray, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        times = tuple(_as_sequence(t) for t in self.times)
        prices = tuple(_as_sequence(p) for p in self.prices)
        if len(times) != len(prices):
            raise ValueError("times and prices must have one entry per instrument")
        for i, (t, p) in enumerate(zip(times, prices)):
            if t.shape != p.shape:
                raise ValueError(f"instrument {i}: times and prices differ in length")
            if t.size > 1 and np.any(np.diff(t) < 0):
                raise ValueError(f"instrument {i}: timestamps decrease")
            if np.any(~(p > 0)):
                raise ValueError(f"instrument {i}: nonpositive price")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(len(times))))

    @property
    def dim(self) -> int:
        return len(self.times)


def slice_windows(stream: EventStream, spec: WindowSpec) -> list[EventStream]:
    """Cut ``stream`` into windows ``[start, start + L)`` re-based to local time.

    Events on a shared boundary belong to the later window only, so an event
    may appear in several overlapping windows but never twice in one.
    """
    out = []
    for start in spec.starts(stream.horizon):
        stop = start + spec.length
        per_subject = []
        for e in stream.events:
            lo = np.searchsorted(e, start, side="left")
            hi = np.searchsorted(e, stop, side="left")
            per_subject.append(e[lo:hi] - start)
        out.append(EventStream(spec.length, tuple(per_subject)))
    return out


def window_event_counts(stream: EventStream, spec: WindowSpec) -> np.ndarray:
    """Total number of events in each window (all subjects pooled)."""
    starts = spec.starts(stream.horizon)
    total = np.zeros(starts.size, dtype=np.int64)
    for e in stream.events:
        total += np.searchsorted(e, starts + spec.length, side="left")
        total -= np.searchsorted(e, starts, side="left")
    return total


def prices_to_events(series: PriceSeries, threshold: float) -> EventStream:
    """Emit an event whenever a price moves by ``threshold`` relative to a reference.

    The reference is the first price and is reset to the price of every
    emitted event.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    events = []
    horizon = 0.0
    for t, p in zip(series.times, series.prices):
        if t.size == 0:
            events.append(np.empty(0))
            continue
        horizon = max(horizon, float(t[-1]))
        ref = p[0]
        hits = []
        last = -np.inf
        for ti, pi in zip(t[1:], p[1:]):
            if abs(pi - ref) / ref >= threshold:
                ref = pi
                # Several samples may share a timestamp; keep one event per instant.
                if ti > last:
                    hits.append(ti)
                    last = ti
        events.append(np.asarray(hits, dtype=float))
    return EventStream(horizon, tuple(events))


_META_RE = re.compile(r"(\w+)\s*=\s*([^\s]+)")


def _build_stream(rows: list[tuple[int, float, int]], dim: int | None, horizon: float | None) -> EventStream:
    if dim is None:
        dim = max((s for s, _, _ in rows), default=-1) + 1
        if dim == 0:
            raise EventFormatError("empty event file without a declared dim")
    per_subject: list[list[tuple[float, int]]] = [[] for _ in range(dim)]
    for subject, t, line in rows:
        if subject < 0 or subject >= dim:
            raise EventFormatError(f"subject {subject} out of range [0, {dim}) at line {line}")
        if t < 0:
            raise EventFormatError(f"negative time at line {line}")
        per_subject[subject].append((t, line))
    events = []
    for items in per_subject:
        items.sort(key=lambda x: x[0])
        for (t0, _), (t1, line) in zip(items, items[1:]):
            if t1 <= t0:
                raise EventFormatError(f"non-increasing timestamps at line {line}")
        events.append(np.array([t for t, _ in items], dtype=float))
    max_t = max((float(e[-1]) for e in events if e.size), default=0.0)
    if horizon is None:
        horizon = max_t
    elif max_t > horizon:
        raise EventFormatError(f"timestamp {max_t} beyond declared horizon {horizon}")
    return EventStream(horizon, tuple(events))


def _check_order(rows: list[tuple[int, float, int]]) -> None:
    # Rows for one subject may interleave with other subjects, but a repeated
    # or backwards timestamp inside a subject is reported at its own line.
    last: dict[int, float] = {}
    for subject, t, line in rows:
        if subject in last and t <= last[subject]:
            raise EventFormatError(f"non-increasing timestamps at line {line}")
        last[subject] = t


def load_events(path: str | Path, format: str | None = None, *, strict_order: bool = True) -> EventStream:
    """Read an event file in ``csv`` or ``jsonl`` format.

    With ``strict_order`` (default) each subject's rows must already appear in
    increasing time order; otherwise rows are sorted per subject and only
    exact duplicates are rejected.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "jsonl"):
        raise EventFormatError(f"unsupported event format {fmt!r}")
    dim = horizon = None
    rows: list[tuple[int, float, int]] = []
    with path.open(encoding="utf-8") as fh:
        if fmt == "csv":
            header_seen = False
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    meta = dict(_META_RE.findall(line))
                    if "dim" in meta:
                        dim = int(meta["dim"])
                    if "horizon" in meta:
                        horizon = float(meta["horizon"])
                    continue
                if not header_seen:
                    cols = [c.strip() for c in next(csv.reader([line]))]
                    if cols != ["subject", "time"]:
                        raise EventFormatError(f"expected header 'subject,time' at line {lineno}")
                    header_seen = True
                    continue
                try:
                    s, t = next(csv.reader([line]))
                    rows.append((int(s), float(t), lineno))
                except ValueError as exc:
                    raise EventFormatError(f"malformed row at line {lineno}: {line!r}") from exc
        else:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise EventFormatError(f"malformed JSON at line {lineno}") from exc
                if isinstance(obj, dict) and "meta" in obj:
                    meta = obj["meta"]
                    dim = int(meta["dim"]) if "dim" in meta else dim
                    horizon = float(meta["horizon"]) if "horizon" in meta else horizon
                    continue
                try:
                    rows.append((int(obj["subject"]), float(obj["time"]), lineno))
                except (KeyError, TypeError, ValueError) as exc:
                    raise EventFormatError(f"malformed row at line {lineno}") from exc
    if strict_order:
        _check_order(rows)
    return _build_stream(rows, dim, horizon)


def save_events(stream: EventStream, path: str | Path, format: str | None = None) -> None:
    """Write ``stream`` as CSV or JSONL, declaring dim and horizon in the header."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    subj = np.concatenate([np.full(e.size, i) for i, e in enumerate(stream.events)])
    times = np.concatenate(stream.events)
    order = np.lexsort((subj, times))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            fh.write(f"# dim={stream.dim} horizon={stream.horizon!r}\n")
            fh.write("subject,time\n")
            for k in order:
                fh.write(f"{int(subj[k])},{float(times[k])!r}\n")
        elif fmt == "jsonl":
            fh.write(json.dumps({"meta": {"dim": stream.dim, "horizon": stream.horizon}}) + "\n")
            for k in order:
                fh.write(json.dumps({"subject": int(subj[k]), "time": float(times[k])}) + "\n")
        else:
            raise EventFormatError(f"unsupported event format {fmt!r}")


def load_prices(path: str | Path) -> PriceSeries:
    """Read a price CSV with header ``instrument,time,price``.

    Instruments are ordered by first appearance; rows are sorted by time per
    instrument.
    """
    samples: dict[str, list[tuple[float, float]]] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if header != ["instrument", "time", "price"]:
                    raise EventFormatError(f"expected header 'instrument,time,price' at line {lineno}")
                continue
            try:
                name, t, p = row
                t, p = float(t), float(p)
            except ValueError as exc:
                raise EventFormatError(f"malformed row at line {lineno}: {row!r}") from exc
            if not p > 0:
                raise EventFormatError(f"nonpositive price at line {lineno}")
            samples.setdefault(name.strip(), []).append((t, p))
    names = tuple(samples)
    times, prices = [], []
    for name in names:
        pts = sorted(samples[name], key=lambda x: x[0])
        times.append(np.array([t for t, _ in pts]))
        prices.append(np.array([p for _, p in pts]))
    return PriceSeries(tuple(times), tuple(prices), names)


def stream_from_lists(events: Sequence[Sequence[float]], horizon: float) -> EventStream:
    return EventStream(horizon, tuple(np.asarray(e, dtype=float) for e in events))
