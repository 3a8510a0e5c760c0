"""Command line entry point.

Exit codes: 0 on success without detected changes, 2 when changes were
detected, 1 on any error (including usage errors).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import tomli

from .changepoint import CpConfig, detect_multiple
from .cumulants import estimate_cumulants
from .events import EventFormatError, load_events, load_prices, prices_to_events, save_events, slice_windows
from .geometry import snapshot_from_adjacency
from .nphc import FitError
from .pipeline import (
    PipelineConfig,
    PipelineError,
    dump_json,
    report_render,
    resolve_widths,
    run_pipeline,
    write_artifacts,
)
from .simulation import HawkesParams, Scenario, make_benchmark_scenario, params_digest, simulate_scenario

EXIT_CHANGES = 2

_DOMAIN_ERRORS = (EventFormatError, FitError, PipelineError, ValueError, RuntimeError, OSError, KeyError)


class _Group(click.Group):
    """Group that maps every click failure to exit code 1, keeping 2 for detections."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.ClickException as exc:
            exc.show()
            rv = 1
        except click.Abort:
            click.echo("Aborted!", err=True)
            rv = 1
        if not standalone_mode:
            return rv
        sys.exit(rv if isinstance(rv, int) else 0)


def _fail(exc: Exception):
    raise click.ClickException(str(exc)) from exc


def _read_config(path: str | None) -> dict:
    """TOML file, or a JSON artifact whose ``config`` entry is reused verbatim."""
    if path is None:
        return {}
    p = Path(path)
    if p.suffix.lower() == ".json":
        data = json.loads(p.read_text(encoding="utf-8"))
        return dict(data.get("config", data))
    with p.open("rb") as fh:
        return tomli.load(fh)


def _resolve_config(config_path, **flags) -> PipelineConfig:
    """Merge the config file with command-line flags; flags win."""
    d = _read_config(config_path)
    window = dict(d.get("window", {}))
    if flags.get("window_length") is not None:
        window["length"] = flags["window_length"]
    if flags.get("window_stride") is not None:
        window["stride"] = flags["window_stride"]
    if "length" not in window:
        raise click.UsageError("window length is required (--window-length or [window] in --config)")
    window.setdefault("stride", window["length"])
    d["window"] = window
    nphc = dict(d.get("nphc", {}))
    cp = dict(d.get("cp", {}))
    for key, target, name in (
        ("kappa", nphc, "kappa"),
        ("symmetrize_c", nphc, "symmetrize_C"),
        ("alpha", cp, "alpha"),
        ("c", cp, "c"),
        ("calibration", cp, "calibration"),
        ("W", d, "W"),
        ("W_multiple", d, "W_multiple"),
        ("seed", d, "seed"),
        ("spd_floor", d, "spd_floor"),
        ("workers", d, "workers"),
    ):
        if flags.get(key) is not None:
            target[name] = flags[key]
    d["nphc"], d["cp"] = nphc, cp
    d.setdefault("seed", 0)
    try:
        return PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid configuration: {exc}") from exc


def pipeline_options(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="TOML config, or a JSON artifact to rerun."),
        click.option("--seed", type=int, help="Seed for calibration draws (default 0)."),
        click.option("--window-length", type=float, help="Window length in time units."),
        click.option("--window-stride", type=float, help="Window stride (defaults to the length)."),
        click.option("--W", "W", type=float, help="Fixed truncation half-width; auto when omitted."),
        click.option("--W-multiple", "W_multiple", type=float, help="Multiple of the correlation time used for auto W."),
        click.option("--kappa", type=click.FloatRange(0, 1), help="Weight of the covariance term in the NPHC loss."),
        click.option("--symmetrize-C", "symmetrize_c", is_flag=True, default=None, help="Symmetrise the covariance estimate before fitting."),
        click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), help="Test level."),
        click.option("--c", "c", type=click.FloatRange(0, 0.5, min_open=True, max_open=True), help="Trimming fraction of the scan."),
        click.option("--calibration", type=click.Choice(["bootstrap", "asymptotic"]), help="Threshold calibration."),
        click.option("--spd-floor", type=float, help="Relative eigenvalue floor for the SPD projection."),
        click.option("--workers", type=click.IntRange(1), help="Worker threads (default: logical cores)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group(cls=_Group)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Detect changes in the causal structure of multivariate event streams."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _scenario_from_json(path: str, seed: int) -> Scenario:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    segs = data["segments"] if isinstance(data, dict) else data
    return Scenario(
        tuple((s["duration"], HawkesParams(s["mu"], s["alpha"], s["beta"])) for s in segs),
        seed,
    )


@cli.command()
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False),
              help='JSON {"segments": [{"duration", "mu", "alpha", "beta"}, ...]}.')
@click.option("--dim", type=click.IntRange(1), default=10, show_default=True)
@click.option("--segments", type=click.IntRange(1), default=3, show_default=True)
@click.option("--segment-length", type=float, default=60000.0, show_default=True)
@click.option("--mu", type=float, default=0.3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), help="Defaults to the file suffix.")
def simulate(out, params_path, dim, segments, segment_length, mu, seed, fmt):
    """Simulate a regime-switching Hawkes process into OUT plus OUT.meta.json."""
    try:
        if params_path:
            scenario = _scenario_from_json(params_path, seed)
        else:
            scenario = make_benchmark_scenario(dim, segments, segment_length, seed, mu=mu)
        stream, change_times = simulate_scenario(scenario)
        save_events(stream, out, fmt)
        sidecar = {
            "change_times": change_times,
            "params_hash": params_digest([p for _, p in scenario.segments]),
            "seed": seed,
            "dim": stream.dim,
            "horizon": stream.horizon,
            "n_events": stream.n_events,
            "segments": [dict(duration=d, **p.to_dict()) for d, p in scenario.segments],
        }
        dump_json(sidecar, Path(str(out) + ".meta.json"))
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    click.echo(f"wrote {stream.n_events} events on [0, {stream.horizon:g}] to {out}")
    return 0


@cli.command("ingest-prices")
@click.argument("prices", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--threshold", type=float, required=True, help="Relative price move that triggers an event.")
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), help="Defaults to the file suffix.")
def ingest_prices(prices, out, threshold, fmt):
    """Turn a price CSV into threshold-crossing events."""
    try:
        series = load_prices(prices)
        stream = prices_to_events(series, threshold)
        save_events(stream, out, fmt)
        dump_json({"instruments": list(series.names), "threshold": threshold, "horizon": stream.horizon},
              Path(str(out) + ".meta.json"))
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    for i, name in enumerate(series.names):
        click.echo(f"{i}\t{name}\t{int(stream.counts[i])}")
    return 0


@cli.command()
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@pipeline_options
def estimate(events, out, config_path, **flags):
    """Write per-window integrated cumulants as JSON."""
    config = _resolve_config(config_path, **flags)
    try:
        stream = load_events(events)
        windows = slice_windows(stream, config.window)
        W, widths = resolve_widths(stream, config, len(windows))
        items = [
            dict(window_index=k, **estimate_cumulants(w, widths[k]).to_dict())
            for k, w in enumerate(windows)
        ]
        resolved = config.to_dict()
        resolved["W"] = W
        dump_json({"config": resolved, "seed": config.seed, "windows": items}, Path(out))
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    click.echo(f"{len(items)} windows, W={W:g}")
    return 0


def _summarise(report, starts=None) -> None:
    if not report.change_indices:
        click.echo("no change detected")
        return
    for c in report.change_indices:
        when = "" if starts is None else f"\tt={float(starts[c]):g}"
        click.echo(f"change at window {c}{when}")


@cli.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@pipeline_options
@click.option("--emit-intermediate", is_flag=True, help="Also write cumulants, kernels and snapshots.")
@click.option("--include-log", is_flag=True, help="Include matrix logarithms in snapshots.json.")
@click.pass_context
def detect(ctx, source, out_dir, config_path, emit_intermediate, include_log, **flags):
    """Detect changes from a snapshots JSON file or, for event files, the full pipeline."""
    if Path(source).suffix.lower() != ".json":
        return ctx.invoke(pipeline, events=source, out_dir=out_dir, config_path=config_path,
                          emit_intermediate=emit_intermediate, include_log=include_log, **flags)
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
        base = dict(data.get("config", {}))
        if config_path:
            base.update(_read_config(config_path))
        cp = dict(base.get("cp", {}))
        for key, name in (("alpha", "alpha"), ("c", "c"), ("calibration", "calibration")):
            if flags.get(key) is not None:
                cp[name] = flags[key]
        seed = flags["seed"] if flags.get("seed") is not None else base.get("seed", 0)
        floor = flags["spd_floor"] if flags.get("spd_floor") is not None else base.get("spd_floor", 1e-8)
        cp_config = CpConfig(**cp)
        windows = sorted(data["windows"], key=lambda w: w["window_index"])
        snaps = [snapshot_from_adjacency(np.array(w["A"]), w["window_index"], floor) for w in windows]
        report = detect_multiple(snaps, cp_config, seed)
        resolved = dict(base, cp=cp_config.to_dict(), seed=seed, spd_floor=floor)
        report_render(report, out_dir, config=resolved)
    except _DOMAIN_ERRORS + (TypeError,) as exc:
        _fail(exc)
    _summarise(report)
    if report.change_indices:
        ctx.exit(EXIT_CHANGES)
    return 0


@cli.command()
@click.argument("events", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@pipeline_options
@click.option("--emit-intermediate", is_flag=True, help="Also write cumulants, kernels and snapshots.")
@click.option("--include-log", is_flag=True, help="Include matrix logarithms in snapshots.json.")
@click.pass_context
def pipeline(ctx, events, out_dir, config_path, emit_intermediate, include_log, **flags):
    """Run windows -> cumulants -> kernels -> snapshots -> change points."""
    config = _resolve_config(config_path, **flags)
    try:
        stream = load_events(events)
        result = run_pipeline(stream, config)
        write_artifacts(result, out_dir, emit_intermediate=emit_intermediate, include_log=include_log)
    except _DOMAIN_ERRORS as exc:
        _fail(exc)
    click.echo(f"{len(result.snapshots)} windows, W={result.W:g}")
    _summarise(result.report, result.window_starts)
    if result.report.change_indices:
        ctx.exit(EXIT_CHANGES)
    return 0


def main():  # pragma: no cover
    cli()


if __name__ == "__main__":  # pragma: no cover
    main()
