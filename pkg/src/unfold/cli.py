"""Command-line interface: ``unfold simulate|unfold|coverage|zboson``."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .empirical_bayes import write_trace_csv
from .forward_model import write_matrix_csv
from .harness import (
    ConfigError,
    ExperimentConfig,
    StageError,
    coverage_vs_nbc,
    run_coverage_study,
    run_unfolding,
    run_zboson,
    simulate_data,
    write_coverage_csv,
)
from .inference import write_chain_csv
from .plotting import plot_coverage, plot_trace, plot_unfolding
from .simulate import read_counts_csv, write_counts_csv
from .uncertainty import METHODS, write_bands_csv

logger = logging.getLogger("unfold")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    stage_seconds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def add(self, path: Path) -> None:
        self.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, out: Path) -> Path:
        missing = [name for name in self.outputs if not (out / name).is_file()]
        if missing:
            raise click.ClickException(f"output files missing at completion: {', '.join(missing)}")
        self.finished = _now()
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _setup_logging():
    level = os.environ.get("UNFOLD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_config(path, seed, fast) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(path)
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        if fast is not None:
            overrides["estimator"] = "fast" if fast else "full"
        return replace(cfg, **overrides) if overrides else cfg
    except ConfigError as exc:
        raise click.ClickException(f"{path}: {exc}") from None
    except OSError as exc:
        raise click.ClickException(str(exc)) from None


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _guard(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (StageError, ConfigError, ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from None


def _write_estimates(path, result, extra=None):
    cols = {"s": result.grid, "f_hat": result.f_hat, "f_bc": result.f_bc}
    if result.truth is not None:
        cols["truth"] = result.truth
    if extra:
        cols.update(extra)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(cols))
        for row in zip(*cols.values()):
            writer.writerow([repr(float(v)) for v in row])


def _persist_unfolding(out: Path, result, manifest: RunManifest, smeared=None, extra=None, title=None):
    files = []
    files.append(out / "bands.csv")
    write_bands_csv(files[-1], list(result.bands.values()))
    files.append(out / "estimates.csv")
    _write_estimates(files[-1], result, extra)
    files.append(out / "response.csv")
    write_matrix_csv(files[-1], result.response.entries)
    if result.chain is not None:
        files.append(out / "chain.csv")
        write_chain_csv(files[-1], result.chain)
    if result.trace is not None:
        files.append(out / "trace.csv")
        write_trace_csv(files[-1], result.trace)
        files.append(out / "mcem_trace.svg")
        plot_trace(files[-1], result.trace.deltas)
    band = result.bands.get("bc_percentile") or next(iter(result.bands.values()), None)
    files.append(out / "unfolding.svg")
    plot_unfolding(files[-1], result.grid, result.f_hat, result.f_bc, band, extra.get("truth_scaled") if extra else result.truth, smeared, title=title)
    for f in files:
        manifest.add(f)
    manifest.stage_seconds.update({k: round(v, 3) for k, v in result.timings.items()})


def _methods(method):
    methods = tuple(method)
    for m in methods:
        if m not in METHODS:
            raise click.BadParameter(f"unknown method {m!r}; choose from {', '.join(METHODS)}", param_hint="--method")
    return methods


@click.group()
@click.version_option(__version__)
def main():
    """Unfold Poisson-smeared spectra with empirical Bayes and bias-corrected bootstrap bands."""
    _setup_logging()


_config_opt = click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Experiment JSON.")
_out_opt = click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
_seed_opt = click.option("--seed", type=int, default=None, help="Root seed (overrides the config).")
_workers_opt = click.option("--workers", type=int, default=1, show_default=True, help="Worker processes; results do not depend on it.")
_fast_opt = click.option("--fast/--full", default=None, help="Ridge fast path or full Poisson posterior (default: config).")
_method_opt = click.option("--method", multiple=True, help="Band method; repeatable.")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
def simulate(config_path, out, seed):
    """Simulate one smeared histogram from the configured truth."""
    cfg = _load_config(config_path, seed, None)
    out = _out_dir(out)
    manifest = RunManifest("simulate", cfg.config_hash(), cfg.seed, started=_now())
    t0 = time.perf_counter()
    from ._random import child_seed

    y = _guard(simulate_data, cfg, child_seed(cfg.seed, 0))
    path = out / "counts.csv"
    write_counts_csv(path, y)
    manifest.add(path)
    manifest.stage_seconds["simulate"] = round(time.perf_counter() - t0, 3)
    manifest.write(out)
    click.echo(f"wrote {path} ({y.n_bins} bins, {y.total} events)")


@main.command()
@_config_opt
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None, help="Histogram CSV (bin_lo,bin_hi,count); simulated when omitted.")
@_out_opt
@_seed_opt
@_workers_opt
@_method_opt
@_fast_opt
def unfold(config_path, data, out, seed, workers, method, fast):
    """Run the full unfolding pipeline and write bands, traces and plots."""
    cfg = _load_config(config_path, seed, fast)
    if method:
        cfg = replace(cfg, methods=_methods(method))
    y = _guard(read_counts_csv, data) if data else None
    out = _out_dir(out)
    manifest = RunManifest("unfold", cfg.config_hash(), cfg.seed, started=_now())
    result = _guard(run_unfolding, cfg, y, workers=workers)
    if data is None:
        write_counts_csv(out / "counts.csv", result.y)
        manifest.add(out / "counts.csv")
    _persist_unfolding(out, result, manifest, title=cfg.name)
    manifest.write(out)
    click.echo(f"delta_hat = {result.delta_hat:.4g}; outputs in {out}")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@_workers_opt
@_method_opt
@_fast_opt
@click.option("--n-replicates", type=int, default=None, help="Replicates (default: config).")
@click.option("--nbc", type=int, multiple=True, help="Also sweep these bias-correction counts; repeatable.")
def coverage(config_path, out, seed, workers, method, fast, n_replicates, nbc):
    """Empirical coverage study over simulated replicates."""
    cfg = _load_config(config_path, seed, True if fast is None else fast)
    n_rep = n_replicates or int(cfg.coverage.get("n_replicates", 100))
    methods = _methods(method) if method else None
    out = _out_dir(out)
    manifest = RunManifest("coverage", cfg.config_hash(), cfg.seed, started=_now())
    t0 = time.perf_counter()
    reports = _guard(run_coverage_study, cfg, n_rep, methods, workers)
    manifest.stage_seconds["coverage"] = round(time.perf_counter() - t0, 3)
    path = out / "coverage.csv"
    write_coverage_csv(path, list(reports.values()))
    manifest.add(path)
    plot_coverage(out / "coverage.svg", list(reports.values()), title=f"{cfg.name}: {n_rep} replicates")
    manifest.add(out / "coverage.svg")
    if nbc:
        t0 = time.perf_counter()
        sweep = _guard(coverage_vs_nbc, cfg, nbc, n_rep, workers)
        manifest.stage_seconds["coverage_vs_nbc"] = round(time.perf_counter() - t0, 3)
        write_coverage_csv(out / "coverage_nbc.csv", sweep)
        plot_coverage(out / "coverage_nbc.svg", sweep, title="bias-correction iterations")
        manifest.add(out / "coverage_nbc.csv")
        manifest.add(out / "coverage_nbc.svg")
    manifest.write(out)
    for rep in reports.values():
        click.echo(f"{rep.label}: average coverage {100 * rep.average_coverage:.1f}% over {rep.n_rep} replicates")


@main.command()
@_config_opt
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None, help="Full-window histogram CSV; synthetic data when omitted.")
@_out_opt
@_seed_opt
@_workers_opt
@_fast_opt
def zboson(config_path, data, out, seed, workers, fast):
    """Crystal Ball fit plus unfolding of the Z peak."""
    cfg = _load_config(config_path, seed, fast)
    y = _guard(read_counts_csv, data) if data else None
    out = _out_dir(out)
    manifest = RunManifest("zboson", cfg.config_hash(), cfg.seed, started=_now())
    res = _guard(run_zboson, cfg, y, workers=workers)
    u = res.unfolding
    edges = u.y.bin_edges
    centers = 0.5 * (edges[1:] + edges[:-1])
    if res.synthetic:
        write_counts_csv(out / "full_histogram_synthetic.csv", res.dataset.full)
        manifest.add(out / "full_histogram_synthetic.csv")
    write_counts_csv(out / "unfold_sample.csv", u.y)
    manifest.add(out / "unfold_sample.csv")
    with open(out / "smeared_estimate.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "density"])
        for c, d in zip(centers, res.smeared_estimate):
            writer.writerow([repr(float(c)), repr(float(d))])
    manifest.add(out / "smeared_estimate.csv")
    if res.fit is not None:
        fit = asdict(res.fit)
        fit["sigma2"] = res.fit.sigma2
        (out / "cb_fit.json").write_text(json.dumps(fit, indent=2, sort_keys=True) + "\n")
        manifest.add(out / "cb_fit.json")
    label = "synthetic Z data" if res.synthetic else "Z data"
    _persist_unfolding(out, u, manifest, smeared=(centers, res.smeared_estimate), extra={"truth_scaled": res.truth_scaled}, title=label)
    manifest.write(out)
    click.echo(f"delta_hat = {u.delta_hat:.4g}; unfolded mode = {res.mode:.3f} GeV; outputs in {out}")


if __name__ == "__main__":  # pragma: no cover
    main()
