"""Command line: calibrate, build, verify, bench, report."""
from __future__ import annotations

import csv
import gzip
import json
import logging
import sys
from pathlib import Path

import click

from . import harness


def _config(path, seed, preset):
    cfg = harness.load_config(path, seed=seed, preset=preset)
    cfg.validate()
    return cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Desk-scale tile decompositions and their verification suites."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(name)s: %(message)s")


@main.command()
@click.option("--ds", type=int, default=1, show_default=True)
@click.option("--d", "degree", type=int, default=1, show_default=True)
@click.option("--kappa", type=float, default=4.0, show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def calibrate(ds: int, degree: int, kappa: float, samples: int, seed: int) -> None:
    """Smallest D whose rigorous parent growth reaches KAPPA."""
    res = harness.calibrate(ds, degree, kappa, samples, seed=seed)
    click.echo(json.dumps({k: v for k, v in res.items() if k != "tried"}, indent=1))


@main.command()
@click.option("--config", "path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--preset", default=None)
@click.option("-o", "--out", type=click.Path(), required=True, help="Snapshot path (.json.gz).")
def build(path, seed, preset, out) -> None:
    """Build the lattice, stopping forest and decomposition; write a snapshot."""
    cfg = _config(path, seed, preset)
    pipe = harness.build_pipeline(harness.generate_instance(cfg))
    doc = {"schema": harness.SCHEMA_VERSION, "config": cfg.to_dict(), "seed": pipe.instance.seed,
           "lattice": pipe.lattice.to_dict(), "forest": pipe.forest.to_dict(),
           "decomposition": pipe.decomposition.to_dict(), "timings": pipe.timings}
    with gzip.open(out, "wt") as fh:
        json.dump(harness._jsonable(doc), fh)
    click.echo(f"{len(pipe.lattice)} tiles, {pipe.forest.n_generations} generations, "
               f"{len(pipe.decomposition.trees)} trees, {len(pipe.decomposition.antichains)} antichains -> {out}")


@main.command()
@click.option("--config", "path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--preset", default=None)
@click.option("--suite", type=click.Choice(["structure", "decay", "appendix", "all"]), default="all",
              show_default=True)
@click.option("-o", "--out", type=click.Path(), default=None, help="Write the JSON report here.")
@click.option("--timestamp/--no-timestamp", default=False, show_default=True)
def verify(path, seed, preset, suite, out, timestamp) -> None:
    """Run suites; exit code 1 iff a hard check fails."""
    cfg = _config(path, seed, preset)
    suites = harness.SUITES if suite == "all" else (suite,)
    rep, _ = harness.run_suites(cfg, suites=suites)
    text = rep.to_json(timestamp)
    if out:
        Path(out).write_text(text)
    for r in rep.records:
        click.echo(f"{r.status:9s} {'hard' if r.hard else 'soft'} {r.check_id}")
    hard = rep.hard_failures()
    click.echo(f"{len(rep.records)} checks, {len(hard)} hard failures")
    sys.exit(1 if hard else 0)


@main.command()
@click.option("--config", "path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--preset", default=None)
def bench(path, seed, preset) -> None:
    """Wall-clock timings of each pipeline stage."""
    cfg = _config(path, seed, preset)
    click.echo(json.dumps(harness.bench(cfg), indent=1))


@main.command()
@click.argument("report_json", type=click.Path(exists=True))
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--svg", "svg_path", type=click.Path(), default=None)
def report(report_json, csv_path, svg_path) -> None:
    """Convert a JSON report to CSV and/or an SVG summary plot."""
    rep = harness.Report.from_dict(json.loads(Path(report_json).read_text()))
    if csv_path:
        write_csv(rep, csv_path)
    if svg_path:
        write_svg(rep, svg_path)
    if not csv_path and not svg_path:
        for r in rep.records:
            click.echo(f"{r.status:9s} {r.check_id}")


def write_csv(rep: harness.Report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check_id", "claim", "status", "hard", "value", "fitted", "witness"])
        for r in rep.records:
            w.writerow([r.check_id, r.claim, r.status, r.hard,
                        json.dumps(r.value), json.dumps(r.fitted), json.dumps(r.witness)])


def write_svg(rep: harness.Report, path) -> None:
    """Log-log localization curves and the per-check status bar."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    plotted = False
    try:
        loc = rep.get("decay.localization").value
        for key in ("G", "F"):
            vals = [v for v in loc[key]]
            if all(isinstance(v, (int, float)) and v > 0 for v in vals):
                ax1.loglog(loc["nu"], vals, "o-", label=key)
                plotted = True
    except KeyError:
        pass
    ax1.set_xlabel("nu")
    ax1.set_ylabel("localized norm")
    if plotted:
        ax1.legend()
    status = [r.status for r in rep.records]
    names = ["pass", "soft-fail", "fail", "skip"]
    ax2.bar(names, [status.count(n) for n in names])
    ax2.set_ylabel("checks")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


if __name__ == "__main__":
    main()
