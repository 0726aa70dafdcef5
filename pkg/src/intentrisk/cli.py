"""Command line entry point: ``intentrisk run | stats | generate``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import evalharness as eh
from .ingest import SynthParams, dump_canonical, synth_corpus


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _grid_values(axis: str | None, raw: str | None) -> tuple:
    if axis is None:
        if raw:
            raise click.BadParameter("--grid needs --sweep")
        return ()
    if not raw:
        raise click.BadParameter("--sweep needs a non-empty --grid")
    vals = _split(raw)
    if axis in ("metric", "tiebreak"):
        return tuple(vals)
    conv = int if axis == "k" else float
    try:
        return tuple(conv(v) for v in vals)
    except ValueError:
        raise click.BadParameter(f"grid values for {axis} must be numbers: {raw}") from None


@click.group()
def main():
    """Tail-risk evaluation and re-ranking over query intents."""


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True), help="Dataset file (or MovieLens directory).")
@click.option("--loader", type=click.Choice(eh.LOADERS), default="canonical", show_default=True)
@click.option("--topics", type=click.Path(exists=True), default=None, help="TREC topics file (trec loader).")
@click.option("--methods", default="naive,vrisker", show_default=True, help="Comma-separated methods.")
@click.option("--k", "k", type=int, default=10, show_default=True)
@click.option("--beta", type=float, default=0.10, show_default=True)
@click.option("--metric", default="avgrel", show_default=True)
@click.option("--target", type=click.Choice(["oracle", "scaled_oracle"]), default="oracle", show_default=True)
@click.option("--target-alpha", type=float, default=1.0, show_default=True)
@click.option("--sweep", type=click.Choice(eh.SWEEP_AXES), default=None)
@click.option("--grid", default=None, help="Comma-separated grid values for --sweep.")
@click.option("--lambda", "lam", type=float, default=0.5, show_default=True)
@click.option("--tie-break", type=click.Choice(["iw", "random"]), default="iw", show_default=True)
@click.option("--noise-sigma2", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--exact", is_flag=True, help="Also run the exhaustive optimizer.")
@click.option("--exact-budget", type=int, default=eh.DEFAULT_BUDGET, show_default=True)
@click.option("--timing", is_flag=True, help="Record per-query runtimes (forces one worker).")
@click.option("--min-ratings", type=int, default=200, show_default=True, help="MovieLens user threshold.")
def run(data, loader, topics, methods, k, beta, metric, target, target_alpha, sweep, grid, lam, tie_break,
        noise_sigma2, seed, workers, out_dir, exact, exact_budget, timing, min_ratings):
    """Rank, evaluate and write report.csv plus summary.json."""
    from .ingest import MovieLensOptions

    meths = _split(methods)
    if exact and "exact" not in meths:
        meths.append("exact")
    try:
        plan = eh.ExperimentPlan(
            data=data,
            loader=loader,
            methods=tuple(meths),
            sweep=sweep,
            grid=_grid_values(sweep, grid),
            base=eh.Settings(k, beta, metric, target, target_alpha, lam, noise_sigma2, tie_break),
            seed=seed,
            workers=workers,
            timing=timing,
            exact_budget=exact_budget,
            topics=topics,
            movielens=MovieLensOptions(min_ratings),
        )
        report = eh.run_experiment(plan)
        eh.emit_report(report, out_dir)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e)) from None
    click.echo(eh.summary_table(report))
    if report.errors:
        click.echo(f"{len(report.errors)} method/query failures recorded in summary.json", err=True)
    if report.timings:
        for m, per in report.timings.items():
            click.echo(f"runtime {m}: " + ", ".join(f"{g}={ms:.3f} ms/query" for g, ms in per.items()))


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pairs", required=True, help="Comma-separated a:b method pairs.")
@click.option("--metrics", default="vrisk,v_std", show_default=True)
@click.option("--B", "B", type=int, default=100_000, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write results as JSON.")
def stats(report_path, pairs, metrics, B, alpha, seed, out_path):
    """Paired Wilcoxon and permutation tests with Holm correction."""
    try:
        pair_list = []
        for p in _split(pairs):
            a, sep, b = p.partition(":")
            if not sep or not a or not b:
                raise ValueError(f"pair {p!r} is not of the form a:b")
            pair_list.append((a, b))
        report = eh.ExperimentReport.from_csv(report_path)
        results = eh.significance_all(report, pair_list, _split(metrics), B, alpha, seed)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e)) from None
    click.echo(f"{'pair':>22} {'metric':>7} {'grid':>8} {'n':>4} {'mean d':>10} {'wilcoxon':>9} {'perm':>9} sig")
    for r in results:
        wp = "undef" if r.wilcoxon_p is None else f"{r.wilcoxon_p:.3g}"
        pp = "<1e-4" if r.permutation_p < 1e-4 else f"{r.permutation_p:.3g}"
        flag = ("W" if r.wilcoxon_significant else "-") + ("P" if r.permutation_significant else "-")
        click.echo(f"{r.method_a + ':' + r.method_b:>22} {r.metric:>7} {r.grid:>8} {r.n:>4} "
                   f"{r.mean_diff:>10.4g} {wp:>9} {pp:>9} {flag}")
    if out_path:
        from dataclasses import asdict

        Path(out_path).write_text(json.dumps([asdict(r) for r in results], indent=2) + "\n", encoding="utf-8")


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--queries", type=int, default=200, show_default=True)
@click.option("--docs", type=int, default=1000, show_default=True)
@click.option("--intents", type=int, default=6, show_default=True)
@click.option("--k", "k", type=int, default=10, show_default=True)
@click.option("--rel-max", type=int, default=4, show_default=True)
@click.option("--majority-prob", type=float, default=None)
@click.option("--density", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def generate(out_path, queries, docs, intents, k, rel_max, majority_prob, density, seed):
    """Write a synthetic corpus in the canonical JSON-lines format."""
    try:
        params = SynthParams(rel_max=rel_max, majority_prob=majority_prob, density=density)
        dump_canonical(synth_corpus(queries, docs, intents, k, params, seed), out_path)
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e)) from None
    click.echo(f"wrote {queries} queries to {out_path}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
