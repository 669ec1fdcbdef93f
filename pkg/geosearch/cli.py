# geosearch/cli.py
"""Command-line surface: build, query, bench, generate, sweep-study, serve."""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import typer

from geosearch.artifacts import build_artifacts
from geosearch.base import (
    DEFAULT_GAP_BYTES,
    DEFAULT_K_RESULTS,
    DEFAULT_K_SWEEPS,
    DEFAULT_SEEK_COST,
    GRID_BITS,
    MAX_INTERVALS_PER_TILE,
    Algorithm,
    CurveKind,
    GeoScoreMode,
    GeoSearchError,
    Rect,
    load_settings,
)
from geosearch.bench import (
    SWEEP_COLUMNS,
    CostModel,
    render_table,
    run_trace,
    sweep_study,
    to_csv,
    trace_rows,
    write_report,
    REPORT_COLUMNS,
)
from geosearch.corpus import gen_synthetic, read_trace, tokenize
from geosearch.query_engine import GeoQueryEngine, Query
from geosearch.ranking import ScoredHit

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Geographic keyword search: build indexes, run queries, compare access paths.")


@app.callback()
def main(
    log_level: str = typer.Option("WARNING", "--log-level", envvar="GEOSEARCH_LOG_LEVEL",
                                  help="Logging level (DEBUG, INFO, WARNING, ERROR)"),
) -> None:
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(error: Exception) -> None:
    typer.echo(f"Error: {error}", err=True)
    raise typer.Exit(code=1)


def _parse_algos(value: str) -> List[Algorithm]:
    algos = []
    for name in (part.strip() for part in value.split(",")):
        if not name:
            continue
        try:
            algos.append(Algorithm(name))
        except ValueError:
            choices = ", ".join(a.value for a in Algorithm)
            raise typer.BadParameter(f"unknown algorithm '{name}' (choose from {choices})", param_hint="'--algos'")
    if not algos:
        raise typer.BadParameter("no algorithms given", param_hint="'--algos'")
    return algos


def _parse_rect(values: Tuple[float, float, float, float]) -> Rect:
    rect = Rect(*values)
    if not rect.is_valid:
        raise typer.BadParameter(
            f"{rect.format()} must lie in [0,1]² with xmin < xmax and ymin < ymax", param_hint="'--rect'")
    return rect


def _gap_bytes(gap_kib: Optional[float]) -> Optional[float]:
    return None if gap_kib is None else gap_kib * 1024


def format_hit(rank: int, hit: ScoredHit) -> str:
    return (f"{rank}\t{hit.doc_id}\t{hit.combined:.12f}\t{hit.text_score:.12f}"
            f"\t{hit.geo_score:.12f}\t{hit.global_score:.12f}")


@app.command("build")
def cmd_build(
    corpus: Path = typer.Option(..., "--corpus", exists=True, dir_okay=False, readable=True, help="Corpus TSV"),
    gazetteer: str = typer.Option(..., "--gazetteer", help="Gazetteer TSV path or http(s) URL"),
    out: Path = typer.Option(..., "--out", file_okay=False, help="Index directory"),
    grid_bits: int = typer.Option(GRID_BITS, "--grid-bits", min=1, max=15),
    m: int = typer.Option(2, "--m", min=1, max=MAX_INTERVALS_PER_TILE, help="Toeprint id intervals kept per tile"),
    gap_kib: float = typer.Option(DEFAULT_GAP_BYTES / 1024, "--gap-kib", min=0,
                                  help="Footprint read-through gap in KiB; 'inf' reads through everything"),
    curve: CurveKind = typer.Option(CurveKind.MORTON, "--curve"),
    global_scores: Optional[Path] = typer.Option(None, "--global-scores", exists=True, dir_okay=False),
) -> None:
    """Ingest, geocode and index a corpus."""
    if not gazetteer.startswith(("http://", "https://")) and not Path(gazetteer).is_file():
        raise typer.BadParameter(f"file '{gazetteer}' does not exist", param_hint="'--gazetteer'")
    settings = load_settings(grid_bits=grid_bits, intervals_per_tile=m, gap_bytes=gap_kib * 1024, curve=curve)
    try:
        manifest = build_artifacts(corpus, gazetteer, out, settings, global_scores)
    except GeoSearchError as e:
        _fail(e)
    typer.echo(f"built {out}: {manifest.stats.n} documents, {manifest.footprint_count} footprints, "
               f"{manifest.toeprint_count} toeprints, {len(manifest.files)} files")


@app.command("query")
def cmd_query(
    index: Path = typer.Option(..., "--index", exists=True, file_okay=False),
    algo: Algorithm = typer.Option(..., "--algo"),
    terms: str = typer.Option(..., "--terms"),
    rect: Tuple[float, float, float, float] = typer.Option(..., "--rect", help="xmin ymin xmax ymax"),
    k: int = typer.Option(DEFAULT_K_RESULTS, "--k", min=1),
    sweeps: int = typer.Option(DEFAULT_K_SWEEPS, "--sweeps", min=1),
    geo_mode: GeoScoreMode = typer.Option(GeoScoreMode.INNER_PRODUCT, "--geo-mode"),
    gap_kib: Optional[float] = typer.Option(None, "--gap-kib", min=0,
                                            help="Override the footprint gap the index was built with"),
    show_io: bool = typer.Option(False, "--show-io", help="Print the I/O meter to stderr"),
) -> None:
    """Run one query; prints rank, doc_id, combined, text, geo and global scores."""
    query_rect = _parse_rect(rect)
    if not tokenize(terms):
        raise typer.BadParameter("no terms in query", param_hint="'--terms'")
    try:
        with GeoQueryEngine.open(index, load_settings(geo_mode=geo_mode, k_sweeps=sweeps),
                                 _gap_bytes(gap_kib)) as engine:
            query = Query.from_rect(terms, query_rect, k_results=k, algo=algo, k_sweeps=sweeps)
            report = engine.execute(query)
    except GeoSearchError as e:
        _fail(e)
    for rank, hit in enumerate(report.hits, start=1):
        typer.echo(format_hit(rank, hit))
    if show_io:
        for key, value in report.meter.as_dict().items():
            typer.echo(f"{key}\t{value}", err=True)
        for stage, count in report.counters.items():
            typer.echo(f"stage.{stage}\t{count}", err=True)


@app.command("bench")
def cmd_bench(
    index: Path = typer.Option(..., "--index", exists=True, file_okay=False),
    trace: Path = typer.Option(..., "--trace", exists=True, dir_okay=False),
    algos: str = typer.Option("text-first,geo-first,k-sweep", "--algos"),
    seek_cost: float = typer.Option(DEFAULT_SEEK_COST, "--seek-cost", min=0),
    report: Path = typer.Option(..., "--report", help="CSV output; the table goes to <report>.txt"),
    k: int = typer.Option(DEFAULT_K_RESULTS, "--k", min=1),
    sweeps: int = typer.Option(DEFAULT_K_SWEEPS, "--sweeps", min=1),
    workers: int = typer.Option(1, "--workers", min=1),
    gap_kib: Optional[float] = typer.Option(None, "--gap-kib", min=0,
                                            help="Override the footprint gap the index was built with"),
) -> None:
    """Replay a trace under each algorithm, verify against the oracle and compare costs."""
    algorithms = _parse_algos(algos)
    try:
        queries = read_trace(trace)
        with GeoQueryEngine.open(index, load_settings(k_sweeps=sweeps), _gap_bytes(gap_kib)) as engine:
            result = run_trace(engine, queries, algorithms, CostModel(seek_cost=seek_cost),
                               k_results=k, k_sweeps=sweeps, workers=workers)
    except GeoSearchError as e:
        _fail(e)
    write_report(result, report)
    typer.echo(render_table(trace_rows(result), REPORT_COLUMNS), nl=False)


@app.command("generate")
def cmd_generate(
    out: Path = typer.Option(..., "--out", file_okay=False),
    docs: int = typer.Option(10_000, "--docs", min=1),
    vocab: int = typer.Option(1000, "--vocab", min=1),
    zipf: float = typer.Option(1.0, "--zipf", min=0.0),
    clusters: int = typer.Option(16, "--clusters", min=1),
    seed: int = typer.Option(0, "--seed"),
    queries: int = typer.Option(200, "--queries", min=0),
) -> None:
    """Write a seeded synthetic corpus, gazetteer, trace and global scores."""
    try:
        artifacts = gen_synthetic(out, n_docs=docs, vocab_size=vocab, zipf_s=zipf,
                                  n_clusters=clusters, seed=seed, n_queries=queries)
    except GeoSearchError as e:
        _fail(e)
    for path in (artifacts.corpus, artifacts.gazetteer, artifacts.trace, artifacts.global_scores):
        typer.echo(str(path))


@app.command("sweep-study")
def cmd_sweep_study(
    index: Path = typer.Option(..., "--index", exists=True, file_okay=False),
    trace: Path = typer.Option(..., "--trace", exists=True, dir_okay=False),
    k_values: str = typer.Option("1,2,4,8,16", "--k-values"),
    m_values: str = typer.Option("1,2,4", "--m-values"),
    seek_cost: float = typer.Option(DEFAULT_SEEK_COST, "--seek-cost", min=0),
    csv_out: Optional[Path] = typer.Option(None, "--csv"),
) -> None:
    """Toeprint bytes fetched across k_sweeps and m."""
    try:
        k_grid = [int(v) for v in k_values.split(",") if v.strip()]
        m_grid = [int(v) for v in m_values.split(",") if v.strip()]
    except ValueError as e:
        raise typer.BadParameter(str(e))
    try:
        queries = read_trace(trace)
        with GeoQueryEngine.open(index) as engine:
            rows = [row.row() for row in sweep_study(engine, queries, k_grid, m_grid, CostModel(seek_cost=seek_cost))]
    except GeoSearchError as e:
        _fail(e)
    if csv_out is not None:
        csv_out.write_text(to_csv(rows, SWEEP_COLUMNS), encoding="utf-8")
    typer.echo(render_table(rows, SWEEP_COLUMNS), nl=False)


@app.command("serve")
def cmd_serve() -> None:
    """Run the MCP server over stdio."""
    from geo_search_mcp import mcp

    mcp.run()


if __name__ == "__main__":
    app()
