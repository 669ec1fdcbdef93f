#!/usr/bin/env python3
"""
Geo Search MCP Server - Model Context Protocol server for geographic keyword search.

This server exposes the geographic query-processing core as tools:
- Index building (ingest, geocode, inverted index, footprints, toeprint grid)
- Ranked search with text-first, geo-first, k-sweep or brute-force execution
- Trace benchmarks comparing access-path I/O cost
- Seeded synthetic corpus generation
"""

import os
import json
import asyncio
import functools
import logging
from pathlib import Path
from typing import Optional, List, Dict, Any, Tuple, Annotated
from enum import Enum

import httpx
from pydantic import BaseModel, Field, ConfigDict, BeforeValidator, field_validator
from mcp.server.fastmcp import FastMCP

from geosearch.artifacts import build_artifacts
from geosearch.base import (
    DEFAULT_GAP_BYTES,
    DEFAULT_K_RESULTS,
    DEFAULT_K_SWEEPS,
    DEFAULT_SEEK_COST,
    GRID_BITS,
    MAX_INTERVALS_PER_TILE,
    Algorithm,
    BuildStageError,
    CurveKind,
    GeoScoreMode,
    GeoSearchError,
    ManifestError,
    OracleMismatchError,
    ParseError,
    Rect,
    load_settings,
)
from geosearch.bench import REPORT_COLUMNS, CostModel, render_table, run_trace, trace_rows, write_report
from geosearch.corpus import gen_synthetic, read_trace
from geosearch.query_engine import GeoQueryEngine, Query

logger = logging.getLogger(__name__)


# ============================================================================
# Reusable Validators (Annotated Types)
# ============================================================================

def _split_algorithms(v: Any) -> List[str]:
    """Accept 'a,b,c' or a list of names."""
    if isinstance(v, str):
        return [part.strip() for part in v.split(",") if part.strip()]
    return v


AlgorithmList = Annotated[List[Algorithm], BeforeValidator(_split_algorithms), Field(min_length=1)]


# ============================================================================
# Initialize MCP Server
# ============================================================================

SERVER_VERSION = "1.0.0"

mcp = FastMCP("geo_search_mcp")

# Open engines, keyed by (index directory, geo score mode)
_ENGINES: Dict[Tuple[str, str], GeoQueryEngine] = {}


# ============================================================================
# Enums and Types
# ============================================================================

class ResponseFormat(str, Enum):
    """Output format for tool responses."""
    MARKDOWN = "markdown"
    JSON = "json"


# ============================================================================
# Pydantic Input Models
# ============================================================================

class BuildIndexInput(BaseModel):
    """Input model for index builds."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    corpus: str = Field(..., description="Path of the corpus TSV (site_key<TAB>text per line)")
    gazetteer: str = Field(..., description="Path or http(s) URL of the gazetteer TSV")
    out: Optional[str] = Field(
        default=None,
        description="Index directory (defaults to GEOSEARCH_INDEX_DIR)"
    )
    grid_bits: int = Field(default=GRID_BITS, ge=1, le=15, description="Grid is 2^grid_bits tiles per side")
    m: int = Field(default=2, ge=1, le=MAX_INTERVALS_PER_TILE, description="Toeprint id intervals kept per tile")
    gap_kib: float = Field(default=DEFAULT_GAP_BYTES / 1024, ge=0, description="Footprint read-through gap in KiB")
    curve: CurveKind = Field(default=CurveKind.MORTON, description="Space-filling curve: 'morton' or 'hilbert'")
    global_scores: Optional[str] = Field(default=None, description="Optional doc_id<TAB>pr file")


class SearchInput(BaseModel):
    """Input model for ranked search."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    index: Optional[str] = Field(default=None, description="Index directory (defaults to GEOSEARCH_INDEX_DIR)")
    terms: str = Field(..., min_length=1, description="Query terms, all of which must occur (e.g., 'yoga classes')")
    rect: List[float] = Field(
        ...,
        min_length=4,
        max_length=4,
        description="Query rectangle [xmin, ymin, xmax, ymax] in the normalized [0,1] domain"
    )
    algo: Algorithm = Field(default=Algorithm.K_SWEEP, description="'text-first', 'geo-first', 'k-sweep' or 'oracle'")
    k: int = Field(default=DEFAULT_K_RESULTS, ge=1, le=1000, description="Number of results")
    sweeps: int = Field(default=DEFAULT_K_SWEEPS, ge=1, description="Maximum toeprint scans (k-sweep only)")
    geo_mode: GeoScoreMode = Field(default=GeoScoreMode.INNER_PRODUCT, description="Geographic score formula")
    response_format: ResponseFormat = Field(
        default=ResponseFormat.MARKDOWN,
        description="Output format: 'markdown' or 'json'"
    )

    @field_validator("rect")
    @classmethod
    def _rect_in_domain(cls, v: List[float]) -> List[float]:
        if not Rect(*v).is_valid:
            raise ValueError("rect must lie in [0,1] with xmin < xmax and ymin < ymax")
        return v


class BenchmarkInput(BaseModel):
    """Input model for trace benchmarks."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    index: Optional[str] = Field(default=None, description="Index directory (defaults to GEOSEARCH_INDEX_DIR)")
    trace: str = Field(..., description="Query trace TSV (terms<TAB>xmin ymin xmax ymax per line)")
    algos: AlgorithmList = Field(
        default=[Algorithm.TEXT_FIRST, Algorithm.GEO_FIRST, Algorithm.K_SWEEP],
        description="Algorithms to compare, as a list or comma-separated string"
    )
    seek_cost: float = Field(default=DEFAULT_SEEK_COST, ge=0, description="Equivalent bytes charged per seek")
    report: Optional[str] = Field(default=None, description="Optional CSV report path; table written to <report>.txt")
    sweeps: int = Field(default=DEFAULT_K_SWEEPS, ge=1)
    response_format: ResponseFormat = Field(default=ResponseFormat.MARKDOWN, description="Output format")


class GenerateCorpusInput(BaseModel):
    """Input model for synthetic corpus generation."""
    model_config = ConfigDict(str_strip_whitespace=True, validate_assignment=True)

    out: str = Field(..., description="Output directory")
    n_docs: int = Field(default=10_000, ge=1, le=1_000_000)
    vocab_size: int = Field(default=1000, ge=1)
    zipf_s: float = Field(default=1.0, gt=0, description="Zipf exponent of term frequencies")
    n_clusters: int = Field(default=16, ge=1, description="Spatial clusters the place names fall into")
    seed: int = Field(default=0)
    n_queries: int = Field(default=200, ge=0)


# ============================================================================
# Helper Functions
# ============================================================================

def _get_default_index_dir() -> Optional[str]:
    """Get the default index directory from the environment."""
    return os.environ.get("GEOSEARCH_INDEX_DIR")


def _resolve_index_dir(index: Optional[str]) -> str:
    directory = index or _get_default_index_dir()
    if not directory:
        raise ValueError("No index directory given. Pass 'index' or set GEOSEARCH_INDEX_DIR.")
    return directory


def _get_engine(index: str, geo_mode: GeoScoreMode = GeoScoreMode.INNER_PRODUCT) -> GeoQueryEngine:
    """Open an index once per process and reuse it."""
    key = (str(Path(index).resolve()), geo_mode.value)
    if key not in _ENGINES:
        _ENGINES[key] = GeoQueryEngine.open(index, load_settings(geo_mode=geo_mode))
    return _ENGINES[key]


def _forget_engines(index: str) -> None:
    """Drop cached engines of a directory that is about to be rebuilt."""
    resolved = str(Path(index).resolve())
    for key in [k for k in _ENGINES if k[0] == resolved]:
        _ENGINES.pop(key).close()


def _with_version(response: str) -> str:
    """Append server version footer to tool responses."""
    return f"{response}\n\n---\n_MCP Server v{SERVER_VERSION}_"


def _versioned_tool(*args, **kwargs):
    """Decorator that wraps mcp.tool() and appends server version to responses."""
    def decorator(func):
        @functools.wraps(func)
        async def wrapper(*fn_args, **fn_kwargs):
            result = await func(*fn_args, **fn_kwargs)
            if isinstance(result, str):
                return _with_version(result)
            return result

        return mcp.tool(*args, **kwargs)(wrapper)
    return decorator


def _handle_error(e: Exception) -> str:
    """Format errors for user-friendly messages."""
    if isinstance(e, httpx.HTTPStatusError):
        status = e.response.status_code
        if status == 404:
            return "Error: Gazetteer URL not found."
        elif status in (401, 403):
            return "Error: Access to the gazetteer URL was denied."
        return f"Error: Gazetteer download returned status {status}"
    elif isinstance(e, (httpx.ConnectError, httpx.ConnectTimeout)):
        return "Error: Could not download the gazetteer after multiple retries. Check the URL and your connection."
    elif isinstance(e, httpx.TimeoutException):
        return "Error: Gazetteer download timed out."
    elif isinstance(e, BuildStageError):
        return f"Error: Build failed in stage '{e.stage}': {e.cause}"
    elif isinstance(e, ManifestError):
        return f"Error: {e}. Build the index first with geo_build_index."
    elif isinstance(e, OracleMismatchError):
        return f"Error: Result mismatch against the brute-force oracle: {e}"
    elif isinstance(e, ParseError):
        return f"Error: Malformed input at {e.source} line {e.line}: {e}"
    elif isinstance(e, (GeoSearchError, ValueError)):
        return f"Error: {str(e)}"
    elif isinstance(e, FileNotFoundError):
        return f"Error: File not found: {e.filename}"
    return f"Error: {type(e).__name__}: {str(e)}"


def _format_meter(meter_dict: Dict[str, int]) -> List[str]:
    return [f"| {key} | {value:,} |" for key, value in meter_dict.items()]


# ============================================================================
# MCP Tools
# ============================================================================

@_versioned_tool(
    name="geo_build_index",
    annotations={
        "title": "Build Geographic Search Index",
        "readOnlyHint": False,
        "destructiveHint": True,
        "idempotentHint": True,
        "openWorldHint": True
    }
)
async def geo_build_index(params: BuildIndexInput) -> str:
    """
    Build a geographic search index from a corpus and a gazetteer.

    Runs ingest, geocoding, inverted index construction, footprint store,
    toeprint assignment, tile grid and MBR tree stages. The manifest is written
    last, so a failed build never leaves a usable-looking index behind.

    Args:
        params: BuildIndexInput containing:
            - corpus (str): Corpus TSV path
            - gazetteer (str): Gazetteer path or http(s) URL
            - out (str): Index directory (default: GEOSEARCH_INDEX_DIR)
            - grid_bits, m, gap_kib, curve: build parameters
            - global_scores (str): Optional global score file

    Returns:
        str: Build summary with document, footprint and toeprint counts.

    Examples:
        - "Index ./data/corpus.tsv" -> corpus="./data/corpus.tsv", gazetteer="./data/gazetteer.tsv", out="./idx"
    """
    try:
        out = _resolve_index_dir(params.out)
        _forget_engines(out)
        settings = load_settings(grid_bits=params.grid_bits, intervals_per_tile=params.m,
                                 gap_bytes=params.gap_kib * 1024, curve=params.curve)
        manifest = await asyncio.to_thread(
            build_artifacts, params.corpus, params.gazetteer, out, settings, params.global_scores)

        lines = [
            f"# Index built: `{out}`",
            "",
            f"- **Documents:** {manifest.stats.n:,}",
            f"- **Vocabulary:** {manifest.stats.vocab_size:,} terms, {manifest.stats.total_tokens:,} tokens",
            f"- **Footprints:** {manifest.footprint_count:,}",
            f"- **Toeprints:** {manifest.toeprint_count:,}",
            f"- **Grid:** {1 << manifest.grid_bits}×{1 << manifest.grid_bits} tiles, m={manifest.m}, curve={manifest.curve.value}",
            "",
            "## Files",
        ]
        lines.extend(f"- `{role}`: {name}" for role, name in sorted(manifest.files.items()))
        return "\n".join(lines)

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="geo_search",
    annotations={
        "title": "Geographic Keyword Search",
        "readOnlyHint": True,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False
    }
)
async def geo_search(params: SearchInput) -> str:
    """
    Search for documents containing all terms whose footprint intersects a rectangle.

    Args:
        params: SearchInput containing:
            - index (str): Index directory (default: GEOSEARCH_INDEX_DIR)
            - terms (str): Query terms
            - rect (list): [xmin, ymin, xmax, ymax] in [0,1]
            - algo: 'text-first', 'geo-first', 'k-sweep' or 'oracle'
            - k (int): Number of results
            - sweeps (int): Maximum toeprint scans for k-sweep
            - response_format: 'markdown' or 'json'

    Returns:
        str: Ranked hits with their text, geo and global scores plus the I/O meter.

    Examples:
        - "yoga near the center" -> terms="yoga", rect=[0.45, 0.45, 0.55, 0.55]
        - Compare access paths: run the same query with algo="text-first" and algo="k-sweep"
    """
    try:
        engine = await asyncio.to_thread(_get_engine, _resolve_index_dir(params.index), params.geo_mode)
        query = Query.from_rect(params.terms, Rect(*params.rect), k_results=params.k,
                                algo=params.algo, k_sweeps=params.sweeps)
        report = await asyncio.to_thread(engine.execute, query)

        if params.response_format == ResponseFormat.JSON:
            response = {
                'algo': report.algo.value,
                'terms': query.terms,
                'rect': params.rect,
                'hits': [
                    {
                        'rank': rank,
                        'doc_id': hit.doc_id,
                        'combined': hit.combined,
                        'text_score': hit.text_score,
                        'geo_score': hit.geo_score,
                        'global_score': hit.global_score,
                    }
                    for rank, hit in enumerate(report.hits, start=1)
                ],
                'io': report.meter.as_dict(),
                'stages': report.counters,
            }
            return json.dumps(response, indent=2)

        lines = [
            f"# Results for `{' '.join(query.terms)}` via {report.algo.value}",
            f"**Footprint:** {params.rect}",
            "",
        ]
        if not report.hits:
            lines.append("_No documents match._")
        else:
            lines.extend([
                "| Rank | Doc | Combined | Text | Geo | Global |",
                "|------|-----|----------|------|-----|--------|",
            ])
            for rank, hit in enumerate(report.hits, start=1):
                lines.append(f"| {rank} | {hit.doc_id} | {hit.combined:.6f} | {hit.text_score:.6f} "
                             f"| {hit.geo_score:.6f} | {hit.global_score:.6f} |")
        if report.meter.total_seeks or report.counters:
            lines.extend(["", "## I/O", "| Counter | Value |", "|---------|-------|"])
            lines.extend(_format_meter(report.meter.as_dict()))
            lines.extend(f"| stage: {stage} | {count:,} |" for stage, count in report.counters.items())
        return "\n".join(lines)

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="geo_run_benchmark",
    annotations={
        "title": "Benchmark Query Access Paths",
        "readOnlyHint": False,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False
    }
)
async def geo_run_benchmark(params: BenchmarkInput) -> str:
    """
    Replay a query trace under several algorithms and compare their I/O cost.

    Every query is checked against the brute-force oracle; any divergence is
    reported as an error naming the query.

    Args:
        params: BenchmarkInput containing:
            - index (str): Index directory
            - trace (str): Query trace TSV
            - algos (list): Algorithms to compare
            - seek_cost (float): Bytes charged per seek (default 512 KiB)
            - report (str): Optional CSV report path

    Returns:
        str: Comparison table (cost, bytes, seeks, candidates per algorithm).
    """
    try:
        engine = await asyncio.to_thread(_get_engine, _resolve_index_dir(params.index))
        queries = read_trace(params.trace)
        result = await asyncio.to_thread(
            run_trace, engine, queries, params.algos, CostModel(seek_cost=params.seek_cost),
            DEFAULT_K_RESULTS, params.sweeps)
        if params.report:
            write_report(result, params.report)
        rows = trace_rows(result)

        if params.response_format == ResponseFormat.JSON:
            return json.dumps({'queries': result.query_count, 'rows': rows}, indent=2)

        lines = [
            f"# Benchmark: {result.query_count} queries, all matched the oracle",
            "",
            "```",
            render_table(rows, REPORT_COLUMNS).rstrip(),
            "```",
        ]
        if Algorithm.K_SWEEP in result.summaries and Algorithm.TEXT_FIRST in result.summaries:
            ratio = result.ratio(Algorithm.K_SWEEP, Algorithm.TEXT_FIRST)
            lines.extend(["", f"**k-sweep / text-first cost ratio:** {ratio:.3f}"])
        if params.report:
            lines.extend(["", f"> Report saved to: `{params.report}`"])
        return "\n".join(lines)

    except Exception as e:
        return _handle_error(e)


@_versioned_tool(
    name="geo_generate_corpus",
    annotations={
        "title": "Generate Synthetic Corpus",
        "readOnlyHint": False,
        "destructiveHint": False,
        "idempotentHint": True,
        "openWorldHint": False
    }
)
async def geo_generate_corpus(params: GenerateCorpusInput) -> str:
    """
    Generate a seeded synthetic corpus, gazetteer, query trace and global scores.

    Args:
        params: GenerateCorpusInput containing:
            - out (str): Output directory
            - n_docs, vocab_size, zipf_s, n_clusters, seed, n_queries

    Returns:
        str: List of generated files.
    """
    try:
        artifacts = await asyncio.to_thread(
            gen_synthetic, params.out, params.n_docs, params.vocab_size, params.zipf_s,
            params.n_clusters, params.seed, params.n_queries)
        return "\n".join([
            f"# Synthetic data in `{params.out}`",
            "",
            f"- **Corpus:** `{artifacts.corpus}` ({params.n_docs:,} documents)",
            f"- **Gazetteer:** `{artifacts.gazetteer}` ({len(artifacts.places):,} places)",
            f"- **Trace:** `{artifacts.trace}` ({params.n_queries:,} queries)",
            f"- **Global scores:** `{artifacts.global_scores}`",
        ])

    except Exception as e:
        return _handle_error(e)


# ============================================================================
# Entry Point
# ============================================================================

if __name__ == "__main__":
    mcp.run()
