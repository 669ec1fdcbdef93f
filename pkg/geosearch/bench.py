# geosearch/bench.py
"""
Trace replay under a deterministic I/O cost model.

Every query of a trace runs under each requested algorithm and is checked
against the brute-force oracle; costs are bytes read plus seeks times the
seek cost. Results are reported as an aligned text table and as CSV.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from geosearch.base import (
    DEFAULT_SEEK_COST,
    Algorithm,
    ContractViolation,
    IoCategory,
    IoMeter,
    OracleMismatchError,
    PathLike,
)
from geosearch.corpus import TraceQuery
from geosearch.query_engine import GeoQueryEngine, Query, QueryReport
from geosearch.ranking import ScoredHit
from geosearch.spatial_index import TOEPRINT_RECORD, build_grid, covered_length

logger = logging.getLogger(__name__)

SCORE_TOLERANCE = 1e-9

REPORT_COLUMNS = [
    "algorithm", "queries", "total_cost", "mean_cost", "median_cost",
    "postings_bytes", "footprints_bytes", "toeprints_bytes",
    "postings_seeks", "footprints_seeks", "toeprints_seeks", "seeks", "candidates",
]


class CostModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    seek_cost: float = Field(default=DEFAULT_SEEK_COST, ge=0, description="Equivalent bytes per seek")
    byte_cost: float = Field(default=1.0, ge=0)

    def cost(self, meter: IoMeter) -> float:
        return meter.total_bytes * self.byte_cost + meter.total_seeks * self.seek_cost


@dataclass
class AlgorithmSummary:
    algorithm: Algorithm
    costs: List[float] = field(default_factory=list)
    meter: IoMeter = field(default_factory=IoMeter)
    candidates: int = 0   # first-stage candidates summed over queries

    @property
    def queries(self) -> int:
        return len(self.costs)

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.costs)) if self.costs else 0.0

    @property
    def median_cost(self) -> float:
        return float(np.median(self.costs)) if self.costs else 0.0

    def row(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "algorithm": self.algorithm.value,
            "queries": self.queries,
            "total_cost": self.total_cost,
            "mean_cost": self.mean_cost,
            "median_cost": self.median_cost,
        }
        for category in IoCategory:
            row[f"{category.value}_bytes"] = self.meter.bytes_read[category]
        for category in IoCategory:
            row[f"{category.value}_seeks"] = self.meter.seeks[category]
        row["seeks"] = self.meter.total_seeks
        row["candidates"] = self.candidates
        return row


@dataclass
class TraceResult:
    """Per-algorithm totals of a trace in which every query matched the oracle."""

    summaries: Dict[Algorithm, AlgorithmSummary]
    query_count: int

    def ratio(self, numerator: Algorithm, denominator: Algorithm) -> float:
        below = self.summaries[denominator].total_cost
        return self.summaries[numerator].total_cost / below if below else float("inf")


def hits_match(expected: Sequence[ScoredHit], actual: Sequence[ScoredHit],
               tolerance: float = SCORE_TOLERANCE) -> bool:
    if len(expected) != len(actual):
        return False
    for a, b in zip(expected, actual):
        if a.doc_id != b.doc_id:
            return False
        for x, y in ((a.combined, b.combined), (a.text_score, b.text_score),
                     (a.geo_score, b.geo_score), (a.global_score, b.global_score)):
            if abs(x - y) > tolerance:
                return False
    return True


def _to_query(item: TraceQuery, algo: Algorithm, k_results: int, k_sweeps: int) -> Query:
    return Query.from_rect(list(item.terms), item.rect, k_results=k_results, algo=algo, k_sweeps=k_sweeps)


def _run_one(engine: GeoQueryEngine, item: TraceQuery, algorithms: Sequence[Algorithm],
             k_results: int, k_sweeps: int) -> List[QueryReport]:
    expected = engine.brute_force(_to_query(item, Algorithm.ORACLE, k_results, k_sweeps))
    reports = []
    for algo in algorithms:
        report = engine.execute(_to_query(item, algo, k_results, k_sweeps))
        if not hits_match(expected, report.hits):
            raise OracleMismatchError(
                f"query on line {item.line} ({' '.join(item.terms)} / {item.rect.format()}): "
                f"{algo.value} returned {[h.doc_id for h in report.hits]}, "
                f"oracle returned {[h.doc_id for h in expected]}")
        reports.append(report)
    return reports


def run_trace(
    engine: GeoQueryEngine,
    trace: Sequence[TraceQuery],
    algorithms: Sequence[Algorithm],
    cost_model: Optional[CostModel] = None,
    k_results: int = 10,
    k_sweeps: Optional[int] = None,
    workers: int = 1,
) -> TraceResult:
    """Replay a trace; raises OracleMismatchError on the first divergent query."""
    if not algorithms:
        raise ContractViolation("no algorithms to run")
    cost_model = cost_model or CostModel()
    k_sweeps = k_sweeps if k_sweeps is not None else engine.settings.k_sweeps
    _ = engine.oracle  # build before any worker thread needs it

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_one, engine, item, algorithms, k_results, k_sweeps) for item in trace]
            per_query = [f.result() for f in futures]
    else:
        per_query = [_run_one(engine, item, algorithms, k_results, k_sweeps) for item in trace]

    summaries = {algo: AlgorithmSummary(algo) for algo in algorithms}
    for reports in per_query:
        for report in reports:
            summary = summaries[report.algo]
            summary.costs.append(cost_model.cost(report.meter))
            summary.meter.merge(report.meter)
            if report.counters:
                summary.candidates += next(iter(report.counters.values()))
    for summary in summaries.values():
        logger.info("%s: total cost %.0f over %d queries", summary.algorithm.value,
                    summary.total_cost, summary.queries)
    return TraceResult(summaries, len(trace))


def _format_cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def render_table(rows: Sequence[Dict[str, object]], columns: Sequence[str]) -> str:
    """Columns padded to their widest cell; text left-aligned, numbers right-aligned."""
    cells = [[_format_cell(row[c]) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(columns)]
    numeric = [all(isinstance(row[c], (int, float)) for row in rows) if rows else False for c in columns]

    def line(values: Sequence[str]) -> str:
        return "  ".join(v.rjust(w) if num else v.ljust(w)
                         for v, w, num in zip(values, widths, numeric)).rstrip()

    out = [line(columns), line(["-" * w for w in widths])]
    out.extend(line(r) for r in cells)
    return "\n".join(out) + "\n"


def to_csv(rows: Sequence[Dict[str, object]], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row[c] for c in columns})
    return buffer.getvalue()


def trace_rows(result: TraceResult) -> List[Dict[str, object]]:
    return [summary.row() for summary in result.summaries.values()]


def write_report(result: TraceResult, path: PathLike) -> Tuple[Path, Path]:
    """Write <path> as CSV and <path>.txt as the aligned table."""
    csv_path = Path(path)
    table_path = csv_path.with_name(csv_path.name + ".txt")
    rows = trace_rows(result)
    csv_path.write_text(to_csv(rows, REPORT_COLUMNS), encoding="utf-8")
    table_path.write_text(render_table(rows, REPORT_COLUMNS), encoding="utf-8")
    return csv_path, table_path


# ---------------------------------------------------------------------------
# Sweep study
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["m", "k_sweeps", "fetched_bytes", "exact_bytes", "total_bytes", "fetched_ratio", "seeks", "cost"]


@dataclass(frozen=True)
class SweepStudyRow:
    m: int
    k_sweeps: int
    fetched_bytes: int     # summed over the trace
    exact_bytes: int       # bytes of the exact interval union, summed over the trace
    total_bytes: int       # toeprint file size times trace length
    seeks: int
    cost: float

    @property
    def fetched_ratio(self) -> float:
        return self.fetched_bytes / self.total_bytes if self.total_bytes else 0.0

    def row(self) -> Dict[str, object]:
        return {"m": self.m, "k_sweeps": self.k_sweeps, "fetched_bytes": self.fetched_bytes,
                "exact_bytes": self.exact_bytes, "total_bytes": self.total_bytes,
                "fetched_ratio": round(self.fetched_ratio, 6), "seeks": self.seeks, "cost": self.cost}


def sweep_study(
    engine: GeoQueryEngine,
    trace: Sequence[TraceQuery],
    k_grid: Sequence[int],
    m_grid: Sequence[int],
    cost_model: Optional[CostModel] = None,
) -> List[SweepStudyRow]:
    """Toeprint bytes fetched for each (m, k_sweeps) pair with k_sweeps >= m."""
    if not k_grid or not m_grid or min(list(k_grid) + list(m_grid)) < 1:
        raise ContractViolation("k_sweeps and m grids need values >= 1")
    cost_model = cost_model or CostModel()
    toeprints = engine.toeprints.read_all()
    total = engine.toeprints.data_size * len(trace)
    rows = []
    for m in sorted(set(m_grid)):
        grid = build_grid(toeprints, m, engine.grid.grid_bits)
        for k in sorted(set(k_grid)):
            if k < m:
                continue
            fetched = exact = seeks = 0
            for item in trace:
                query = Query.from_rect(list(item.terms), item.rect)
                sweeps, union = engine.plan_sweeps(query.footprint, k, grid)
                fetched += covered_length(sweeps) * TOEPRINT_RECORD.size
                exact += covered_length(union) * TOEPRINT_RECORD.size
                seeks += len(sweeps)
            cost = fetched * cost_model.byte_cost + seeks * cost_model.seek_cost
            rows.append(SweepStudyRow(m, k, fetched, exact, total, seeks, cost))
            logger.debug("sweep study m=%d k=%d: %d of %d bytes", m, k, fetched, total)
    return rows
