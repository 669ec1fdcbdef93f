# geosearch/query_engine.py
"""
Query execution: three access paths and a brute-force oracle.

    text-first   conjunctive DAAT over the index, then fetch footprints of
                 every match with the gap-aware policy
    geo-first    MBR tree candidates, filtered by the index, then fetch
                 footprints of the survivors
    k-sweep      grid intervals of the covered tiles, fetched as at most
                 k contiguous toeprint scans, then filtered by the index

All of them return the same ranked hits; they differ only in I/O.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Dict, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from geosearch.artifacts import IndexManifest
from geosearch.base import (
    DEFAULT_K_RESULTS,
    DEFAULT_K_SWEEPS,
    Algorithm,
    ContractViolation,
    EngineSettings,
    Footprint,
    IoMeter,
    PathLike,
    Rect,
    Region,
    resolve_settings,
)
from geosearch.corpus import Collection, ingest, tokenize
from geosearch.footprint_store import FootprintStore
from geosearch.geocoder import geocode_collection, is_url, load_gazetteer
from geosearch.inverted_index import InvertedIndex
from geosearch.ranking import GlobalScoreTable, ScoredHit, ScoreWeights, score_document, top_k
from geosearch.spatial_index import (
    GridIntervals,
    MbrTree,
    ToeprintStore,
    build_mbr_tree,
    compute_sweeps,
    normalize_intervals,
    tile_cover,
)

logger = logging.getLogger(__name__)


# ============================================================================
# Queries
# ============================================================================

def _normalize_terms(v) -> List[str]:
    """Accept a string or a list of strings; tokenize, dedupe, sort."""
    pieces = [v] if isinstance(v, str) else list(v)
    return sorted({term for piece in pieces for term in tokenize(str(piece))})


QueryTerms = Annotated[List[str], BeforeValidator(_normalize_terms), Field(min_length=1)]


class QueryRegion(BaseModel):
    """One rectangle of the query footprint."""
    model_config = ConfigDict(frozen=True)

    xmin: float = Field(..., ge=0, le=1)
    ymin: float = Field(..., ge=0, le=1)
    xmax: float = Field(..., ge=0, le=1)
    ymax: float = Field(..., ge=0, le=1)
    certainty: float = Field(default=1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _positive_area(self) -> QueryRegion:
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("query rectangle needs xmin < xmax and ymin < ymax")
        return self

    @property
    def rect(self) -> Rect:
        return Rect(self.xmin, self.ymin, self.xmax, self.ymax)


class Query(BaseModel):
    """A conjunctive keyword query with a query footprint."""
    model_config = ConfigDict(validate_assignment=True)

    terms: QueryTerms = Field(..., description="Query terms; matched documents contain all of them")
    regions: List[QueryRegion] = Field(..., min_length=1, description="Query footprint rectangles")
    k_results: int = Field(default=DEFAULT_K_RESULTS, ge=1)
    algo: Algorithm = Field(default=Algorithm.K_SWEEP)
    k_sweeps: int = Field(default=DEFAULT_K_SWEEPS, ge=1)

    @classmethod
    def from_rect(cls, terms, rect: Rect, **kwargs) -> Query:
        return cls(terms=terms, regions=[QueryRegion(xmin=rect.xmin, ymin=rect.ymin,
                                                     xmax=rect.xmax, ymax=rect.ymax)], **kwargs)

    @property
    def footprint(self) -> Footprint:
        return Footprint.merged(Region(r.rect, r.certainty) for r in self.regions)

    @property
    def bounding_rect(self) -> Rect:
        return Rect.bounding(r.rect for r in self.regions)


@dataclass
class QueryReport:
    algo: Algorithm
    hits: List[ScoredHit]
    meter: IoMeter = field(default_factory=IoMeter)
    counters: Dict[str, int] = field(default_factory=dict)   # candidates after each stage, in order
    sweeps: Tuple[Tuple[int, int], ...] = ()


# ============================================================================
# Oracle
# ============================================================================

class BruteForceOracle:
    """Scans every document of the raw collection. Ground truth for the access paths."""

    def __init__(self, collection: Collection, footprints: Mapping[int, Footprint],
                 global_scores: Optional[GlobalScoreTable] = None,
                 settings: Optional[EngineSettings] = None):
        self.settings = resolve_settings(settings)
        self.weights = ScoreWeights.from_settings(self.settings)
        self.footprints = dict(footprints)
        self.global_scores = global_scores or GlobalScoreTable()
        self.n = len(collection)
        self._counts = [Counter(tokenize(record.text)) for record in collection]
        self._lengths = [record.length for record in collection]
        self._doc_freq: Counter = Counter()
        for counts in self._counts:
            self._doc_freq.update(counts.keys())

    def search(self, query: Query) -> List[ScoredHit]:
        terms = query.terms
        doc_freqs = {t: self._doc_freq[t] for t in terms}
        fq = query.footprint
        hits = []
        for doc_id, counts in enumerate(self._counts):
            if doc_id not in self.footprints or not all(t in counts for t in terms):
                continue
            hit = score_document(doc_id, {t: counts[t] for t in terms}, doc_freqs, self.n,
                                 self._lengths[doc_id], fq, self.footprints[doc_id],
                                 self.global_scores, self.weights, self.settings.geo_mode)
            if hit is not None:
                hits.append(hit)
        return top_k(hits, query.k_results)


def brute_force(query: Query, oracle: BruteForceOracle) -> List[ScoredHit]:
    return oracle.search(query)


# ============================================================================
# Engine
# ============================================================================

class GeoQueryEngine:
    """Opened index plus the in-memory MBR tree and grid. Immutable after open."""

    def __init__(self, manifest: IndexManifest, index: InvertedIndex, footprints: FootprintStore,
                 toeprints: ToeprintStore, grid: GridIntervals, mbr_tree: MbrTree,
                 global_scores: GlobalScoreTable, settings: EngineSettings):
        self.manifest = manifest
        self.index = index
        self.footprints = footprints
        self.toeprints = toeprints
        self.grid = grid
        self.mbr_tree = mbr_tree
        self.global_scores = global_scores
        self.settings = settings
        self.weights = ScoreWeights.from_settings(settings)
        self._oracle: Optional[BruteForceOracle] = None

    @classmethod
    def open(cls, directory: PathLike, settings: Optional[EngineSettings] = None,
             gap_bytes: Optional[float] = None) -> GeoQueryEngine:
        """Open an index directory.

        Layout settings (grid, m, curve) always come from the manifest. The
        footprint gap threshold is the one the index was built with unless
        gap_bytes overrides it.
        """
        manifest = IndexManifest.read(directory)
        if gap_bytes is not None and gap_bytes < 0:
            raise ContractViolation(f"gap threshold must be >= 0, got {gap_bytes}")
        settings = resolve_settings(settings).model_copy(update={
            "grid_bits": manifest.grid_bits,
            "intervals_per_tile": manifest.m,
            "curve": manifest.curve,
            "gap_bytes": manifest.gap_bytes if gap_bytes is None else gap_bytes,
        })
        index = InvertedIndex(Path(directory)).open()
        footprints = FootprintStore(Path(directory)).open()
        toeprints = ToeprintStore(manifest.path("toeprints")).open()
        grid = GridIntervals.read(manifest.path("grid"))
        tree = build_mbr_tree({record.doc_id: record.footprint for record in footprints.read_all()})
        global_scores = GlobalScoreTable.load(manifest.path("global_scores")) if manifest.has("global_scores") \
            else GlobalScoreTable()
        logger.info("opened index %s: %d docs, %d footprints, %d toeprints",
                    directory, index.stats.n, len(footprints), len(toeprints))
        return cls(manifest, index, footprints, toeprints, grid, tree, global_scores, settings)

    def close(self) -> None:
        self.index.close()
        self.footprints.close()
        self.toeprints.close()

    def __enter__(self) -> GeoQueryEngine:
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    # -- shared pieces --------------------------------------------------------

    def _score(self, doc_id: int, freqs: Dict[str, int], query: Footprint,
               regions) -> Optional[ScoredHit]:
        doc_freqs = {t: self.index.doc_freq(t) for t in freqs}
        return score_document(doc_id, freqs, doc_freqs, self.index.stats.n, self.index.doc_length(doc_id),
                              query, regions, self.global_scores, self.weights, self.settings.geo_mode)

    def _score_fetched(self, matches: Sequence[Tuple[int, Dict[str, int]]], query: Footprint,
                       meter: IoMeter) -> List[ScoredHit]:
        """Fetch footprints of the matches with the gap policy and score them."""
        plan = self.footprints.plan_fetch([doc_id for doc_id, _ in matches], self.settings.gap_bytes)
        records = self.footprints.fetch(plan, meter)
        hits = []
        for (doc_id, freqs), record in zip(matches, records):
            hit = self._score(doc_id, freqs, query, record.footprint)
            if hit is not None:
                hits.append(hit)
        return hits

    def plan_sweeps(self, footprint: Footprint, k_sweeps: int,
                    grid: Optional[GridIntervals] = None) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
        """(sweeps, exact union of tile intervals) for a query footprint."""
        grid = grid or self.grid
        intervals = []
        for region in footprint.regions:
            intervals.extend(grid.intervals_for(tile_cover(region.rect, grid.grid_bits)))
        union = normalize_intervals(intervals)
        return compute_sweeps(union, k_sweeps), union

    # -- access paths ---------------------------------------------------------

    def text_first(self, query: Query) -> QueryReport:
        meter = IoMeter()
        counters: Dict[str, int] = {}
        fq = query.footprint
        matches = list(self.index.daat_stream(query.terms, meter))
        counters["daat"] = len(matches)
        matches = [(doc_id, freqs) for doc_id, freqs in matches if doc_id in self.footprints]
        counters["with_footprint"] = len(matches)
        hits = self._score_fetched(matches, fq, meter)
        counters["geo_filter"] = len(hits)
        return QueryReport(Algorithm.TEXT_FIRST, top_k(hits, query.k_results), meter, counters)

    def geo_first(self, query: Query) -> QueryReport:
        meter = IoMeter()
        counters: Dict[str, int] = {}
        fq = query.footprint
        candidates = self.mbr_tree.query(query.bounding_rect)
        counters["mbr"] = len(candidates)
        matches = self.index.filter_postings(candidates, query.terms, meter)
        counters["index_filter"] = len(matches)
        hits = self._score_fetched(matches, fq, meter)
        counters["geo_filter"] = len(hits)
        return QueryReport(Algorithm.GEO_FIRST, top_k(hits, query.k_results), meter, counters)

    def k_sweep(self, query: Query) -> QueryReport:
        if query.k_sweeps < self.grid.m:
            raise ContractViolation(f"k_sweeps ({query.k_sweeps}) must be >= m ({self.grid.m})")
        meter = IoMeter()
        counters: Dict[str, int] = {}
        fq = query.footprint
        sweeps, _ = self.plan_sweeps(fq, query.k_sweeps)

        by_doc: Dict[int, List[Region]] = {}
        fetched = 0
        for lo, hi in sweeps:
            for toeprint in self.toeprints.read_range(lo, hi, meter):
                fetched += 1
                if any(toeprint.rect.intersection_area(q.rect) > 0.0 for q in fq.regions):
                    by_doc.setdefault(toeprint.doc_id, []).append(Region(toeprint.rect, toeprint.certainty))
        counters["toeprints"] = fetched
        counters["intersecting_docs"] = len(by_doc)

        matches = self.index.filter_postings(sorted(by_doc), query.terms, meter)
        counters["index_filter"] = len(matches)
        hits = []
        for doc_id, freqs in matches:
            hit = self._score(doc_id, freqs, fq, by_doc[doc_id])
            if hit is not None:
                hits.append(hit)
        counters["geo_filter"] = len(hits)
        return QueryReport(Algorithm.K_SWEEP, top_k(hits, query.k_results), meter, counters, tuple(sweeps))

    # -- oracle ---------------------------------------------------------------

    @property
    def oracle(self) -> BruteForceOracle:
        """Oracle over the raw inputs recorded in the manifest, built on first use.

        The corpus is ingested and geocoded again with the build's geocoder
        settings; nothing is taken from the index files.
        """
        if self._oracle is None:
            source = self.manifest.source_corpus
            if not source or not Path(source).is_file():
                raise ContractViolation(f"source corpus '{source}' of this index is not available")
            gazetteer_source = self.manifest.source_gazetteer
            if not gazetteer_source or not (is_url(gazetteer_source) or Path(gazetteer_source).is_file()):
                raise ContractViolation(f"source gazetteer '{gazetteer_source}' of this index is not available")
            collection = ingest(source)
            geo_settings = EngineSettings.model_validate({**self.settings.model_dump(), **self.manifest.geocoder})
            footprints = geocode_collection(collection, load_gazetteer(gazetteer_source), geo_settings)
            self._oracle = BruteForceOracle(collection, footprints, self.global_scores, self.settings)
        return self._oracle

    def attach_oracle(self, oracle: BruteForceOracle) -> None:
        self._oracle = oracle

    def brute_force(self, query: Query) -> List[ScoredHit]:
        return self.oracle.search(query)

    def execute(self, query: Query) -> QueryReport:
        logger.debug("query %s via %s", query.terms, query.algo.value)
        if query.algo == Algorithm.TEXT_FIRST:
            return self.text_first(query)
        if query.algo == Algorithm.GEO_FIRST:
            return self.geo_first(query)
        if query.algo == Algorithm.K_SWEEP:
            return self.k_sweep(query)
        return QueryReport(Algorithm.ORACLE, self.brute_force(query))
