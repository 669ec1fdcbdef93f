# geosearch/ranking.py
"""Score computation: cosine text score, geographic score, global score, top-k."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from geosearch.base import (
    ContractViolation,
    EngineSettings,
    Footprint,
    GeoScoreMode,
    GlobalScoreParseError,
    PathLike,
    Region,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalScoreTable:
    """Precomputed, normalized per-document global scores (pr). Missing docs score 0."""
    scores: Dict[int, float] = field(default_factory=dict)

    def get(self, doc_id: int) -> float:
        return self.scores.get(doc_id, 0.0)

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def load(cls, path: Optional[PathLike]) -> GlobalScoreTable:
        """Parse `doc_id<TAB>pr` lines. An absent file gives the all-zeros table."""
        if path is None or not Path(path).exists():
            return cls()
        scores: Dict[int, float] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 2:
                    raise GlobalScoreParseError(path, lineno, "expected doc_id<TAB>pr")
                try:
                    doc_id, pr = int(fields[0]), float(fields[1])
                except ValueError as e:
                    raise GlobalScoreParseError(path, lineno, str(e)) from e
                if doc_id < 0 or not 0.0 <= pr <= 1.0:
                    raise GlobalScoreParseError(path, lineno, f"pr {pr} for doc {doc_id} is outside [0, 1]")
                scores[doc_id] = pr
        return cls(scores)

    def write(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for doc_id in sorted(self.scores):
                fh.write(f"{doc_id}\t{self.scores[doc_id]!r}\n")


class ScoreWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    w_text: float = Field(default=1.0, ge=0)
    w_geo: float = Field(default=1.0, ge=0)
    w_global: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _one_positive(self) -> ScoreWeights:
        if max(self.w_text, self.w_geo, self.w_global) <= 0:
            raise ValueError("at least one score weight must be positive")
        return self

    @classmethod
    def from_settings(cls, settings: EngineSettings) -> ScoreWeights:
        return cls(w_text=settings.w_text, w_geo=settings.w_geo, w_global=settings.w_global)


@dataclass(frozen=True)
class ScoredHit:
    doc_id: int
    text_score: float
    geo_score: float
    global_score: float
    combined: float


def text_score(term_stats: Iterable[Tuple[int, int]], n: int, doc_length: int) -> float:
    """Cosine measure: sum of ln(1 + n/f_t) * (1 + ln f_dt) / sqrt(|D|).

    term_stats holds one (f_dt, f_t) pair per query term.
    """
    if doc_length < 1:
        raise ContractViolation(f"document length must be >= 1, got {doc_length}")
    norm = math.sqrt(doc_length)
    total = 0.0
    for f_dt, f_t in term_stats:
        if f_dt < 1 or f_t < 1:
            raise ContractViolation(f"term frequencies must be >= 1, got f_dt={f_dt}, f_t={f_t}")
        total += math.log(1.0 + n / f_t) * (1.0 + math.log(f_dt)) / norm
    return total


def _regions(footprint: Union[Footprint, Sequence[Region]]) -> Sequence[Region]:
    return footprint.regions if isinstance(footprint, Footprint) else footprint


def geo_score(query: Footprint, document: Union[Footprint, Sequence[Region]],
              mode: GeoScoreMode = GeoScoreMode.INNER_PRODUCT) -> float:
    """Overlap of the document footprint with the query, normalized by query mass.

    The sum is exact (fsum), so a subset of the document's regions that
    holds every intersecting one scores identically to the whole footprint.
    Overlapping document regions can push the ratio past 1; it is capped there.
    """
    weighted = mode == GeoScoreMode.INNER_PRODUCT
    mass = math.fsum(r.rect.area * (r.certainty if weighted else 1.0) for r in query.regions)
    if mass <= 0.0:
        raise ContractViolation("query footprint has zero mass")
    overlap = math.fsum(
        q.rect.intersection_area(d.rect) * ((q.certainty * d.certainty) if weighted else 1.0)
        for q in query.regions
        for d in _regions(document)
    )
    return min(1.0, overlap / mass)


def combined_score(doc_id: int, text: float, geo: float, global_: float,
                   weights: ScoreWeights) -> ScoredHit:
    combined = weights.w_text * text + weights.w_geo * geo + weights.w_global * global_
    return ScoredHit(doc_id, text, geo, global_, combined)


def score_document(
    doc_id: int,
    freqs: Dict[str, int],
    doc_freqs: Dict[str, int],
    n: int,
    doc_length: int,
    query: Footprint,
    regions: Union[Footprint, Sequence[Region]],
    global_scores: GlobalScoreTable,
    weights: ScoreWeights,
    mode: GeoScoreMode = GeoScoreMode.INNER_PRODUCT,
) -> Optional[ScoredHit]:
    """Full score of a conjunctive match, or None when it misses the query footprint.

    Terms are scored in sorted order so every access path sums identically.
    """
    geo = geo_score(query, regions, mode)
    if geo <= 0.0:
        return None
    text = text_score(((freqs[t], doc_freqs[t]) for t in sorted(freqs)), n, doc_length)
    return combined_score(doc_id, text, geo, global_scores.get(doc_id), weights)


def _rank_key(hit: ScoredHit) -> Tuple[float, int]:
    return -hit.combined, hit.doc_id


def top_k(hits: Iterable[ScoredHit], k_results: int) -> List[ScoredHit]:
    """Highest combined scores first; ties by ascending doc_id."""
    if k_results < 1:
        raise ContractViolation(f"k_results must be >= 1, got {k_results}")
    return heapq.nsmallest(k_results, hits, key=_rank_key)
