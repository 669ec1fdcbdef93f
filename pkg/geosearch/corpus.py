# geosearch/corpus.py
"""
Corpus ingestion, tokenization, query traces and the seeded synthetic generator.

File formats (UTF-8, one record per line):
    corpus      site_key<TAB>text            (or doc_id<TAB>site_key<TAB>text)
    gazetteer   name<TAB>xmin ymin xmax ymax<TAB>kind
    trace       term term ...<TAB>xmin ymin xmax ymax
    scores      doc_id<TAB>pr
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from geosearch.base import (
    CollectionStats,
    ContractViolation,
    CorpusParseError,
    DocumentRecord,
    PathLike,
    Rect,
    TraceParseError,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

# \w minus underscore: maximal runs of alphanumeric characters
_TOKEN_RE = re.compile(r"[^\W_]+")

# Full lowercasing expands these; simple lowercasing maps them one to one.
_SIMPLE_LOWER = {"İ": "i"}


def _simple_lower(run: str) -> str:
    lowered = run.lower()
    if len(lowered) == len(run):
        return lowered
    chars = []
    for ch in run:
        low = _SIMPLE_LOWER.get(ch) or ch.lower()
        chars.append(low if len(low) == 1 else ch)
    return "".join(chars)


def tokenize(text: str) -> List[str]:
    """Split text into lowercased alphanumeric runs, in order."""
    return [_simple_lower(run) for run in _TOKEN_RE.findall(text)]


# ---------------------------------------------------------------------------
# Collections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Collection:
    """Immutable, doc_id-ordered set of documents plus their statistics."""
    records: Tuple[DocumentRecord, ...]
    stats: CollectionStats

    @classmethod
    def from_documents(cls, documents: Iterable[Tuple[str, str]]) -> Collection:
        """Build from (site_key, text) pairs; doc_ids follow iteration order."""
        records = []
        vocabulary = set()
        total = 0
        for doc_id, (site_key, text) in enumerate(documents):
            tokens = tokenize(text)
            vocabulary.update(tokens)
            total += len(tokens)
            records.append(DocumentRecord(doc_id, text, site_key, len(tokens)))
        stats = CollectionStats(n=len(records), vocab_size=len(vocabulary), total_tokens=total)
        return cls(tuple(records), stats)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[DocumentRecord]:
        return iter(self.records)

    def __getitem__(self, doc_id: int) -> DocumentRecord:
        return self.records[doc_id]

    @property
    def site_keys(self) -> Dict[int, str]:
        return {r.doc_id: r.site_key for r in self.records}


def _split_line(raw: bytes, path: Path, lineno: int) -> List[str]:
    line = raw.rstrip(b"\n")
    if line.endswith(b"\r"):
        line = line[:-1]
    try:
        decoded = line.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusParseError(path, lineno, f"invalid UTF-8 at byte {e.start}") from e
    return decoded.split("\t")


def _has_explicit_id(fields: List[str]) -> bool:
    return len(fields) >= 3 and fields[0].isascii() and fields[0].isdigit()


def ingest(path: PathLike) -> Collection:
    """Read a corpus file.

    The first line fixes the format of the whole file. If its first field is
    all ASCII digits and it has three or more fields, every line must be
    `doc_id<TAB>site_key<TAB>text` with unique ids dense from 0. Otherwise
    every line is `site_key<TAB>text`, ids follow file order, and any later
    tabs belong to the text even when the site key is all digits.
    """
    path = Path(path)
    entries: Dict[int, Tuple[str, str]] = {}
    explicit_line: Dict[int, int] = {}
    explicit: Optional[bool] = None
    with path.open("rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            fields = _split_line(raw, path, lineno)
            if len(fields) < 2:
                raise CorpusParseError(path, lineno, "expected site_key<TAB>text")
            if explicit is None:
                explicit = _has_explicit_id(fields)
            if not explicit:
                entries[lineno - 1] = (fields[0], "\t".join(fields[1:]))
                continue
            if not _has_explicit_id(fields):
                raise CorpusParseError(
                    path, lineno, "expected doc_id<TAB>site_key<TAB>text like the first line")
            doc_id = int(fields[0])
            if doc_id in explicit_line:
                raise CorpusParseError(
                    path, lineno, f"duplicate doc_id {doc_id} (first on line {explicit_line[doc_id]})")
            explicit_line[doc_id] = lineno
            entries[doc_id] = (fields[1], "\t".join(fields[2:]))

    n = len(entries)
    if entries and max(entries) != n - 1:
        missing = next(i for i in range(n) if i not in entries)
        raise CorpusParseError(path, n, f"doc_ids are not dense: {missing} is missing")
    collection = Collection.from_documents(entries[i] for i in range(n))
    logger.info("ingested %d documents, %d terms, %d tokens from %s",
                collection.stats.n, collection.stats.vocab_size, collection.stats.total_tokens, path)
    return collection


def write_corpus(documents: Iterable[Tuple[str, str]], path: PathLike) -> None:
    """Write (site_key, text) pairs in the corpus format.

    Falls back to the explicit-id form when the first line would otherwise
    read as explicit.
    """
    documents = list(documents)
    for site_key, text in documents:
        if "\n" in text or "\t" in site_key or "\n" in site_key:
            raise ContractViolation("site keys may not hold tabs or newlines, texts may not hold newlines")
    explicit = bool(documents) and _has_explicit_id([documents[0][0], *documents[0][1].split("\t")])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, (site_key, text) in enumerate(documents):
            if explicit:
                fh.write(f"{doc_id}\t")
            fh.write(f"{site_key}\t{text}\n")


# ---------------------------------------------------------------------------
# Query traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceQuery:
    terms: Tuple[str, ...]
    rect: Rect
    line: int = 0

    def format(self) -> str:
        return f"{' '.join(self.terms)}\t{self.rect.format()}"


def read_trace(path: PathLike) -> List[TraceQuery]:
    """Parse a query trace; blank lines are skipped, anything else malformed raises."""
    path = Path(path)
    queries = []
    with path.open("rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as e:
                raise TraceParseError(path, lineno, f"invalid UTF-8 at byte {e.start}") from e
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise TraceParseError(path, lineno, "expected terms<TAB>xmin ymin xmax ymax")
            terms = tuple(tokenize(fields[0]))
            if not terms:
                raise TraceParseError(path, lineno, "query has no terms")
            try:
                rect = Rect.parse(fields[1])
            except ValueError as e:
                raise TraceParseError(path, lineno, f"bad rectangle: {e}") from e
            if not rect.is_valid:
                raise TraceParseError(path, lineno, f"rectangle {rect.format()} is outside [0,1]² or empty")
            queries.append(TraceQuery(terms, rect, lineno))
    return queries


def write_trace(queries: Iterable[TraceQuery], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for query in queries:
            fh.write(query.format() + "\n")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

CLUSTER_RADIUS = 0.03               # half-width of a cluster's square
PLACES_PER_CLUSTER = 8
CITY_PLACES = 4                     # the first places of a cluster are cities
MIN_PLACE_HALF = 0.0005
MAX_PLACE_HALF = 0.006
DOC_LENGTH_RANGE = (20, 60)
SITE_SIZE_RANGE = (3, 10)
MAX_PLACES_PER_DOC = 3
MIN_QUERY_AREA = 1e-4               # 0.01% of the domain

SYNTHETIC_FILES = {
    "corpus": "corpus.tsv",
    "gazetteer": "gazetteer.tsv",
    "trace": "trace.tsv",
    "global_scores": "global_scores.tsv",
}


@dataclass(frozen=True)
class SyntheticPlace:
    name: str
    rect: Rect
    kind: str
    cluster: int


@dataclass(frozen=True)
class SyntheticArtifacts:
    corpus: Path
    gazetteer: Path
    trace: Path
    global_scores: Path
    vocabulary: Tuple[str, ...]            # rank order, most frequent first
    cluster_centers: Tuple[Tuple[float, float], ...]
    places: Tuple[SyntheticPlace, ...]


def _rounded_rect(cx: float, cy: float, half: float) -> Rect:
    return Rect(round(cx - half, 6), round(cy - half, 6), round(cx + half, 6), round(cy + half, 6))


def _place_in_cluster(rng: np.random.Generator, center: Tuple[float, float], half: float) -> Rect:
    cx, cy = center
    px = rng.uniform(cx - CLUSTER_RADIUS + half, cx + CLUSTER_RADIUS - half)
    py = rng.uniform(cy - CLUSTER_RADIUS + half, cy + CLUSTER_RADIUS - half)
    return _rounded_rect(px, py, half)


def _gen_places(rng: np.random.Generator, centers: np.ndarray) -> List[List[SyntheticPlace]]:
    """Per cluster: named cities and landmarks, one district, one shared ambiguous name."""
    per_cluster = []
    for c, (cx, cy) in enumerate(centers.tolist()):
        places = []
        for j in range(PLACES_PER_CLUSTER):
            half = rng.uniform(MIN_PLACE_HALF, MAX_PLACE_HALF)
            kind = "city" if j < CITY_PLACES else "landmark"
            places.append(SyntheticPlace(f"zone{c}p{j}", _place_in_cluster(rng, (cx, cy), half), kind, c))
        places.append(SyntheticPlace(f"old zone{c}p0", _rounded_rect(cx, cy, CLUSTER_RADIUS / 2), "district", c))
        # pairs of clusters share a name, so the geocoder has to disambiguate
        half = rng.uniform(MIN_PLACE_HALF, MAX_PLACE_HALF)
        places.append(SyntheticPlace(f"twin{c // 2}", _place_in_cluster(rng, (cx, cy), half), "city", c))
        per_cluster.append(places)
    return per_cluster


def _gen_document(rng: np.random.Generator, probabilities: np.ndarray,
                  vocabulary: Sequence[str], places: Sequence[SyntheticPlace]) -> str:
    length = int(rng.integers(DOC_LENGTH_RANGE[0], DOC_LENGTH_RANGE[1] + 1))
    tokens = [vocabulary[i] for i in rng.choice(len(vocabulary), size=length, p=probabilities)]
    for _ in range(int(rng.integers(0, MAX_PLACES_PER_DOC + 1))):
        place = places[int(rng.integers(len(places)))]
        at = int(rng.integers(0, len(tokens) + 1))
        tokens[at:at] = place.name.split()
    return " ".join(tokens)


def zipf_probabilities(vocab_size: int, zipf_s: float) -> np.ndarray:
    weights = np.arange(1, vocab_size + 1, dtype=np.float64) ** -zipf_s
    return weights / weights.sum()


def gen_query_trace(
    rng: np.random.Generator,
    vocabulary: Sequence[str],
    n_queries: int,
    centers: Optional[Sequence[Tuple[float, float]]] = None,
    min_area: float = MIN_QUERY_AREA,
    max_area: float = 1.0,
    term_pool: Optional[Sequence[str]] = None,
    placement: str = "mixed",
) -> List[TraceQuery]:
    """Queries pairing 1-3 frequent terms with one square rectangle.

    Areas are log-uniform in [min_area, max_area]. placement is "uniform"
    (anywhere), "cluster" (around a cluster center) or "mixed" (either,
    with equal odds). The default term pool is the top decile of the
    vocabulary, which is assumed to be in frequency-rank order.
    """
    if not 0 < min_area <= max_area <= 1:
        raise ContractViolation(f"need 0 < min_area <= max_area <= 1, got {min_area}, {max_area}")
    if placement not in ("uniform", "cluster", "mixed"):
        raise ContractViolation(f"unknown placement '{placement}'")
    if placement != "uniform" and not centers:
        raise ContractViolation("cluster placement needs cluster centers")
    pool = list(term_pool) if term_pool is not None else list(vocabulary[:max(1, len(vocabulary) // 10)])
    if not pool:
        raise ContractViolation("empty term pool")

    queries = []
    log_lo, log_hi = math.log10(min_area), math.log10(max_area)
    for i in range(n_queries):
        n_terms = min(int(rng.integers(1, 4)), len(pool))
        picks = rng.choice(len(pool), size=n_terms, replace=False)
        terms = tuple(sorted(pool[int(p)] for p in picks))
        side = math.sqrt(10 ** rng.uniform(log_lo, log_hi))
        near_cluster = placement == "cluster" or (placement == "mixed" and rng.random() < 0.5)
        if near_cluster:
            cx, cy = centers[int(rng.integers(len(centers)))]
            cx += rng.normal(0.0, CLUSTER_RADIUS)
            cy += rng.normal(0.0, CLUSTER_RADIUS)
        else:
            cx, cy = rng.uniform(0.0, 1.0, size=2).tolist()
        xmin = round(min(max(cx - side / 2, 0.0), 1.0 - side), 9)
        ymin = round(min(max(cy - side / 2, 0.0), 1.0 - side), 9)
        rect = Rect(xmin, ymin, min(round(xmin + side, 9), 1.0), min(round(ymin + side, 9), 1.0))
        queries.append(TraceQuery(terms, rect, i + 1))
    return queries


def gen_synthetic(
    out_dir: PathLike,
    n_docs: int = 10_000,
    vocab_size: int = 1000,
    zipf_s: float = 1.0,
    n_clusters: int = 16,
    seed: int = 0,
    n_queries: int = 200,
) -> SyntheticArtifacts:
    """Write a deterministic corpus, gazetteer, query trace and global score file.

    Terms are named w1..wV by frequency rank and drawn with p(rank) ∝ rank^-s.
    Documents come in sites of 3-10 pages tied to one spatial cluster; each
    page embeds 0-3 of that cluster's place names, so geocoding yields
    clustered footprints and site propagation has something to inherit.
    """
    if min(n_docs, vocab_size, n_clusters) < 1 or n_queries < 0:
        raise ContractViolation("n_docs, vocab_size and n_clusters must be >= 1")
    if zipf_s <= 0:
        raise ContractViolation(f"zipf_s must be positive, got {zipf_s}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    vocabulary = tuple(f"w{rank}" for rank in range(1, vocab_size + 1))
    probabilities = zipf_probabilities(vocab_size, zipf_s)
    centers = rng.uniform(CLUSTER_RADIUS, 1.0 - CLUSTER_RADIUS, size=(n_clusters, 2))
    places = _gen_places(rng, centers)

    documents: List[Tuple[str, str]] = []
    site = 0
    while len(documents) < n_docs:
        cluster = int(rng.integers(n_clusters))
        size = int(rng.integers(SITE_SIZE_RANGE[0], SITE_SIZE_RANGE[1] + 1))
        for _ in range(min(size, n_docs - len(documents))):
            documents.append((f"site{site}.example",
                              _gen_document(rng, probabilities, vocabulary, places[cluster])))
        site += 1

    files = {role: out / name for role, name in SYNTHETIC_FILES.items()}
    write_corpus(documents, files["corpus"])

    flat_places = tuple(p for cluster_places in places for p in cluster_places)
    with open(files["gazetteer"], "w", encoding="utf-8", newline="\n") as fh:
        for place in flat_places:
            r = place.rect
            fh.write(f"{place.name}\t{r.xmin:.6f} {r.ymin:.6f} {r.xmax:.6f} {r.ymax:.6f}\t{place.kind}\n")

    center_tuples = tuple((float(x), float(y)) for x, y in centers.tolist())
    write_trace(gen_query_trace(rng, vocabulary, n_queries, center_tuples), files["trace"])

    scores = rng.random(n_docs) ** 3
    with open(files["global_scores"], "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, pr in enumerate(scores.tolist()):
            fh.write(f"{doc_id}\t{pr:.6f}\n")

    logger.info("generated %d documents in %d sites over %d clusters (seed %d) in %s",
                n_docs, site, n_clusters, seed, out)
    return SyntheticArtifacts(
        corpus=files["corpus"],
        gazetteer=files["gazetteer"],
        trace=files["trace"],
        global_scores=files["global_scores"],
        vocabulary=vocabulary,
        cluster_centers=center_tuples,
        places=flat_places,
    )
