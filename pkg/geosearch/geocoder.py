# geosearch/geocoder.py
"""
Geo coding: turn document text into footprints.

Three steps: extract place names with a longest-match scan over the token
stream, resolve them against the gazetteer into weighted rectangles, and
propagate footprints to bare pages of well-geocoded sites.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import httpx

from geosearch.base import (
    ContractViolation,
    DocumentRecord,
    EngineSettings,
    Footprint,
    GazetteerParseError,
    PathLike,
    Rect,
    Region,
    resolve_settings,
)
from geosearch.corpus import Collection, tokenize

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0

# Retry configuration for gazetteer downloads
MAX_RETRIES = 3
RETRY_BASE_DELAY = 1.0  # seconds, doubled per attempt


class PlaceKind(str, Enum):
    CITY = "city"
    DISTRICT = "district"
    LANDMARK = "landmark"


@dataclass(frozen=True)
class GazetteerEntry:
    name: Tuple[str, ...]
    rect: Rect
    kind: PlaceKind

    @property
    def label(self) -> str:
        return " ".join(self.name)


class Gazetteer:
    """Place names indexed by their token sequence. Duplicate names are kept."""

    def __init__(self, entries: Iterable[GazetteerEntry]):
        self.entries: Tuple[GazetteerEntry, ...] = tuple(entries)
        if not self.entries:
            raise ContractViolation("gazetteer is empty")
        by_name: Dict[Tuple[str, ...], List[GazetteerEntry]] = defaultdict(list)
        for entry in self.entries:
            by_name[entry.name].append(entry)
        self._by_name = {name: tuple(found) for name, found in by_name.items()}
        self.max_name_length = max(len(name) for name in self._by_name)

    def candidates(self, name: Sequence[str]) -> Tuple[GazetteerEntry, ...]:
        return self._by_name.get(tuple(name), ())

    def __contains__(self, name: Sequence[str]) -> bool:
        return tuple(name) in self._by_name

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PlaceMatch:
    """One maximal gazetteer-name occurrence in a document."""
    name: Tuple[str, ...]
    position: int
    candidates: Tuple[GazetteerEntry, ...]

    @property
    def length(self) -> int:
        return len(self.name)

    @property
    def is_ambiguous(self) -> bool:
        return len(self.candidates) > 1


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def parse_gazetteer(lines: Iterable[str], source: PathLike = "<memory>") -> Gazetteer:
    """Parse `name<TAB>xmin ymin xmax ymax<TAB>kind` lines. Blank lines are skipped."""
    entries = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise GazetteerParseError(source, lineno, "expected name<TAB>xmin ymin xmax ymax<TAB>kind")
        name = tuple(tokenize(fields[0]))
        if not name:
            raise GazetteerParseError(source, lineno, f"place name '{fields[0]}' has no terms")
        try:
            rect = Rect.parse(fields[1])
        except ValueError as e:
            raise GazetteerParseError(source, lineno, f"bad rectangle: {e}") from e
        if not rect.is_valid:
            raise GazetteerParseError(source, lineno, f"rectangle {rect.format()} is outside [0,1]² or empty")
        try:
            kind = PlaceKind(fields[2].strip().lower())
        except ValueError:
            raise GazetteerParseError(
                source, lineno, f"unknown kind '{fields[2]}', expected one of {[k.value for k in PlaceKind]}")
        entries.append(GazetteerEntry(name, rect, kind))
    if not entries:
        raise ContractViolation(f"gazetteer {source} has no entries")
    return Gazetteer(entries)


def is_url(source: Union[str, Path]) -> bool:
    return isinstance(source, str) and source.startswith(("http://", "https://"))


def _download_text(url: str, client: Optional[httpx.Client] = None) -> str:
    """GET a text resource, retrying connection failures with exponential backoff."""
    last_exception: Optional[Exception] = None
    for attempt in range(MAX_RETRIES):
        try:
            if client is not None:
                response = client.get(url, timeout=DEFAULT_TIMEOUT)
            else:
                with httpx.Client(follow_redirects=True) as session:
                    response = session.get(url, timeout=DEFAULT_TIMEOUT)
            response.raise_for_status()
            return response.text
        except (httpx.ConnectError, httpx.ConnectTimeout) as e:
            last_exception = e
            if attempt < MAX_RETRIES - 1:
                delay = RETRY_BASE_DELAY * (2 ** attempt)
                logger.warning("gazetteer download failed (%s), retrying in %.0fs", e, delay)
                time.sleep(delay)
                continue
            raise
        except httpx.HTTPStatusError:
            raise
    raise last_exception


def load_gazetteer(source: Union[str, Path], client: Optional[httpx.Client] = None) -> Gazetteer:
    """Load a gazetteer from a local file or an http(s) URL."""
    if is_url(source):
        text = _download_text(str(source), client)
        gazetteer = parse_gazetteer(text.splitlines(), source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            gazetteer = parse_gazetteer(fh, source)
    logger.info("loaded %d gazetteer entries from %s", len(gazetteer), source)
    return gazetteer


# ---------------------------------------------------------------------------
# Geo coding
# ---------------------------------------------------------------------------

def extract(doc: DocumentRecord, gazetteer: Gazetteer) -> List[PlaceMatch]:
    """Every maximal gazetteer-name match, scanning left to right."""
    tokens = tokenize(doc.text)
    matches = []
    i = 0
    while i < len(tokens):
        longest = min(gazetteer.max_name_length, len(tokens) - i)
        for width in range(longest, 0, -1):
            name = tuple(tokens[i:i + width])
            found = gazetteer.candidates(name)
            if found:
                matches.append(PlaceMatch(name, i, found))
                i += width
                break
        else:
            i += 1
    return matches


def resolve(
    matches: Sequence[PlaceMatch],
    doc_length: int,
    settings: Optional[EngineSettings] = None,
) -> Optional[Footprint]:
    """Turn matches into a footprint, or None when there are none.

    Ambiguous names pick the candidate nearest the centroid of the
    unambiguous matches; without such anchors every candidate is kept at
    certainty / k.
    """
    if not matches:
        return None
    settings = resolve_settings(settings)
    occurrences = Counter(m.name for m in matches)
    window = settings.leading_window * doc_length

    anchors = [m.candidates[0].rect.center for m in matches if not m.is_ambiguous]
    centroid = None
    if anchors:
        centroid = (sum(x for x, _ in anchors) / len(anchors), sum(y for _, y in anchors) / len(anchors))

    regions = []
    for match in matches:
        if match.position < window or occurrences[match.name] >= 2:
            certainty = settings.anchored_certainty
        else:
            certainty = settings.base_certainty
        if not match.is_ambiguous:
            regions.append(Region(match.candidates[0].rect, certainty))
        elif centroid is not None:
            nearest = min(match.candidates, key=lambda e: math.dist(e.rect.center, centroid))
            regions.append(Region(nearest.rect, certainty))
        else:
            share = certainty / len(match.candidates)
            regions.extend(Region(e.rect, share) for e in match.candidates)
    return Footprint.merged(regions)


def propagate(
    footprints: Mapping[int, Footprint],
    site_keys: Mapping[int, str],
    settings: Optional[EngineSettings] = None,
) -> Dict[int, Footprint]:
    """Give bare pages of well-geocoded sites the site's regions at reduced certainty."""
    settings = resolve_settings(settings)
    donors: Dict[str, List[int]] = defaultdict(list)
    for doc_id in sorted(footprints):
        site = site_keys.get(doc_id, "")
        if site:
            donors[site].append(doc_id)

    result = dict(footprints)
    inherited: Dict[str, Footprint] = {}
    for doc_id, site in sorted(site_keys.items()):
        if doc_id in footprints or not site or len(donors.get(site, ())) < settings.site_threshold:
            continue
        if site not in inherited:
            inherited[site] = Footprint.merged(
                Region(region.rect, region.certainty * settings.propagation_factor)
                for donor in donors[site]
                for region in footprints[donor].regions
            )
        result[doc_id] = inherited[site]
    return dict(sorted(result.items()))


def geocode_collection(
    collection: Collection,
    gazetteer: Gazetteer,
    settings: Optional[EngineSettings] = None,
) -> Dict[int, Footprint]:
    """Extract, resolve and propagate over a whole collection."""
    settings = resolve_settings(settings)
    direct = {}
    for record in collection:
        footprint = resolve(extract(record, gazetteer), record.length, settings)
        if footprint is not None:
            direct[record.doc_id] = footprint
    footprints = propagate(direct, collection.site_keys, settings)
    logger.info("geocoded %d of %d documents (%d directly, %d by site propagation)",
                len(footprints), len(collection), len(direct), len(footprints) - len(direct))
    return footprints
