# geosearch/base.py
"""
Shared constants, data structures and settings for the geographic query core.

Provides: rectangles and footprints in the unit domain, document records,
the I/O meter every access path charges, the varint codec used by the
postings and grid files, checked file I/O helpers, error types and the
engine settings model.
"""

from __future__ import annotations

import math
import mmap
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1

GRID_BITS = 10                    # 1024 x 1024 tiles
DEFAULT_INTERVALS_PER_TILE = 2    # m
MAX_INTERVALS_PER_TILE = 0xFFFF   # stored as u16 in the grid header
DEFAULT_K_SWEEPS = 4
DEFAULT_K_RESULTS = 10
DEFAULT_GAP_BYTES = 64 * 1024     # forward-seek threshold G
DEFAULT_SEEK_COST = 524_288       # one seek "costs" 512 KiB of sequential read
POSTINGS_BLOCK_SIZE = 128

ENV_PREFIX = "GEOSEARCH_"

PathLike = Union[str, "os.PathLike[str]"]


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class Algorithm(str, Enum):
    """Query execution strategy."""
    TEXT_FIRST = "text-first"
    GEO_FIRST = "geo-first"
    K_SWEEP = "k-sweep"
    ORACLE = "oracle"


class GeoScoreMode(str, Enum):
    """How footprint overlap is turned into a geographic score."""
    INNER_PRODUCT = "inner_product"
    INTERSECTION_VOLUME = "intersection_volume"


class CurveKind(str, Enum):
    """Space-filling curve used to number toeprints."""
    MORTON = "morton"
    HILBERT = "hilbert"


class IoCategory(str, Enum):
    """Disk areas charged by the I/O meter."""
    POSTINGS = "postings"
    FOOTPRINTS = "footprints"
    TOEPRINTS = "toeprints"


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class GeoSearchError(Exception):
    """Root of every error raised by the package."""


class ContractViolation(GeoSearchError, ValueError):
    """An operation was called with arguments outside its contract."""


class ParseError(GeoSearchError, ValueError):
    """A text input file holds a malformed line."""

    def __init__(self, source: PathLike, line: int, message: str):
        self.source = str(source)
        self.line = line
        super().__init__(f"{self.source}:{line}: {message}")


class CorpusParseError(ParseError):
    pass


class TraceParseError(ParseError):
    pass


class GazetteerParseError(ParseError):
    pass


class GlobalScoreParseError(ParseError):
    pass


class IndexNotOpenError(GeoSearchError, RuntimeError):
    """A reader was used before open() or after close()."""


class IndexIOError(GeoSearchError, OSError):
    """Writing or reading an artifact failed at a known file position."""

    def __init__(self, path: PathLike, offset: int, cause: BaseException):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} at offset {offset}: {cause}")


class CorruptionError(GeoSearchError, ValueError):
    """An artifact is truncated or does not decode."""


class FootprintLookupError(GeoSearchError, KeyError):
    """A doc_id has no record in the footprint store."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown doc_id"


class ManifestError(GeoSearchError, ValueError):
    """The index manifest is missing, inconsistent or of another format version."""


class BuildStageError(GeoSearchError):
    """A cmd_build stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"build stage '{stage}' failed: {cause}")


class OracleMismatchError(GeoSearchError):
    """An access path returned a ranking different from the brute-force oracle."""


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Rect:
    """Axis-aligned rectangle in the normalized [0,1]² domain."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def area(self) -> float:
        return max(0.0, self.xmax - self.xmin) * max(0.0, self.ymax - self.ymin)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0

    @property
    def is_valid(self) -> bool:
        """Positive area and inside the unit domain."""
        return (0.0 <= self.xmin < self.xmax <= 1.0
                and 0.0 <= self.ymin < self.ymax <= 1.0)

    def intersects(self, other: Rect) -> bool:
        """Closed intersection: touching edges count."""
        return (self.xmin <= other.xmax and other.xmin <= self.xmax
                and self.ymin <= other.ymax and other.ymin <= self.ymax)

    def intersection_area(self, other: Rect) -> float:
        width = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        if width <= 0.0:
            return 0.0
        height = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        if height <= 0.0:
            return 0.0
        return width * height

    def contains(self, other: Rect) -> bool:
        return (self.xmin <= other.xmin and self.ymin <= other.ymin
                and other.xmax <= self.xmax and other.ymax <= self.ymax)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.xmin, self.ymin, self.xmax, self.ymax

    @classmethod
    def bounding(cls, rects: Iterable[Rect]) -> Rect:
        rects = list(rects)
        if not rects:
            raise ContractViolation("bounding box of an empty rectangle set")
        return cls(
            min(r.xmin for r in rects), min(r.ymin for r in rects),
            max(r.xmax for r in rects), max(r.ymax for r in rects),
        )

    @classmethod
    def parse(cls, text: str) -> Rect:
        """Parse 'xmin ymin xmax ymax'. Raises ValueError on anything else."""
        parts = text.split()
        if len(parts) != 4:
            raise ValueError(f"expected 4 coordinates, got {len(parts)}")
        xmin, ymin, xmax, ymax = (float(p) for p in parts)
        if not all(math.isfinite(v) for v in (xmin, ymin, xmax, ymax)):
            raise ValueError("coordinates must be finite")
        return cls(xmin, ymin, xmax, ymax)

    def format(self) -> str:
        return f"{self.xmin!r} {self.ymin!r} {self.xmax!r} {self.ymax!r}"


UNIT_DOMAIN = Rect(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True, order=True)
class Region:
    """One weighted rectangle of a footprint."""
    rect: Rect
    certainty: float


@dataclass(frozen=True)
class Footprint:
    """A document's (or query's) area of geographic relevance."""
    regions: Tuple[Region, ...]

    def __post_init__(self):
        if not self.regions:
            raise ContractViolation("a footprint needs at least one region")
        for region in self.regions:
            if not region.rect.is_valid:
                raise ContractViolation(f"region {region.rect} is outside the unit domain or has no area")
            if not 0.0 < region.certainty <= 1.0:
                raise ContractViolation(f"certainty {region.certainty} is outside (0, 1]")

    @classmethod
    def merged(cls, regions: Iterable[Region]) -> Footprint:
        """Build a footprint; identical rects collapse keeping the max certainty.

        Regions come out sorted by rect, which is also the on-disk order.
        """
        best: Dict[Rect, float] = {}
        for region in regions:
            if region.certainty > best.get(region.rect, 0.0):
                best[region.rect] = region.certainty
        return cls(tuple(Region(rect, best[rect]) for rect in sorted(best)))

    @classmethod
    def from_rect(cls, rect: Rect, certainty: float = 1.0) -> Footprint:
        return cls((Region(rect, certainty),))

    @property
    def mbr(self) -> Rect:
        return Rect.bounding(r.rect for r in self.regions)

    def __len__(self) -> int:
        return len(self.regions)


# ---------------------------------------------------------------------------
# Corpus records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DocumentRecord:
    doc_id: int
    text: str
    site_key: str
    length: int  # token count |D|


@dataclass(frozen=True)
class CollectionStats:
    n: int
    vocab_size: int
    total_tokens: int


# ---------------------------------------------------------------------------
# I/O accounting
# ---------------------------------------------------------------------------

def _per_category() -> Dict[IoCategory, int]:
    return {category: 0 for category in IoCategory}


@dataclass
class IoMeter:
    """Bytes read and seeks issued, per disk area. One meter per query."""
    bytes_read: Dict[IoCategory, int] = field(default_factory=_per_category)
    seeks: Dict[IoCategory, int] = field(default_factory=_per_category)

    def charge(self, category: IoCategory, nbytes: int, seeks: int = 0) -> None:
        self.bytes_read[category] += nbytes
        self.seeks[category] += seeks

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_read.values())

    @property
    def total_seeks(self) -> int:
        return sum(self.seeks.values())

    def merge(self, other: IoMeter) -> None:
        for category in IoCategory:
            self.bytes_read[category] += other.bytes_read[category]
            self.seeks[category] += other.seeks[category]

    def as_dict(self) -> Dict[str, int]:
        out = {f"{c.value}_bytes": n for c, n in self.bytes_read.items()}
        out.update({f"{c.value}_seeks": n for c, n in self.seeks.items()})
        return out


# ---------------------------------------------------------------------------
# Varint codec (LEB128 style: 7 data bits per byte, high bit = continuation)
# ---------------------------------------------------------------------------

def encode_varint(value: int, out: bytearray) -> None:
    if value < 0:
        raise ContractViolation(f"varint values must be non-negative, got {value}")
    while value >= 0x80:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)


def decode_varint(buf, pos: int) -> Tuple[int, int]:
    """Decode one varint at pos; returns (value, next position)."""
    result = 0
    shift = 0
    end = len(buf)
    while True:
        if pos >= end:
            raise CorruptionError(f"truncated varint at byte {pos}")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


# ---------------------------------------------------------------------------
# Checked file I/O
# ---------------------------------------------------------------------------

class CheckedWriter:
    """Binary writer that tracks its offset and reports failures with it."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.offset = 0
        try:
            self._fh = open(self.path, "wb")
        except OSError as e:
            raise IndexIOError(self.path, 0, e) from e

    def write(self, data: bytes) -> int:
        start = self.offset
        try:
            self._fh.write(data)
        except OSError as e:
            raise IndexIOError(self.path, start, e) from e
        self.offset += len(data)
        return start

    def close(self) -> None:
        try:
            self._fh.close()
        except OSError as e:
            raise IndexIOError(self.path, self.offset, e) from e

    def __enter__(self) -> CheckedWriter:
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


class MappedFile:
    """Read-only memory map of an artifact with bounds-checked range reads."""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "rb")
            self.size = os.fstat(self._fh.fileno()).st_size
            self.data = (mmap.mmap(self._fh.fileno(), 0, access=mmap.ACCESS_READ)
                         if self.size else b"")
        except OSError as e:
            raise IndexIOError(self.path, 0, e) from e

    def read(self, start: int, end: int) -> bytes:
        if start < 0 or end > self.size or start > end:
            raise CorruptionError(
                f"{self.path}: range [{start}, {end}) outside file of {self.size} bytes")
        return self.data[start:end]

    def close(self) -> None:
        if isinstance(self.data, mmap.mmap):
            self.data.close()
        self._fh.close()


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------

class EngineSettings(BaseModel):
    """Every tunable of the build and query pipeline."""
    model_config = ConfigDict(validate_assignment=True)

    # geo coding
    base_certainty: float = Field(default=0.6, gt=0, le=1, description="Certainty of a plain place-name match")
    anchored_certainty: float = Field(
        default=0.9, gt=0, le=1,
        description="Certainty of a match near the top of the page or of a repeated name")
    leading_window: float = Field(default=0.10, ge=0, le=1, description="Fraction of leading tokens that count as the top of the page")
    propagation_factor: float = Field(default=0.5, gt=0, le=1, description="Certainty multiplier for inherited site regions")
    site_threshold: int = Field(default=3, ge=1, description="Geocoded documents a site needs before its regions propagate")

    # spatial structures
    grid_bits: int = Field(default=GRID_BITS, ge=1, le=15, description="Tile grid is 2^grid_bits per side")
    intervals_per_tile: int = Field(default=DEFAULT_INTERVALS_PER_TILE, ge=1, le=MAX_INTERVALS_PER_TILE, description="m: toeprint ID intervals kept per tile")
    curve: CurveKind = Field(default=CurveKind.MORTON, description="Space-filling curve for toeprint IDs")

    # query execution
    k_sweeps: int = Field(default=DEFAULT_K_SWEEPS, ge=1, description="Maximum contiguous toeprint scans per query")
    k_results: int = Field(default=DEFAULT_K_RESULTS, ge=1, description="Results returned per query")
    gap_bytes: float = Field(default=DEFAULT_GAP_BYTES, ge=0, description="Footprint gaps up to this many bytes are read through")
    geo_mode: GeoScoreMode = Field(default=GeoScoreMode.INNER_PRODUCT, description="Geographic score formula")
    w_text: float = Field(default=1.0, ge=0)
    w_geo: float = Field(default=1.0, ge=0)
    w_global: float = Field(default=1.0, ge=0)

    # index layout
    block_size: int = Field(default=POSTINGS_BLOCK_SIZE, ge=1, description="Postings per skip block")
    store_positions: bool = Field(default=True, description="Keep token positions in postings")

    # cost model
    seek_cost: float = Field(default=DEFAULT_SEEK_COST, ge=0, description="Equivalent bytes charged per seek")
    byte_cost: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _check_weights(self) -> EngineSettings:
        if max(self.w_text, self.w_geo, self.w_global) <= 0:
            raise ValueError("at least one score weight must be positive")
        return self


def load_settings(**overrides) -> EngineSettings:
    """Defaults, then GEOSEARCH_* environment variables, then explicit overrides."""
    values: Dict[str, object] = {}
    for name in EngineSettings.model_fields:
        raw = os.environ.get(f"{ENV_PREFIX}{name.upper()}")
        if raw is not None:
            values[name] = raw
    values.update({k: v for k, v in overrides.items() if v is not None})
    return EngineSettings(**values)


def resolve_settings(settings: Optional[EngineSettings]) -> EngineSettings:
    return settings if settings is not None else load_settings()
