# geosearch/spatial_index.py
"""
Spatial access paths.

    MbrTree          memory-resident R*-tree over footprint bounding boxes
    morton/hilbert   space-filling curves numbering tiles of the grid
    toeprints        one record per footprint region, numbered along the curve
                     so that nearby regions get nearby ids
    GridIntervals    per tile, up to m id intervals covering every toeprint
                     that touches the tile
    compute_sweeps   at most k contiguous toeprint scans covering a query

toeprints.bin: 48-byte records in id order (u32 id, u32 doc_id, 4 x f64 rect,
f64 certainty). grid.bin: header (magic, u16 version, u8 grid_bits, u16 m,
u32 T) then, for every tile in row-major order (key = ty * side + tx), a
varint interval count and per interval varint (lo - previous hi) and
varint (hi - lo).
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from rtree import index as rtree_index

from geosearch.base import (
    FORMAT_VERSION,
    GRID_BITS,
    MAX_INTERVALS_PER_TILE,
    CheckedWriter,
    ContractViolation,
    CorruptionError,
    CurveKind,
    Footprint,
    IndexIOError,
    IndexNotOpenError,
    IoCategory,
    IoMeter,
    MappedFile,
    PathLike,
    Rect,
    decode_varint,
    encode_varint,
)

logger = logging.getLogger(__name__)

TOEPRINTS_FILE = "toeprints.bin"
GRID_FILE = "grid.bin"

TOEPRINT_RECORD = struct.Struct("<IIddddd")
GRID_MAGIC = b"GGRD"
GRID_HEADER = struct.Struct("<4sHBHI")

Interval = Tuple[int, int]   # closed [lo, hi]


# ---------------------------------------------------------------------------
# MBR tree
# ---------------------------------------------------------------------------

class MbrTree:
    """R*-tree over (doc_id, MBR) pairs, queried with closed intersection."""

    def __init__(self, entries: Iterable[Tuple[int, Rect]] = ()):
        props = rtree_index.Property()
        props.dimension = 2
        props.variant = rtree_index.RT_Star
        self._tree = rtree_index.Index(properties=props, interleaved=True)
        self._mbrs: Dict[int, Rect] = {}
        for doc_id, mbr in entries:
            self._tree.insert(doc_id, mbr.as_tuple())
            self._mbrs[doc_id] = mbr

    def __len__(self) -> int:
        return len(self._mbrs)

    def mbr(self, doc_id: int) -> Rect:
        return self._mbrs[doc_id]

    def query(self, rect: Rect) -> List[int]:
        """Doc ids whose MBR intersects rect, ascending."""
        if not self._mbrs:
            return []
        return sorted(set(self._tree.intersection(rect.as_tuple())))

    def leaf_nodes(self) -> List[Tuple[Rect, List[int]]]:
        """(node bounds, child doc ids) for every leaf of the tree."""
        if not self._mbrs:
            return []
        return [(Rect(*bounds), list(children)) for _, children, bounds in self._tree.leaves()]


def build_mbr_tree(footprints: Mapping[int, Footprint]) -> MbrTree:
    tree = MbrTree((doc_id, footprints[doc_id].mbr) for doc_id in sorted(footprints))
    logger.debug("built MBR tree over %d footprints", len(tree))
    return tree


def mbr_query(tree: MbrTree, rect: Rect) -> List[int]:
    return tree.query(rect)


# ---------------------------------------------------------------------------
# Space-filling curves
# ---------------------------------------------------------------------------

def _check_tile(tile_x: int, tile_y: int, grid_bits: int) -> None:
    side = 1 << grid_bits
    if not (0 <= tile_x < side and 0 <= tile_y < side):
        raise ContractViolation(f"tile ({tile_x}, {tile_y}) is outside the {side}x{side} grid")


def _part1by1(n: int) -> int:
    n &= 0x0000FFFF
    n = (n | (n << 8)) & 0x00FF00FF
    n = (n | (n << 4)) & 0x0F0F0F0F
    n = (n | (n << 2)) & 0x33333333
    n = (n | (n << 1)) & 0x55555555
    return n


def _compact1by1(n: int) -> int:
    n &= 0x55555555
    n = (n | (n >> 1)) & 0x33333333
    n = (n | (n >> 2)) & 0x0F0F0F0F
    n = (n | (n >> 4)) & 0x00FF00FF
    n = (n | (n >> 8)) & 0x0000FFFF
    return n


def morton(tile_x: int, tile_y: int, grid_bits: int = GRID_BITS) -> int:
    """Z-order code: x bits in even positions, y bits in odd positions."""
    _check_tile(tile_x, tile_y, grid_bits)
    return _part1by1(tile_x) | (_part1by1(tile_y) << 1)


def morton_decode(code: int) -> Tuple[int, int]:
    return _compact1by1(code), _compact1by1(code >> 1)


def hilbert(tile_x: int, tile_y: int, grid_bits: int = GRID_BITS) -> int:
    """Distance of a tile along the Hilbert curve of the grid."""
    _check_tile(tile_x, tile_y, grid_bits)
    side = 1 << grid_bits
    x, y = tile_x, tile_y
    d = 0
    s = side >> 1
    while s > 0:
        rx = 1 if x & s else 0
        ry = 1 if y & s else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = side - 1 - x
                y = side - 1 - y
            x, y = y, x
        s >>= 1
    return d


def curve_code(tile_x: int, tile_y: int, grid_bits: int = GRID_BITS,
               curve: CurveKind = CurveKind.MORTON) -> int:
    if curve == CurveKind.HILBERT:
        return hilbert(tile_x, tile_y, grid_bits)
    return morton(tile_x, tile_y, grid_bits)


# ---------------------------------------------------------------------------
# Tiles
# ---------------------------------------------------------------------------

def cell_index(value: float, grid_bits: int = GRID_BITS) -> int:
    """Cell of a coordinate; cells are half-open except the last, closed at 1.0."""
    side = 1 << grid_bits
    return min(max(int(math.floor(value * side)), 0), side - 1)


@dataclass(frozen=True)
class TileRange:
    """Inclusive block of tiles [x0..x1] x [y0..y1]."""
    x0: int
    y0: int
    x1: int
    y1: int
    grid_bits: int = GRID_BITS

    def __len__(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def __contains__(self, tile: Tuple[int, int]) -> bool:
        tx, ty = tile
        return self.x0 <= tx <= self.x1 and self.y0 <= ty <= self.y1

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        for ty in range(self.y0, self.y1 + 1):
            for tx in range(self.x0, self.x1 + 1):
                yield tx, ty

    def keys(self) -> Iterator[int]:
        side = 1 << self.grid_bits
        for ty in range(self.y0, self.y1 + 1):
            row = ty * side
            for tx in range(self.x0, self.x1 + 1):
                yield row + tx


def tile_cover(rect: Rect, grid_bits: int = GRID_BITS) -> TileRange:
    """Tiles whose cell intersects rect."""
    if not (0.0 <= rect.xmin <= rect.xmax <= 1.0 and 0.0 <= rect.ymin <= rect.ymax <= 1.0):
        raise ContractViolation(f"rectangle {rect} is outside the unit domain")
    return TileRange(cell_index(rect.xmin, grid_bits), cell_index(rect.ymin, grid_bits),
                     cell_index(rect.xmax, grid_bits), cell_index(rect.ymax, grid_bits), grid_bits)


def tile_rect(tile_x: int, tile_y: int, grid_bits: int = GRID_BITS) -> Rect:
    side = 1 << grid_bits
    return Rect(tile_x / side, tile_y / side, (tile_x + 1) / side, (tile_y + 1) / side)


# ---------------------------------------------------------------------------
# Toeprints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Toeprint:
    toeprint_id: int
    doc_id: int
    rect: Rect
    certainty: float


def assign_toeprints(footprints: Mapping[int, Footprint], grid_bits: int = GRID_BITS,
                     curve: CurveKind = CurveKind.MORTON) -> List[Toeprint]:
    """One toeprint per region, numbered by (curve code of center tile, doc_id, rect)."""
    keyed = []
    for doc_id, footprint in footprints.items():
        for region in footprint.regions:
            cx, cy = region.rect.center
            code = curve_code(cell_index(cx, grid_bits), cell_index(cy, grid_bits), grid_bits, curve)
            keyed.append((code, doc_id, region.rect.as_tuple(), region))
    keyed.sort(key=lambda item: item[:3])
    return [Toeprint(i, doc_id, region.rect, region.certainty)
            for i, (_, doc_id, _, region) in enumerate(keyed)]


def write_toeprints(toeprints: Sequence[Toeprint], path: PathLike) -> None:
    with CheckedWriter(path) as writer:
        writer.write(b"".join(
            TOEPRINT_RECORD.pack(t.toeprint_id, t.doc_id, *t.rect.as_tuple(), t.certainty)
            for t in toeprints))


def _decode_toeprints(chunk: bytes) -> List[Toeprint]:
    return [Toeprint(tid, doc_id, Rect(x0, y0, x1, y1), certainty)
            for tid, doc_id, x0, y0, x1, y1, certainty in TOEPRINT_RECORD.iter_unpack(chunk)]


class ToeprintStore:
    """Toeprint records in id order; an id interval is one contiguous byte range.

    Each record carries its doc_id, so the file doubles as the
    id -> doc_id translation table.
    """

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self._data: Optional[MappedFile] = None

    def open(self) -> ToeprintStore:
        data = MappedFile(self.path)
        if data.size % TOEPRINT_RECORD.size:
            data.close()
            raise CorruptionError(f"{self.path}: size {data.size} is not a multiple of {TOEPRINT_RECORD.size}")
        self._data = data
        return self

    def close(self) -> None:
        if self._data is not None:
            self._data.close()
        self._data = None

    def _require_open(self) -> MappedFile:
        if self._data is None:
            raise IndexNotOpenError(f"toeprint store {self.path} is not open")
        return self._data

    def __len__(self) -> int:
        return self._require_open().size // TOEPRINT_RECORD.size

    @property
    def data_size(self) -> int:
        return self._require_open().size

    def read_range(self, lo: int, hi: int, meter: Optional[IoMeter] = None) -> List[Toeprint]:
        """Records lo..hi inclusive, read as one sequential scan."""
        data = self._require_open()
        if lo < 0 or hi < lo:
            raise ContractViolation(f"bad toeprint range [{lo}, {hi}]")
        start, end = lo * TOEPRINT_RECORD.size, (hi + 1) * TOEPRINT_RECORD.size
        chunk = data.read(start, end)
        if meter is not None:
            meter.charge(IoCategory.TOEPRINTS, end - start, seeks=1)
        return _decode_toeprints(chunk)

    def read_all(self) -> List[Toeprint]:
        data = self._require_open()
        return _decode_toeprints(data.read(0, data.size))


# ---------------------------------------------------------------------------
# Intervals and sweeps
# ---------------------------------------------------------------------------

def normalize_intervals(intervals: Iterable[Interval]) -> List[Interval]:
    """Sort and merge overlapping or adjacent intervals."""
    merged: List[Interval] = []
    for lo, hi in sorted(intervals):
        if lo > hi:
            raise ContractViolation(f"interval [{lo}, {hi}] is reversed")
        if merged and lo <= merged[-1][1] + 1:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


def coalesce_runs(runs: Sequence[Interval], limit: int) -> List[Interval]:
    """Reduce disjoint sorted runs to at most limit by closing the smallest gaps.

    Equal gaps close leftmost first. The runs kept apart are those split by
    the limit - 1 largest gaps, which minimizes the total covered length.
    """
    if limit < 1:
        raise ContractViolation(f"interval limit must be >= 1, got {limit}")
    if len(runs) <= limit:
        return list(runs)
    by_gap = sorted(range(len(runs) - 1), key=lambda i: (runs[i + 1][0] - runs[i][1], i))
    cuts = sorted(by_gap[len(runs) - limit:])
    out = []
    start = runs[0][0]
    for i in cuts:
        out.append((start, runs[i][1]))
        start = runs[i + 1][0]
    out.append((start, runs[-1][1]))
    return out


def compute_sweeps(intervals: Iterable[Interval], k: int) -> List[Interval]:
    """At most k intervals covering the union with minimal total length."""
    if k < 1:
        raise ContractViolation(f"k_sweeps must be >= 1, got {k}")
    return coalesce_runs(normalize_intervals(intervals), k)


def covered_length(intervals: Iterable[Interval]) -> int:
    return sum(hi - lo + 1 for lo, hi in intervals)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass
class GridIntervals:
    grid_bits: int
    m: int
    toeprint_count: int
    tiles: Dict[int, Tuple[Interval, ...]] = field(default_factory=dict)  # key = ty * side + tx

    @property
    def side(self) -> int:
        return 1 << self.grid_bits

    def intervals(self, tile_x: int, tile_y: int) -> Tuple[Interval, ...]:
        return self.tiles.get(tile_y * self.side + tile_x, ())

    def intervals_for(self, tiles: TileRange) -> List[Interval]:
        """Every interval stored for the tiles of a range."""
        found: List[Interval] = []
        if len(tiles) > len(self.tiles):
            for key, runs in self.tiles.items():
                ty, tx = divmod(key, self.side)
                if (tx, ty) in tiles:
                    found.extend(runs)
        else:
            for key in tiles.keys():
                found.extend(self.tiles.get(key, ()))
        return found

    def serialize(self) -> bytes:
        out = bytearray(GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, self.grid_bits, self.m, self.toeprint_count))
        cursor = 0
        for key in sorted(self.tiles):
            out.extend(bytes(key - cursor))   # empty tiles: count 0
            runs = self.tiles[key]
            encode_varint(len(runs), out)
            previous = 0
            for lo, hi in runs:
                encode_varint(lo - previous, out)
                encode_varint(hi - lo, out)
                previous = hi
            cursor = key + 1
        out.extend(bytes(self.side * self.side - cursor))
        return bytes(out)

    def write(self, path: PathLike) -> int:
        data = self.serialize()
        with CheckedWriter(path) as writer:
            writer.write(data)
        return len(data)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<grid>") -> GridIntervals:
        if len(data) < GRID_HEADER.size:
            raise CorruptionError(f"{source}: truncated grid header")
        magic, version, grid_bits, m, count = GRID_HEADER.unpack_from(data, 0)
        if magic != GRID_MAGIC:
            raise CorruptionError(f"{source}: not a grid file")
        if version != FORMAT_VERSION:
            raise CorruptionError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
        tiles: Dict[int, Tuple[Interval, ...]] = {}
        pos = GRID_HEADER.size
        for key in range((1 << grid_bits) ** 2):
            if pos >= len(data):
                raise CorruptionError(f"{source}: grid ends at tile {key}")
            if data[pos] == 0:
                pos += 1
                continue
            n, pos = decode_varint(data, pos)
            runs = []
            previous = 0
            for _ in range(n):
                gap, pos = decode_varint(data, pos)
                width, pos = decode_varint(data, pos)
                lo = previous + gap
                runs.append((lo, lo + width))
                previous = lo + width
            tiles[key] = tuple(runs)
        if pos != len(data):
            raise CorruptionError(f"{source}: {len(data) - pos} trailing bytes")
        return cls(grid_bits, m, count, tiles)

    @classmethod
    def read(cls, path: PathLike) -> GridIntervals:
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise IndexIOError(path, 0, e) from e
        return cls.from_bytes(data, str(path))


def build_grid(toeprints: Sequence[Toeprint], m: int, grid_bits: int = GRID_BITS) -> GridIntervals:
    """Per tile: maximal runs of intersecting toeprint ids, coalesced down to m."""
    if not 1 <= m <= MAX_INTERVALS_PER_TILE:
        raise ContractViolation(f"m must be in [1, {MAX_INTERVALS_PER_TILE}], got {m}")
    side = 1 << grid_bits
    grid = GridIntervals(grid_bits, m, len(toeprints))
    if not toeprints:
        return grid

    spans = np.array(
        [(cell_index(t.rect.xmin, grid_bits), cell_index(t.rect.ymin, grid_bits),
          cell_index(t.rect.xmax, grid_bits), cell_index(t.rect.ymax, grid_bits)) for t in toeprints],
        dtype=np.int64)
    ids = np.array([t.toeprint_id for t in toeprints], dtype=np.int64)
    widths = spans[:, 2] - spans[:, 0] + 1
    counts = widths * (spans[:, 3] - spans[:, 1] + 1)

    # one (tile, id) pair per covered tile of every toeprint
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    repeated_widths = np.repeat(widths, counts)
    tx = np.repeat(spans[:, 0], counts) + local % repeated_widths
    ty = np.repeat(spans[:, 1], counts) + local // repeated_widths
    keys = ty * side + tx
    owners = np.repeat(ids, counts)
    order = np.lexsort((owners, keys))
    keys, owners = keys[order], owners[order]

    new_tile = np.ones(len(keys), dtype=bool)
    new_tile[1:] = keys[1:] != keys[:-1]
    new_run = new_tile.copy()
    new_run[1:] |= owners[1:] != owners[:-1] + 1
    run_starts = np.flatnonzero(new_run)
    run_ends = np.append(run_starts[1:], len(keys)) - 1
    run_keys = keys[run_starts].tolist()
    run_lo = owners[run_starts].tolist()
    run_hi = owners[run_ends].tolist()

    start = 0
    for i in range(1, len(run_keys) + 1):
        if i == len(run_keys) or run_keys[i] != run_keys[start]:
            runs = list(zip(run_lo[start:i], run_hi[start:i]))
            grid.tiles[run_keys[start]] = tuple(coalesce_runs(runs, m))
            start = i
    logger.info("built grid: %d toeprints, %d non-empty tiles, m=%d", len(toeprints), len(grid.tiles), m)
    return grid
