# geosearch/footprint_store.py
"""
On-disk footprint file sorted by doc_id, with a gap-aware fetch policy.

footprints.bin holds one record per geocoded document, ascending by doc_id:
u32 doc_id, u16 region count, then per region five f64 values
(xmin, ymin, xmax, ymax, certainty), all little-endian.
footprints.idx holds (u32 doc_id, u64 offset, u32 length) per record.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from geosearch.base import (
    CheckedWriter,
    ContractViolation,
    CorruptionError,
    Footprint,
    FootprintLookupError,
    IndexIOError,
    IndexNotOpenError,
    IoCategory,
    IoMeter,
    MappedFile,
    PathLike,
    Rect,
    Region,
)

logger = logging.getLogger(__name__)

FOOTPRINTS_FILE = "footprints.bin"
FOOTPRINTS_INDEX_FILE = "footprints.idx"

RECORD_HEADER = struct.Struct("<IH")
REGION = struct.Struct("<ddddd")
INDEX_ENTRY = struct.Struct("<IQI")
MAX_REGIONS = 0xFFFF


@dataclass(frozen=True)
class FootprintRecord:
    doc_id: int
    footprint: Footprint
    byte_offset: int

    @property
    def regions(self) -> Tuple[Region, ...]:
        return self.footprint.regions


@dataclass(frozen=True)
class FetchPlan:
    runs: Tuple[Tuple[int, int], ...]   # half-open byte ranges
    doc_ids: Tuple[int, ...]

    @property
    def nbytes(self) -> int:
        return sum(end - start for start, end in self.runs)

    @property
    def seeks(self) -> int:
        return len(self.runs)


def encode_record(doc_id: int, footprint: Footprint) -> bytes:
    if len(footprint.regions) > MAX_REGIONS:
        raise ContractViolation(f"doc {doc_id} has {len(footprint.regions)} regions, at most {MAX_REGIONS} fit a record")
    parts = [RECORD_HEADER.pack(doc_id, len(footprint.regions))]
    parts.extend(REGION.pack(*r.rect.as_tuple(), r.certainty) for r in footprint.regions)
    return b"".join(parts)


def decode_record(buf, offset: int) -> Tuple[int, Footprint, int]:
    """Decode the record at offset; returns (doc_id, footprint, end offset)."""
    try:
        doc_id, count = RECORD_HEADER.unpack_from(buf, offset)
        pos = offset + RECORD_HEADER.size
        regions = []
        for _ in range(count):
            xmin, ymin, xmax, ymax, certainty = REGION.unpack_from(buf, pos)
            regions.append(Region(Rect(xmin, ymin, xmax, ymax), certainty))
            pos += REGION.size
        return doc_id, Footprint(tuple(regions)), pos
    except (struct.error, ContractViolation) as e:
        raise CorruptionError(f"footprint record at byte {offset} does not decode: {e}") from e


def write_store(footprints: Mapping[int, Footprint], directory: PathLike) -> Dict[int, Tuple[int, int]]:
    """Write footprints.bin and footprints.idx; returns doc_id -> (offset, length)."""
    directory = Path(directory)
    offsets: Dict[int, Tuple[int, int]] = {}
    with CheckedWriter(directory / FOOTPRINTS_FILE) as writer:
        for doc_id in sorted(footprints):
            record = encode_record(doc_id, footprints[doc_id])
            offsets[doc_id] = (writer.write(record), len(record))
    with CheckedWriter(directory / FOOTPRINTS_INDEX_FILE) as writer:
        writer.write(b"".join(INDEX_ENTRY.pack(d, off, n) for d, (off, n) in offsets.items()))
    logger.info("wrote %d footprint records", len(offsets))
    return offsets


def plan_fetch(offsets: Mapping[int, Tuple[int, int]], doc_ids: Sequence[int],
               gap_threshold: float) -> FetchPlan:
    """Group requested records into runs.

    A record joins the current run when the bytes between them are at most
    gap_threshold; gap_threshold = 0 disables reading through, so each
    record gets its own run. math.inf yields a single run.
    """
    if gap_threshold < 0:
        raise ContractViolation(f"gap threshold must be >= 0, got {gap_threshold}")
    runs: List[Tuple[int, int]] = []
    start = end = -1
    previous = -1
    for doc_id in doc_ids:
        if doc_id <= previous:
            raise ContractViolation(f"doc_ids must be strictly ascending: {doc_id} after {previous}")
        previous = doc_id
        if doc_id not in offsets:
            raise FootprintLookupError(f"doc {doc_id} has no footprint record")
        offset, length = offsets[doc_id]
        if end >= 0 and gap_threshold > 0 and offset - end <= gap_threshold:
            end = offset + length
            continue
        if end >= 0:
            runs.append((start, end))
        start, end = offset, offset + length
    if end >= 0:
        runs.append((start, end))
    return FetchPlan(tuple(runs), tuple(doc_ids))


class FootprintStore:
    """Read side of the footprint file."""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self._data: Optional[MappedFile] = None
        self.offsets: Dict[int, Tuple[int, int]] = {}

    @classmethod
    def open_dir(cls, directory: PathLike) -> FootprintStore:
        return cls(directory).open()

    def open(self) -> FootprintStore:
        index_path = self.directory / FOOTPRINTS_INDEX_FILE
        try:
            raw = index_path.read_bytes()
        except OSError as e:
            raise IndexIOError(index_path, 0, e) from e
        if len(raw) % INDEX_ENTRY.size:
            raise CorruptionError(f"{index_path}: size {len(raw)} is not a multiple of {INDEX_ENTRY.size}")
        self.offsets = {d: (off, n) for d, off, n in INDEX_ENTRY.iter_unpack(raw)}
        self._data = MappedFile(self.directory / FOOTPRINTS_FILE)
        return self

    def close(self) -> None:
        if self._data is not None:
            self._data.close()
        self._data = None

    def __enter__(self) -> FootprintStore:
        return self if self._data is not None else self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def _require_open(self) -> MappedFile:
        if self._data is None:
            raise IndexNotOpenError(f"footprint store at {self.directory} is not open")
        return self._data

    def __contains__(self, doc_id: int) -> bool:
        return doc_id in self.offsets

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def data_size(self) -> int:
        return self._require_open().size

    def plan_fetch(self, doc_ids: Sequence[int], gap_threshold: float) -> FetchPlan:
        return plan_fetch(self.offsets, doc_ids, gap_threshold)

    def fetch(self, plan: FetchPlan, meter: Optional[IoMeter] = None) -> List[FootprintRecord]:
        """Read every run of the plan and decode the requested records, in plan order."""
        data = self._require_open()
        records = []
        pending = iter(plan.doc_ids)
        doc_id = next(pending, None)
        for start, end in plan.runs:
            chunk = data.read(start, end)
            if meter is not None:
                meter.charge(IoCategory.FOOTPRINTS, end - start, seeks=1)
            while doc_id is not None:
                offset, length = self.offsets[doc_id]
                if offset >= end:
                    break
                if offset < start or offset + length > end:
                    raise ContractViolation(f"plan does not cover doc {doc_id}")
                found, footprint, _ = decode_record(chunk, offset - start)
                if found != doc_id:
                    raise CorruptionError(f"record at byte {offset} belongs to doc {found}, expected {doc_id}")
                records.append(FootprintRecord(doc_id, footprint, offset))
                doc_id = next(pending, None)
        if doc_id is not None:
            raise ContractViolation(f"plan does not cover doc {doc_id}")
        return records

    def lookup(self, doc_id: int, meter: Optional[IoMeter] = None) -> FootprintRecord:
        """Point lookup of one record."""
        if doc_id not in self.offsets:
            raise FootprintLookupError(f"doc {doc_id} has no footprint record")
        return self.fetch(self.plan_fetch([doc_id], 0), meter)[0]

    def read_all(self) -> Iterator[FootprintRecord]:
        """Every record in doc_id order, unmetered (build and oracle use)."""
        data = self._require_open()
        for doc_id in sorted(self.offsets):
            offset, length = self.offsets[doc_id]
            found, footprint, _ = decode_record(data.read(offset, offset + length), 0)
            if found != doc_id:
                raise CorruptionError(f"record at byte {offset} belongs to doc {found}, expected {doc_id}")
            yield FootprintRecord(doc_id, footprint, offset)
