# geosearch/inverted_index.py
"""
Compressed, doc_id-sorted inverted index with document-at-a-time traversal.

On-disk layout (integers little-endian):

    lexicon   header: b"GLEX", u16 format version, u8 flags (bit 0: positions
              stored), u32 n, u32 vocab_size, u64 total_tokens, u32 block size.
              Then, per term in sorted order: u16 UTF-8 length, the term,
              u32 doc_freq, u64 byte_offset, u32 byte_length.
    postings  one run per term, in lexicon order. A run starts with a varint
              block count and, per block, varint (last doc_id minus the
              previous block's last doc_id) and varint payload length; the
              block payloads follow. Each payload is encode_postings() of
              up to block-size postings.
    doclens   u32 token count per document, in doc_id order.
"""

from __future__ import annotations

import logging
import struct
from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from geosearch.base import (
    FORMAT_VERSION,
    CheckedWriter,
    CollectionStats,
    ContractViolation,
    CorruptionError,
    EngineSettings,
    IndexIOError,
    IndexNotOpenError,
    IoCategory,
    IoMeter,
    MappedFile,
    PathLike,
    decode_varint,
    encode_varint,
    resolve_settings,
)
from geosearch.corpus import Collection, tokenize

logger = logging.getLogger(__name__)

LEXICON_FILE = "lexicon"
POSTINGS_FILE = "postings"
DOCLENS_FILE = "doclens"

LEXICON_MAGIC = b"GLEX"
LEXICON_HEADER = struct.Struct("<4sHBIIQI")
LEXICON_TERM_LENGTH = struct.Struct("<H")
LEXICON_RECORD = struct.Struct("<IQI")
FLAG_POSITIONS = 0x01


@dataclass(frozen=True)
class Posting:
    doc_id: int
    freq: int
    positions: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.freq < 1:
            raise ContractViolation(f"posting for doc {self.doc_id} has freq {self.freq}")
        if self.positions is not None:
            if len(self.positions) != self.freq:
                raise ContractViolation(f"posting for doc {self.doc_id}: {len(self.positions)} positions, freq {self.freq}")
            if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
                raise ContractViolation(f"posting for doc {self.doc_id}: positions not strictly increasing")


@dataclass(frozen=True)
class LexiconEntry:
    term: str
    doc_freq: int
    byte_offset: int
    byte_length: int


# ---------------------------------------------------------------------------
# Postings codec
# ---------------------------------------------------------------------------

def encode_postings(postings: Iterable[Posting], with_positions: bool = False) -> bytes:
    """Delta + varint encode postings: gap (first absolute), freq, then optional position gaps."""
    out = bytearray()
    previous = -1
    for posting in postings:
        if posting.doc_id <= previous:
            raise ContractViolation(f"doc_ids must be strictly increasing: {posting.doc_id} after {previous}")
        encode_varint(posting.doc_id if previous < 0 else posting.doc_id - previous, out)
        encode_varint(posting.freq, out)
        if with_positions:
            if posting.positions is None:
                raise ContractViolation(f"posting for doc {posting.doc_id} has no positions")
            last = 0
            for position in posting.positions:
                encode_varint(position - last, out)
                last = position
        previous = posting.doc_id
    return bytes(out)


def decode_postings(buf, start: int = 0, end: Optional[int] = None,
                    with_positions: bool = False) -> List[Posting]:
    end = len(buf) if end is None else end
    postings = []
    pos = start
    doc_id = -1
    while pos < end:
        gap, pos = decode_varint(buf, pos)
        doc_id = gap if doc_id < 0 else doc_id + gap
        freq, pos = decode_varint(buf, pos)
        positions = None
        if with_positions:
            offsets = []
            last = 0
            for _ in range(freq):
                delta, pos = decode_varint(buf, pos)
                last += delta
                offsets.append(last)
            positions = tuple(offsets)
        postings.append(Posting(doc_id, freq, positions))
    if pos != end:
        raise CorruptionError(f"postings block overran its end by {pos - end} bytes")
    return postings


def _decode_block(buf, pos: int, end: int, with_positions: bool) -> Tuple[List[int], List[int]]:
    """Doc ids and freqs of one block; positions are skipped."""
    doc_ids: List[int] = []
    freqs: List[int] = []
    doc_id = -1
    while pos < end:
        gap, pos = decode_varint(buf, pos)
        doc_id = gap if doc_id < 0 else doc_id + gap
        freq, pos = decode_varint(buf, pos)
        if with_positions:
            for _ in range(freq):
                _, pos = decode_varint(buf, pos)
        doc_ids.append(doc_id)
        freqs.append(freq)
    if pos != end:
        raise CorruptionError(f"postings block overran its end by {pos - end} bytes")
    return doc_ids, freqs


def _encode_run(postings: Sequence[Posting], block_size: int, with_positions: bool) -> bytes:
    header = bytearray()
    payloads = []
    encode_varint((len(postings) + block_size - 1) // block_size, header)
    previous_last = 0
    for start in range(0, len(postings), block_size):
        block = postings[start:start + block_size]
        payload = encode_postings(block, with_positions)
        encode_varint(block[-1].doc_id - previous_last, header)
        encode_varint(len(payload), header)
        previous_last = block[-1].doc_id
        payloads.append(payload)
    return bytes(header) + b"".join(payloads)


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

def build_index(collection: Collection, out_dir: PathLike,
                settings: Optional[EngineSettings] = None) -> CollectionStats:
    """Write lexicon, postings and doclens for a collection; returns its stats."""
    settings = resolve_settings(settings)
    if len(collection) == 0:
        raise ContractViolation("cannot index an empty collection")
    out = Path(out_dir)

    postings: Dict[str, List[Posting]] = defaultdict(list)
    lengths = np.zeros(len(collection), dtype="<u4")
    total_tokens = 0
    for record in collection:
        tokens = tokenize(record.text)
        lengths[record.doc_id] = len(tokens)
        total_tokens += len(tokens)
        positions: Dict[str, List[int]] = {}
        for position, term in enumerate(tokens):
            positions.setdefault(term, []).append(position)
        for term, offsets in positions.items():
            postings[term].append(Posting(record.doc_id, len(offsets), tuple(offsets)))
    if not postings:
        raise ContractViolation("collection has no terms")

    terms = sorted(postings)
    stats = CollectionStats(n=len(collection), vocab_size=len(terms), total_tokens=total_tokens)
    entries = []
    with CheckedWriter(out / POSTINGS_FILE) as writer:
        for term in terms:
            run = _encode_run(postings[term], settings.block_size, settings.store_positions)
            offset = writer.write(run)
            entries.append(LexiconEntry(term, len(postings[term]), offset, len(run)))

    flags = FLAG_POSITIONS if settings.store_positions else 0
    with CheckedWriter(out / LEXICON_FILE) as writer:
        writer.write(LEXICON_HEADER.pack(LEXICON_MAGIC, FORMAT_VERSION, flags, stats.n,
                                         stats.vocab_size, stats.total_tokens, settings.block_size))
        for entry in entries:
            encoded = entry.term.encode("utf-8")
            writer.write(LEXICON_TERM_LENGTH.pack(len(encoded)) + encoded
                         + LEXICON_RECORD.pack(entry.doc_freq, entry.byte_offset, entry.byte_length))

    with CheckedWriter(out / DOCLENS_FILE) as writer:
        writer.write(lengths.tobytes())

    logger.info("indexed %d documents: %d terms, %d tokens", stats.n, stats.vocab_size, stats.total_tokens)
    return stats


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------

class PostingsCursor:
    """Forward-only cursor over one term's postings run.

    Opening reads the block directory; blocks are decoded lazily as the
    cursor reaches them, so next_ge() skips whole blocks it jumps over.
    """

    __slots__ = ("term", "doc_freq", "_buf", "_with_positions", "_meter",
                 "_block_last", "_block_start", "_block_end", "_block",
                 "_doc_ids", "_freqs", "_i", "_exhausted")

    def __init__(self, index: InvertedIndex, entry: LexiconEntry, meter: IoMeter):
        self.term = entry.term
        self.doc_freq = entry.doc_freq
        self._buf = index._postings.data
        self._with_positions = index.positions_stored
        self._meter = meter

        run_end = entry.byte_offset + entry.byte_length
        if run_end > index._postings.size:
            raise CorruptionError(f"postings run for '{entry.term}' ends past the postings file")
        count, pos = decode_varint(self._buf, entry.byte_offset)
        self._block_last: List[int] = []
        lengths = []
        last = 0
        for _ in range(count):
            delta, pos = decode_varint(self._buf, pos)
            length, pos = decode_varint(self._buf, pos)
            last += delta
            self._block_last.append(last)
            lengths.append(length)
        meter.charge(IoCategory.POSTINGS, pos - entry.byte_offset, seeks=1)

        self._block_start: List[int] = []
        self._block_end: List[int] = []
        for length in lengths:
            self._block_start.append(pos)
            pos += length
            self._block_end.append(pos)
        if pos != run_end:
            raise CorruptionError(f"postings run for '{entry.term}' has inconsistent block lengths")

        self._block = -1
        self._doc_ids: List[int] = []
        self._freqs: List[int] = []
        self._i = 0
        self._exhausted = count == 0
        if not self._exhausted:
            self._load(0)

    def _load(self, block: int) -> None:
        start, end = self._block_start[block], self._block_end[block]
        self._doc_ids, self._freqs = _decode_block(self._buf, start, end, self._with_positions)
        self._meter.charge(IoCategory.POSTINGS, end - start)
        self._block = block
        self._i = 0

    def doc_id(self) -> Optional[int]:
        return None if self._exhausted else self._doc_ids[self._i]

    def freq(self) -> int:
        return self._freqs[self._i]

    def advance(self) -> Optional[int]:
        if self._exhausted:
            return None
        self._i += 1
        if self._i >= len(self._doc_ids):
            if self._block + 1 >= len(self._block_last):
                self._exhausted = True
                return None
            self._load(self._block + 1)
        return self._doc_ids[self._i]

    def next_ge(self, target: int) -> Optional[int]:
        """Move to the first posting with doc_id >= target."""
        if self._exhausted:
            return None
        if self._doc_ids[self._i] >= target:
            return self._doc_ids[self._i]
        if target > self._block_last[self._block]:
            block = bisect_left(self._block_last, target, lo=self._block + 1)
            if block >= len(self._block_last):
                self._exhausted = True
                return None
            self._load(block)
        self._i = bisect_left(self._doc_ids, target, lo=self._i)
        return self._doc_ids[self._i]


def _check_ascending(candidates: Sequence[int]) -> None:
    for a, b in zip(candidates, candidates[1:]):
        if b <= a:
            raise ContractViolation(f"candidate doc_ids must be strictly ascending: {b} after {a}")


class InvertedIndex:
    """Read side of the index. Immutable once open; safe for concurrent readers."""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self._lexicon: Optional[Dict[str, LexiconEntry]] = None
        self._postings: Optional[MappedFile] = None
        self._doclens: Optional[np.ndarray] = None
        self.stats: Optional[CollectionStats] = None
        self.positions_stored = False
        self.block_size = 0

    @classmethod
    def open_dir(cls, directory: PathLike) -> InvertedIndex:
        return cls(directory).open()

    def open(self) -> InvertedIndex:
        lexicon_path = self.directory / LEXICON_FILE
        try:
            raw = lexicon_path.read_bytes()
        except OSError as e:
            raise IndexIOError(lexicon_path, 0, e) from e
        if len(raw) < LEXICON_HEADER.size:
            raise CorruptionError(f"{lexicon_path}: truncated header")
        magic, version, flags, n, vocab, total, block_size = LEXICON_HEADER.unpack_from(raw, 0)
        if magic != LEXICON_MAGIC:
            raise CorruptionError(f"{lexicon_path}: not a lexicon file")
        if version != FORMAT_VERSION:
            raise CorruptionError(f"{lexicon_path}: format version {version}, expected {FORMAT_VERSION}")

        lexicon: Dict[str, LexiconEntry] = {}
        pos = LEXICON_HEADER.size
        try:
            for _ in range(vocab):
                (length,) = LEXICON_TERM_LENGTH.unpack_from(raw, pos)
                pos += LEXICON_TERM_LENGTH.size
                term = raw[pos:pos + length].decode("utf-8")
                pos += length
                doc_freq, offset, byte_length = LEXICON_RECORD.unpack_from(raw, pos)
                pos += LEXICON_RECORD.size
                lexicon[term] = LexiconEntry(term, doc_freq, offset, byte_length)
        except (struct.error, UnicodeDecodeError) as e:
            raise CorruptionError(f"{lexicon_path}: bad term record at byte {pos}: {e}") from e

        doclens_path = self.directory / DOCLENS_FILE
        try:
            doclens = np.fromfile(doclens_path, dtype="<u4")
        except OSError as e:
            raise IndexIOError(doclens_path, 0, e) from e
        if len(doclens) != n:
            raise CorruptionError(f"{doclens_path}: {len(doclens)} lengths for {n} documents")

        self._postings = MappedFile(self.directory / POSTINGS_FILE)
        self._lexicon = lexicon
        self._doclens = doclens
        self.stats = CollectionStats(n=n, vocab_size=vocab, total_tokens=total)
        self.positions_stored = bool(flags & FLAG_POSITIONS)
        self.block_size = block_size
        return self

    def close(self) -> None:
        if self._postings is not None:
            self._postings.close()
        self._postings = None
        self._lexicon = None
        self._doclens = None

    @property
    def is_open(self) -> bool:
        return self._lexicon is not None

    def __enter__(self) -> InvertedIndex:
        return self if self.is_open else self.open()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def _require_open(self) -> None:
        if not self.is_open:
            raise IndexNotOpenError(f"index at {self.directory} is not open")

    # -- lookups -------------------------------------------------------------

    def entry(self, term: str) -> Optional[LexiconEntry]:
        self._require_open()
        return self._lexicon.get(term)

    def doc_freq(self, term: str) -> int:
        found = self.entry(term)
        return found.doc_freq if found else 0

    def doc_length(self, doc_id: int) -> int:
        self._require_open()
        return int(self._doclens[doc_id])

    def terms(self) -> List[str]:
        self._require_open()
        return list(self._lexicon)

    def postings(self, term: str) -> List[Posting]:
        """Fully decoded postings of one term, positions included when stored."""
        found = self.entry(term)
        if found is None:
            return []
        cursor = PostingsCursor(self, found, IoMeter())
        out = []
        for start, end in zip(cursor._block_start, cursor._block_end):
            out.extend(decode_postings(self._postings.data, start, end, self.positions_stored))
        return out

    def _cursors(self, terms: Iterable[str], meter: IoMeter) -> Optional[List[PostingsCursor]]:
        """Cursors for the distinct terms, shortest list first; None if a term is unknown."""
        self._require_open()
        unique = sorted(set(terms))
        if not unique:
            raise ContractViolation("a query needs at least one term")
        entries = [self._lexicon.get(term) for term in unique]
        if any(e is None for e in entries):
            return None
        entries.sort(key=lambda e: (e.doc_freq, e.term))
        return [PostingsCursor(self, e, meter) for e in entries]

    # -- traversal -----------------------------------------------------------

    def daat_stream(self, terms: Iterable[str],
                    meter: Optional[IoMeter] = None) -> Iterator[Tuple[int, Dict[str, int]]]:
        """Ascending (doc_id, {term: freq}) for documents holding every term."""
        cursors = self._cursors(terms, meter if meter is not None else IoMeter())
        if cursors is None:
            return iter(())
        return _conjunction(cursors)

    def filter_postings(self, candidates: Sequence[int], terms: Iterable[str],
                        meter: Optional[IoMeter] = None) -> List[Tuple[int, Dict[str, int]]]:
        """Candidates that hold every term, with their term frequencies."""
        self._require_open()
        _check_ascending(candidates)
        if not candidates:
            return []
        cursors = self._cursors(terms, meter if meter is not None else IoMeter())
        if cursors is None:
            return []
        matched = []
        for doc_id in candidates:
            freqs = {}
            for cursor in cursors:
                found = cursor.next_ge(doc_id)
                if found is None:
                    return matched
                if found != doc_id:
                    break
                freqs[cursor.term] = cursor.freq()
            else:
                matched.append((doc_id, freqs))
        return matched

    def filter_docids(self, candidates: Sequence[int], terms: Iterable[str],
                      meter: Optional[IoMeter] = None) -> List[int]:
        return [doc_id for doc_id, _ in self.filter_postings(candidates, terms, meter)]


def _conjunction(cursors: List[PostingsCursor]) -> Iterator[Tuple[int, Dict[str, int]]]:
    lead, rest = cursors[0], cursors[1:]
    doc_id = lead.doc_id()
    while doc_id is not None:
        for cursor in rest:
            found = cursor.next_ge(doc_id)
            if found is None:
                return
            if found != doc_id:
                doc_id = lead.next_ge(found)
                break
        else:
            yield doc_id, {cursor.term: cursor.freq() for cursor in cursors}
            doc_id = lead.advance()
