"""Tests for the footprint file and its gap-aware fetch policy."""
import math

import numpy as np
import pytest

from geosearch.base import (
    ContractViolation,
    CorruptionError,
    Footprint,
    FootprintLookupError,
    IoCategory,
    IoMeter,
    Rect,
    Region,
)
from geosearch.footprint_store import (
    FOOTPRINTS_FILE,
    FootprintStore,
    decode_record,
    encode_record,
    plan_fetch,
    write_store,
)

GAP_GRID = [0, 4 * 1024, 64 * 1024, 1024 * 1024, math.inf]


def _footprints(count):
    return {
        doc_id: Footprint.merged([
            Region(Rect(0.01 * (doc_id % 90), 0.2, 0.01 * (doc_id % 90) + 0.005, 0.3), 0.9),
            Region(Rect(0.5, 0.5, 0.6, 0.6), 0.5),
        ])
        for doc_id in range(0, 3 * count, 3)
    }


class TestRecords:
    """Record layout."""

    def test_record_size(self):
        fp = Footprint.from_rect(Rect(0.1, 0.1, 0.2, 0.2))
        assert len(encode_record(7, fp)) == 6 + 40

    def test_decode(self):
        fp = Footprint.from_rect(Rect(0.1, 0.1, 0.2, 0.2), 0.5)
        doc_id, decoded, end = decode_record(encode_record(7, fp), 0)
        assert (doc_id, decoded, end) == (7, fp, 46)

    def test_truncated_record(self):
        data = encode_record(7, Footprint.from_rect(Rect(0.1, 0.1, 0.2, 0.2)))
        with pytest.raises(CorruptionError):
            decode_record(data[:-3], 0)


class TestPlanFetch:
    """Grouping records into sequential runs."""

    OFFSETS = {1: (0, 50), 2: (60, 40), 3: (4000, 100)}

    def test_small_gap_read_through(self):
        plan = plan_fetch(self.OFFSETS, [1, 2, 3], 1024)
        assert plan.runs == ((0, 100), (4000, 4100))
        assert plan.nbytes == 200
        assert plan.seeks == 2

    def test_zero_gap_one_run_per_record(self):
        assert plan_fetch(self.OFFSETS, [1, 2, 3], 0).runs == ((0, 50), (60, 100), (4000, 4100))

    def test_infinite_gap_single_run(self):
        assert plan_fetch(self.OFFSETS, [1, 2, 3], math.inf).runs == ((0, 4100),)

    def test_single_request(self):
        assert plan_fetch(self.OFFSETS, [3], 1024).runs == ((4000, 4100),)

    def test_empty_request(self):
        plan = plan_fetch(self.OFFSETS, [], 1024)
        assert plan.runs == ()
        assert plan.seeks == 0

    def test_unknown_doc(self):
        with pytest.raises(FootprintLookupError):
            plan_fetch(self.OFFSETS, [1, 9], 1024)

    def test_unsorted_request(self):
        with pytest.raises(ContractViolation):
            plan_fetch(self.OFFSETS, [2, 1], 1024)

    def test_monotone_in_gap(self):
        """Bytes never shrink and seeks never grow as the gap threshold grows."""
        footprints = _footprints(2000)
        offsets = {}
        position = 0
        for doc_id in sorted(footprints):
            n = len(encode_record(doc_id, footprints[doc_id]))
            offsets[doc_id] = (position, n)
            position += n
        rng = np.random.default_rng(42)
        ids = sorted(offsets)
        for _ in range(50):
            size = int(rng.integers(1, 300))
            request = sorted(int(i) for i in rng.choice(ids, size=size, replace=False))
            plans = [plan_fetch(offsets, request, g) for g in GAP_GRID]
            for smaller, larger in zip(plans, plans[1:]):
                assert larger.nbytes >= smaller.nbytes
                assert larger.seeks <= smaller.seeks
            assert plans[-1].seeks == 1


class TestFootprintStore:
    """Write, reopen, fetch."""

    def test_fetch_matches_written(self, tmp_path):
        footprints = _footprints(100)
        write_store(footprints, tmp_path)
        with FootprintStore(tmp_path) as store:
            assert len(store) == 100
            request = [0, 3, 150, 297]
            meter = IoMeter()
            plan = store.plan_fetch(request, 64 * 1024)
            records = store.fetch(plan, meter)
            assert [r.doc_id for r in records] == request
            assert [r.footprint for r in records] == [footprints[d] for d in request]
            assert meter.seeks[IoCategory.FOOTPRINTS] == plan.seeks == 1
            assert meter.bytes_read[IoCategory.FOOTPRINTS] == plan.nbytes

    def test_file_is_doc_id_ordered(self, tmp_path):
        footprints = _footprints(20)
        offsets = write_store(footprints, tmp_path)
        starts = [offsets[d][0] for d in sorted(offsets)]
        assert starts == sorted(starts)
        assert (tmp_path / FOOTPRINTS_FILE).stat().st_size == sum(n for _, n in offsets.values())

    def test_lookup(self, tmp_path):
        footprints = _footprints(10)
        write_store(footprints, tmp_path)
        with FootprintStore(tmp_path) as store:
            assert store.lookup(9).footprint == footprints[9]
            with pytest.raises(FootprintLookupError):
                store.lookup(10)

    def test_read_all(self, tmp_path):
        footprints = _footprints(10)
        write_store(footprints, tmp_path)
        with FootprintStore(tmp_path) as store:
            assert {r.doc_id: r.footprint for r in store.read_all()} == footprints
