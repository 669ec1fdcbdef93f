"""Tests for text, geographic and global scores and top-k selection."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from pydantic import ValidationError

from geosearch.base import ContractViolation, Footprint, GeoScoreMode, GlobalScoreParseError, Rect, Region
from geosearch.ranking import (
    GlobalScoreTable,
    ScoredHit,
    ScoreWeights,
    combined_score,
    geo_score,
    score_document,
    text_score,
    top_k,
)


@st.composite
def footprints(draw):
    regions = []
    for _ in range(draw(st.integers(1, 3))):
        x = draw(st.floats(0.0, 0.8))
        y = draw(st.floats(0.0, 0.8))
        w = draw(st.floats(0.01, 0.2))
        h = draw(st.floats(0.01, 0.2))
        regions.append(Region(Rect(x, y, x + w, y + h), draw(st.floats(0.05, 1.0))))
    return Footprint.merged(regions)


def _mass(footprint):
    return math.fsum(r.rect.area * r.certainty for r in footprint.regions)


class TestTextScore:
    """Cosine measure."""

    def test_hand_case(self):
        expected = math.log(101) * (1 + math.log(3)) / 10
        assert text_score([(3, 100)], n=10_000, doc_length=100) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.96853, abs=1e-5)

    def test_random_tuples_match_direct_evaluation(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 10**7))
            f_t = int(rng.integers(1, n + 1))
            length = int(rng.integers(1, 10**4))
            f_dt = int(rng.integers(1, length + 1))
            direct = float(np.log1p(n / f_t) * (1.0 + np.log(f_dt)) / np.sqrt(length))
            assert text_score([(f_dt, f_t)], n, length) == pytest.approx(direct, rel=1e-12)

    def test_terms_add_up(self):
        one = text_score([(2, 10)], 100, 25)
        two = text_score([(3, 40)], 100, 25)
        assert text_score([(2, 10), (3, 40)], 100, 25) == pytest.approx(one + two)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 10**7), st.integers(1, 10**7), st.integers(2, 10**4), st.integers(1, 10**4))
    def test_more_occurrences_score_higher(self, n, f_t, length, f_dt):
        f_t = min(f_t, n)
        f_dt = min(f_dt, length - 1)
        assert text_score([(f_dt + 1, f_t)], n, length) > text_score([(f_dt, f_t)], n, length)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 10**7), st.integers(1, 10**7), st.integers(1, 10**4), st.integers(1, 10**4))
    def test_rarer_terms_score_higher(self, n, f_t, length, f_dt):
        f_t = min(f_t, n - 1)
        f_dt = min(f_dt, length)
        assert text_score([(f_dt, f_t)], n, length) > text_score([(f_dt, f_t + 1)], n, length)

    def test_zero_length_rejected(self):
        with pytest.raises(ContractViolation):
            text_score([(1, 1)], 10, 0)


class TestGeoScore:
    """Overlap normalized by query mass."""

    QUERY = Footprint.from_rect(Rect(0.2, 0.2, 0.4, 0.4))

    def test_full_cover(self):
        doc = Footprint.from_rect(Rect(0.0, 0.0, 1.0, 1.0))
        assert geo_score(self.QUERY, doc) == pytest.approx(1.0)

    def test_disjoint(self):
        assert geo_score(self.QUERY, Footprint.from_rect(Rect(0.5, 0.5, 0.6, 0.6))) == 0.0

    def test_touching_scores_zero(self):
        assert geo_score(self.QUERY, Footprint.from_rect(Rect(0.4, 0.2, 0.5, 0.4))) == 0.0

    def test_certainty_weights(self):
        doc = Footprint.from_rect(Rect(0.2, 0.2, 0.3, 0.4), certainty=0.5)
        assert geo_score(self.QUERY, doc) == pytest.approx(0.25)

    def test_intersection_volume_ignores_certainty(self):
        doc = Footprint.from_rect(Rect(0.2, 0.2, 0.3, 0.4), certainty=0.5)
        assert geo_score(self.QUERY, doc, GeoScoreMode.INTERSECTION_VOLUME) == pytest.approx(0.5)

    def test_capped_at_one(self):
        regions = [Region(Rect(0.0, 0.0, 1.0, 1.0), 1.0), Region(Rect(0.1, 0.1, 0.9, 0.9), 1.0)]
        assert geo_score(self.QUERY, regions) == 1.0

    def test_intersecting_subset_scores_the_same(self):
        hit = Region(Rect(0.25, 0.25, 0.35, 0.45), 0.7)
        miss = Region(Rect(0.6, 0.6, 0.7, 0.7), 0.9)
        assert geo_score(self.QUERY, [hit]) == geo_score(self.QUERY, Footprint.merged([hit, miss]))


    @staticmethod
    def _density(regions, x, y, weighted):
        total = np.zeros_like(x)
        for region in regions:
            r = region.rect
            inside = (x >= r.xmin) & (x <= r.xmax) & (y >= r.ymin) & (y <= r.ymax)
            total += inside * (region.certainty if weighted else 1.0)
        return total

    @pytest.mark.parametrize("mode", list(GeoScoreMode))
    def test_matches_sampled_integral(self, mode):
        query = Footprint.merged([Region(Rect(0.1, 0.1, 0.5, 0.5), 1.0),
                                  Region(Rect(0.3, 0.3, 0.7, 0.6), 0.5)])
        doc = Footprint.merged([Region(Rect(0.2, 0.0, 0.4, 0.8), 0.8),
                                Region(Rect(0.45, 0.35, 0.9, 0.9), 0.6)])
        # one jittered sample per cell of a 1000 x 1000 grid
        side = 1000
        rng = np.random.default_rng(17)
        cells_x, cells_y = np.meshgrid(np.arange(side), np.arange(side))
        x = (cells_x + rng.random(cells_x.shape)) / side
        y = (cells_y + rng.random(cells_y.shape)) / side
        weighted = mode == GeoScoreMode.INNER_PRODUCT
        on_query = self._density(query.regions, x, y, weighted)
        on_doc = self._density(doc.regions, x, y, weighted)
        estimate = float((on_query * on_doc).mean() / on_query.mean())
        assert geo_score(query, doc, mode) == pytest.approx(estimate, abs=1e-3)

    @settings(max_examples=200, deadline=None)
    @given(footprints(), footprints())
    def test_overlap_is_symmetric(self, first, second):
        forward = geo_score(first, second)
        backward = geo_score(second, first)
        assume(forward < 1.0 and backward < 1.0)
        assert forward * _mass(first) == pytest.approx(backward * _mass(second), rel=1e-9, abs=1e-15)



class TestGlobalScores:
    """Global score file."""

    def test_missing_file_is_all_zero(self, tmp_path):
        table = GlobalScoreTable.load(tmp_path / "none")
        assert len(table) == 0
        assert table.get(5) == 0.0

    def test_load(self, tmp_path):
        path = tmp_path / "pr.tsv"
        path.write_text("0\t0.5\n\n3\t0.25\n", encoding="utf-8")
        table = GlobalScoreTable.load(path)
        assert table.get(3) == 0.25
        assert table.get(1) == 0.0

    def test_out_of_range(self, tmp_path):
        path = tmp_path / "pr.tsv"
        path.write_text("0\t0.5\n1\t1.5\n", encoding="utf-8")
        with pytest.raises(GlobalScoreParseError) as excinfo:
            GlobalScoreTable.load(path)
        assert excinfo.value.line == 2


class TestCombined:
    """Weighted sum, scoring and ordering."""

    def test_weights(self):
        hit = combined_score(1, 2.0, 0.5, 0.25, ScoreWeights(w_text=1.0, w_geo=2.0, w_global=4.0))
        assert hit.combined == pytest.approx(4.0)

    def test_weights_must_not_all_be_zero(self):
        with pytest.raises(ValidationError):
            ScoreWeights(w_text=0, w_geo=0, w_global=0)

    def test_no_overlap_is_no_hit(self):
        query = Footprint.from_rect(Rect(0.2, 0.2, 0.4, 0.4))
        doc = Footprint.from_rect(Rect(0.5, 0.5, 0.6, 0.6))
        assert score_document(0, {"a": 1}, {"a": 1}, 10, 5, query, doc,
                              GlobalScoreTable(), ScoreWeights()) is None

    def test_top_k_ties_by_doc_id(self):
        hits = [ScoredHit(d, 0.0, 0.0, 0.0, c) for d, c in [(5, 1.0), (2, 1.0), (9, 2.0), (1, 0.5)]]
        assert [h.doc_id for h in top_k(hits, 3)] == [9, 2, 5]

    def test_top_k_needs_positive_k(self):
        with pytest.raises(ContractViolation):
            top_k([], 0)

    @staticmethod
    def _random_hits(seed, count=10_000):
        rng = np.random.default_rng(seed)
        doc_ids = rng.permutation(count).tolist()
        # few distinct component values, so many combined scores tie
        text = rng.integers(0, 8, size=count) / 4
        geo = rng.integers(1, 5, size=count) / 4
        global_ = rng.integers(0, 3, size=count) / 2
        return [(d, float(t), float(g), float(p)) for d, t, g, p in zip(doc_ids, text, geo, global_)]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_top_k_is_prefix_of_full_sort(self, seed):
        weights = ScoreWeights()
        hits = [combined_score(d, t, g, p, weights) for d, t, g, p in self._random_hits(seed)]
        expected = sorted(hits, key=lambda h: (-h.combined, h.doc_id))[:10]
        assert top_k(hits, 10) == expected

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(-8, 8),
           st.tuples(st.floats(0.1, 4.0), st.floats(0.1, 4.0), st.floats(0.1, 4.0)))
    def test_scaling_weights_keeps_order(self, seed, exponent, base):
        # power-of-two factors scale every sum exactly, ties included
        factor = 2.0 ** exponent
        plain = ScoreWeights(w_text=base[0], w_geo=base[1], w_global=base[2])
        scaled = ScoreWeights(w_text=base[0] * factor, w_geo=base[1] * factor, w_global=base[2] * factor)
        rows = self._random_hits(seed, count=2000)
        ranked = top_k((combined_score(d, t, g, p, plain) for d, t, g, p in rows), 10)
        rescaled = top_k((combined_score(d, t, g, p, scaled) for d, t, g, p in rows), 10)
        assert [h.doc_id for h in rescaled] == [h.doc_id for h in ranked]
