"""Tests for the postings codec, index build and DAAT traversal."""
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geosearch.base import ContractViolation, IndexNotOpenError, IoCategory, IoMeter, load_settings
from geosearch.corpus import Collection, ingest, tokenize
from geosearch.inverted_index import (
    InvertedIndex,
    Posting,
    build_index,
    decode_postings,
    encode_postings,
)


@st.composite
def posting_lists(draw):
    doc_ids = sorted(draw(st.sets(st.integers(min_value=0, max_value=10**6), min_size=1, max_size=50)))
    postings = []
    for doc_id in doc_ids:
        positions = sorted(draw(st.sets(st.integers(min_value=0, max_value=5000), min_size=1, max_size=5)))
        postings.append(Posting(doc_id, len(positions), tuple(positions)))
    return postings


class TestPostingsCodec:
    """Delta + varint encoding."""

    @given(posting_lists())
    def test_decode_inverts_encode(self, postings):
        data = encode_postings(postings, with_positions=True)
        assert decode_postings(data, with_positions=True) == postings

    def test_first_id_absolute_then_gaps(self):
        data = encode_postings([Posting(5, 1), Posting(7, 2)])
        assert data == bytes([5, 1, 2, 2])

    def test_unsorted_rejected(self):
        with pytest.raises(ContractViolation):
            encode_postings([Posting(7, 1), Posting(5, 1)])

    def test_posting_freq_must_match_positions(self):
        with pytest.raises(ContractViolation):
            Posting(1, 2, (4,))


class TestBuildIndex:
    """Build and reopen."""

    def test_tiny_index(self, tiny_index):
        with InvertedIndex(tiny_index) as index:
            assert index.stats.n == 5
            assert index.doc_freq("yoga") == 4
            assert [p.doc_id for p in index.postings("yoga")] == [0, 1, 3, 4]
            assert index.postings("springfield")[0].positions == (0,)
            assert index.doc_length(0) == 6
            assert index.doc_freq("unknown") == 0

    def test_empty_collection_rejected(self, tmp_path):
        with pytest.raises(ContractViolation):
            build_index(Collection.from_documents([]), tmp_path)

    def test_without_positions(self, tmp_path):
        collection = Collection.from_documents([("s", "a b a"), ("s", "b c")])
        build_index(collection, tmp_path, load_settings(store_positions=False))
        with InvertedIndex(tmp_path) as index:
            assert not index.positions_stored
            assert index.postings("a") == [Posting(0, 2)]

    def test_not_open(self, tiny_index):
        with pytest.raises(IndexNotOpenError):
            InvertedIndex(tiny_index).doc_freq("yoga")


class TestTraversal:
    """Conjunctive DAAT and candidate filtering."""

    def test_conjunction(self, tiny_index):
        with InvertedIndex(tiny_index) as index:
            assert [d for d, _ in index.daat_stream(["yoga", "pizza"])] == [4]
            assert list(index.daat_stream(["yoga", "unicorn"])) == []

    def test_freqs_reported(self, tmp_path):
        build_index(Collection.from_documents([("s", "x y x"), ("s", "x")]), tmp_path)
        with InvertedIndex(tmp_path) as index:
            assert list(index.daat_stream(["x", "y"])) == [(0, {"x": 2, "y": 1})]

    def test_filter_docids(self, tiny_index):
        with InvertedIndex(tiny_index) as index:
            assert index.filter_docids([0, 2, 4], ["yoga"]) == [0, 4]
            assert index.filter_docids([], ["yoga"]) == []

    def test_filter_requires_ascending(self, tiny_index):
        with InvertedIndex(tiny_index) as index:
            with pytest.raises(ContractViolation):
                index.filter_docids([4, 0], ["yoga"])

    def test_empty_terms_rejected(self, tiny_index):
        with InvertedIndex(tiny_index) as index:
            with pytest.raises(ContractViolation):
                list(index.daat_stream([]))

    def test_skipping_reads_fewer_blocks(self, tmp_path):
        docs = [("s", "common" + (" rare" if i == 995 else "")) for i in range(1000)]
        build_index(Collection.from_documents(docs), tmp_path, load_settings(block_size=16))
        with InvertedIndex(tmp_path) as index:
            full = IoMeter()
            assert len(list(index.daat_stream(["common"], full))) == 1000
            skipped = IoMeter()
            assert [d for d, _ in index.daat_stream(["common", "rare"], skipped)] == [995]
            assert skipped.bytes_read[IoCategory.POSTINGS] < full.bytes_read[IoCategory.POSTINGS] / 4
            assert skipped.seeks[IoCategory.POSTINGS] == 2

    def test_matches_naive_intersection(self, synthetic_engine):
        index = synthetic_engine.index
        for terms in (["w1", "w2"], ["w3", "w40", "w7"], ["w90"]):
            expected = set.intersection(*(set(p.doc_id for p in index.postings(t)) for t in terms))
            assert [d for d, _ in index.daat_stream(terms)] == sorted(expected)

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(["w2", "w9", "w30", "w4"]), st.integers(1, 4))
    def test_term_order_does_not_matter(self, synthetic_engine, terms, count):
        index = synthetic_engine.index
        chosen = terms[:count]
        assert list(index.daat_stream(chosen)) == list(index.daat_stream(sorted(chosen)))
        assert list(index.daat_stream(chosen + chosen[:1])) == list(index.daat_stream(chosen))


class TestAgainstRawCorpus:
    """Index answers compared with a scan of the corpus file itself."""

    @pytest.fixture(scope="class")
    def raw_terms(self, synthetic):
        return [set(tokenize(record.text)) for record in ingest(synthetic.corpus).records]

    def test_doc_freq_of_every_term(self, synthetic_engine, raw_terms):
        counts = Counter(term for terms in raw_terms for term in terms)
        index = synthetic_engine.index
        assert set(index.terms()) == set(counts)
        for term, count in counts.items():
            assert index.doc_freq(term) == count, term

    @pytest.mark.parametrize("terms", [["w1"], ["w1", "w5"], ["w3", "w20", "w8"], ["w200"]])
    def test_filter_random_subset(self, synthetic_engine, raw_terms, terms):
        rng = np.random.default_rng(len(terms))
        n = len(raw_terms)
        candidates = sorted(int(d) for d in rng.choice(n, size=n // 20, replace=False))
        expected = [d for d in candidates if set(terms) <= raw_terms[d]]
        assert synthetic_engine.index.filter_docids(candidates, terms) == expected
