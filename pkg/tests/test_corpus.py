"""Tests for tokenization, corpus ingestion, traces and synthetic data."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geosearch.base import ContractViolation, CorpusParseError, Rect, TraceParseError
from geosearch.corpus import (
    CLUSTER_RADIUS,
    SYNTHETIC_FILES,
    Collection,
    TraceQuery,
    gen_query_trace,
    gen_synthetic,
    ingest,
    read_trace,
    tokenize,
    write_corpus,
    write_trace,
    zipf_probabilities,
)


class TestTokenize:
    """Maximal alphanumeric runs, lowercased."""

    def test_punctuation_and_underscore_split(self):
        assert tokenize("Hello, World_2!") == ["hello", "world", "2"]

    def test_unicode_letters(self):
        assert tokenize("Déjà-vu in Zürich") == ["déjà", "vu", "in", "zürich"]

    def test_dotted_capital_i_stays_one_character(self):
        assert tokenize("İstanbul") == ["istanbul"]

    def test_empty(self):
        assert tokenize("  --  ") == []

    @settings(max_examples=300, deadline=None)
    @given(st.text())
    def test_retokenizing_is_identity(self, text):
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens


class TestIngest:
    """Corpus file parsing."""

    def test_implicit_ids(self, tiny_inputs):
        corpus, _ = tiny_inputs
        collection = ingest(corpus)
        assert len(collection) == 5
        assert collection[2].site_key == "b.example"
        assert collection[0].length == 6
        assert collection.stats.n == 5

    def test_explicit_ids(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("1\tsite\tsecond doc\n0\tsite\tfirst doc\n", encoding="utf-8")
        collection = ingest(path)
        assert collection[0].text == "first doc"
        assert collection[1].text == "second doc"

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("0\tsite\ta\n0\tsite\tb\n", encoding="utf-8")
        with pytest.raises(CorpusParseError) as excinfo:
            ingest(path)
        assert excinfo.value.line == 2

    def test_sparse_ids(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("0\tsite\ta\n5\tsite\tb\n", encoding="utf-8")
        with pytest.raises(CorpusParseError):
            ingest(path)

    def test_invalid_utf8_names_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_bytes(b"site\tfine\nsite\tbad \xff byte\n")
        with pytest.raises(CorpusParseError) as excinfo:
            ingest(path)
        assert excinfo.value.line == 2

    def test_missing_tab(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("no tab here\n", encoding="utf-8")
        with pytest.raises(CorpusParseError):
            ingest(path)

    def test_digit_site_key_keeps_tabs_in_text(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("shop.example\tfirst doc\n42\tfoo\tbar\n", encoding="utf-8")
        collection = ingest(path)
        assert len(collection) == 2
        assert collection[1].site_key == "42"
        assert collection[1].text == "foo\tbar"

    def test_explicit_file_rejects_implicit_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        path.write_text("0\tsite\tfirst doc\nsite\tsecond doc\n", encoding="utf-8")
        with pytest.raises(CorpusParseError) as excinfo:
            ingest(path)
        assert excinfo.value.line == 2

    def test_written_corpus_keeps_ambiguous_first_line(self, tmp_path):
        path = tmp_path / "c.tsv"
        documents = [("7", "foo\tbar"), ("shop.example", "yoga")]
        write_corpus(documents, path)
        collection = ingest(path)
        assert [(r.site_key, r.text) for r in collection.records] == documents

    def test_document_without_tokens(self):
        collection = Collection.from_documents([("s", "...")])
        assert collection[0].length == 0


class TestTrace:
    """Trace format."""

    def test_parse(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("Yoga classes\t0.1 0.1 0.2 0.2\n\nyoga\t0 0 1 1\n", encoding="utf-8")
        queries = read_trace(path)
        assert [q.terms for q in queries] == [("yoga", "classes"), ("yoga",)]
        assert queries[1].line == 3

    def test_bad_rect_names_line(self, tmp_path):
        path = tmp_path / "t.tsv"
        path.write_text("yoga\t0.1 0.1 0.2 0.2\nyoga\t0.5 0.5 0.4 0.9\n", encoding="utf-8")
        with pytest.raises(TraceParseError) as excinfo:
            read_trace(path)
        assert excinfo.value.line == 2

    def test_written_trace_reads_back(self, tmp_path):
        path = tmp_path / "t.tsv"
        original = [TraceQuery(("a", "b"), Rect(0.1, 0.2, 0.3, 0.4))]
        write_trace(original, path)
        assert read_trace(path)[0].rect == original[0].rect


class TestQueryTrace:
    """Generated query traces."""

    def test_areas_within_bounds(self):
        rng = np.random.default_rng(3)
        vocabulary = [f"w{i}" for i in range(1, 101)]
        queries = gen_query_trace(rng, vocabulary, 300, placement="uniform", max_area=0.01)
        for q in queries:
            assert q.rect.is_valid
            assert q.rect.area <= 0.01 + 1e-9
            assert q.rect.area >= 1e-4 * 0.99
            assert set(q.terms) <= set(vocabulary[:10]), "default pool is the top decile"

    def test_cluster_placement_needs_centers(self):
        with pytest.raises(ContractViolation):
            gen_query_trace(np.random.default_rng(0), ["a"], 5, placement="cluster")


class TestSynthetic:
    """Seeded generator."""

    def test_zipf_normalized(self):
        p = zipf_probabilities(1000, 1.0)
        assert p.sum() == pytest.approx(1.0)
        assert p[0] > p[1] > p[-1]

    def test_same_seed_same_bytes(self, tmp_path):
        a = gen_synthetic(tmp_path / "a", n_docs=200, n_clusters=4, seed=11, n_queries=20)
        b = gen_synthetic(tmp_path / "b", n_docs=200, n_clusters=4, seed=11, n_queries=20)
        for name in SYNTHETIC_FILES.values():
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert a.cluster_centers == b.cluster_centers

    def test_different_seed_differs(self, tmp_path):
        gen_synthetic(tmp_path / "a", n_docs=100, n_clusters=2, seed=1, n_queries=5)
        gen_synthetic(tmp_path / "b", n_docs=100, n_clusters=2, seed=2, n_queries=5)
        assert (tmp_path / "a" / "corpus.tsv").read_bytes() != (tmp_path / "b" / "corpus.tsv").read_bytes()

    def test_files_parse(self, tmp_path):
        artifacts = gen_synthetic(tmp_path, n_docs=150, n_clusters=3, seed=5, n_queries=10)
        assert len(ingest(artifacts.corpus)) == 150
        assert len(read_trace(artifacts.trace)) == 10
        # every cluster has a district and a shared ambiguous name
        assert any(p.kind == "district" for p in artifacts.places)
        assert sum(p.name == "twin0" for p in artifacts.places) == 2

    def test_zipf_rank_ratio_in_generated_text(self, tmp_path):
        artifacts = gen_synthetic(tmp_path, n_docs=3000, vocab_size=1000, zipf_s=1.0, n_clusters=4,
                                  seed=2, n_queries=0)
        counts = {"w1": 0, "w10": 0}
        for record in ingest(artifacts.corpus).records:
            for token in tokenize(record.text):
                if token in counts:
                    counts[token] += 1
        assert counts["w1"] / counts["w10"] == pytest.approx(10.0, rel=0.2)

    def test_single_cluster_places_stay_within_radius(self, tmp_path):
        artifacts = gen_synthetic(tmp_path, n_docs=100, n_clusters=1, seed=9, n_queries=0)
        (cx, cy), = artifacts.cluster_centers
        assert {p.cluster for p in artifacts.places} == {0}
        for place in artifacts.places:
            r = place.rect
            assert cx - CLUSTER_RADIUS - 1e-6 <= r.xmin <= r.xmax <= cx + CLUSTER_RADIUS + 1e-6, place.name
            assert cy - CLUSTER_RADIUS - 1e-6 <= r.ymin <= r.ymax <= cy + CLUSTER_RADIUS + 1e-6, place.name
