"""Shared test fixtures: a hand-written five-document index and the seeded 10k synthetic index."""
import pytest

from geosearch.artifacts import build_artifacts
from geosearch.base import load_settings
from geosearch.corpus import gen_synthetic
from geosearch.query_engine import GeoQueryEngine


TINY_CORPUS = [
    ("a.example", "Springfield yoga classes near central park"),
    ("a.example", "yoga retreat in Shelbyville"),
    ("b.example", "pizza in Springfield, open late"),
    ("b.example", "yoga studio schedule"),
    ("c.example", "Paris yoga and pizza"),
]

TINY_GAZETTEER = [
    ("springfield", "0.10 0.10 0.20 0.20", "city"),
    ("shelbyville", "0.60 0.60 0.70 0.70", "city"),
    ("paris", "0.40 0.40 0.45 0.45", "city"),
    ("paris", "0.80 0.10 0.85 0.15", "city"),
    ("central park", "0.12 0.12 0.14 0.14", "landmark"),
]


def write_tiny_inputs(directory):
    """Write the five-document corpus and its gazetteer; returns (corpus, gazetteer) paths."""
    directory.mkdir(parents=True, exist_ok=True)
    corpus = directory / "corpus.tsv"
    gazetteer = directory / "gazetteer.tsv"
    corpus.write_text("".join(f"{site}\t{text}\n" for site, text in TINY_CORPUS), encoding="utf-8")
    gazetteer.write_text("".join(f"{name}\t{rect}\t{kind}\n" for name, rect, kind in TINY_GAZETTEER),
                         encoding="utf-8")
    return corpus, gazetteer


@pytest.fixture
def tiny_inputs(tmp_path):
    """Corpus and gazetteer files of the five-document fixture."""
    return write_tiny_inputs(tmp_path / "inputs")


@pytest.fixture
def tiny_index(tmp_path, tiny_inputs):
    """Index directory built from the five-document fixture with default settings."""
    corpus, gazetteer = tiny_inputs
    out = tmp_path / "index"
    build_artifacts(corpus, gazetteer, out, load_settings())
    return out


@pytest.fixture
def tiny_engine(tiny_index):
    with GeoQueryEngine.open(tiny_index) as engine:
        yield engine


@pytest.fixture(scope="session")
def synthetic(tmp_path_factory):
    """Seeded synthetic data: 10,000 documents, 16 clusters, a 200-query trace."""
    return gen_synthetic(tmp_path_factory.mktemp("synthetic"), n_docs=10_000, seed=0, n_queries=200)


@pytest.fixture(scope="session")
def synthetic_index(tmp_path_factory, synthetic):
    """Index over the synthetic corpus with defaults (grid_bits=10, m=2, G=64 KiB)."""
    out = tmp_path_factory.mktemp("synthetic_index")
    build_artifacts(synthetic.corpus, synthetic.gazetteer, out, load_settings(), synthetic.global_scores)
    return out


@pytest.fixture(scope="session")
def synthetic_engine(synthetic_index):
    engine = GeoQueryEngine.open(synthetic_index, load_settings())
    yield engine
    engine.close()
