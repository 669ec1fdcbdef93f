# geosearch/artifacts.py
"""
Index manifest and the staged, atomic build pipeline.

The manifest is a plain-text key=value file written last; an index directory
without one is not an index. File paths in it are relative to the directory.
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, TypeVar, Union

import httpx

from geosearch.base import (
    FORMAT_VERSION,
    BuildStageError,
    CollectionStats,
    CurveKind,
    EngineSettings,
    GeoSearchError,
    ManifestError,
    PathLike,
    resolve_settings,
)
from geosearch.corpus import ingest
from geosearch.footprint_store import FOOTPRINTS_FILE, FOOTPRINTS_INDEX_FILE, write_store
from geosearch.geocoder import geocode_collection, is_url, load_gazetteer
from geosearch.inverted_index import DOCLENS_FILE, LEXICON_FILE, POSTINGS_FILE, build_index
from geosearch.ranking import GlobalScoreTable
from geosearch.spatial_index import (
    GRID_FILE,
    TOEPRINTS_FILE,
    assign_toeprints,
    build_grid,
    build_mbr_tree,
    write_toeprints,
)

logger = logging.getLogger(__name__)

# settings that shape footprints; the oracle geocodes again with the same values
GEOCODER_FIELDS = ("base_certainty", "anchored_certainty", "leading_window",
                   "propagation_factor", "site_threshold")

MANIFEST_FILE = "manifest"
GLOBAL_SCORES_FILE = "global_scores"

INDEX_FILES = {
    "lexicon": LEXICON_FILE,
    "postings": POSTINGS_FILE,
    "doclens": DOCLENS_FILE,
    "footprints": FOOTPRINTS_FILE,
    "footprints_index": FOOTPRINTS_INDEX_FILE,
    "toeprints": TOEPRINTS_FILE,
    "grid": GRID_FILE,
}

T = TypeVar("T")


@dataclass(frozen=True)
class IndexManifest:
    directory: Path
    files: Dict[str, str]
    grid_bits: int
    m: int
    gap_bytes: float
    curve: CurveKind
    stats: CollectionStats
    footprint_count: int
    toeprint_count: int
    source_corpus: str = ""
    source_gazetteer: str = ""
    geocoder: Dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    extra: Dict[str, str] = field(default_factory=dict)

    def path(self, role: str) -> Path:
        if role not in self.files:
            raise ManifestError(f"index at {self.directory} has no '{role}' file")
        return self.directory / self.files[role]

    def has(self, role: str) -> bool:
        return role in self.files

    def to_text(self) -> str:
        values = {
            "format_version": str(self.format_version),
            "grid_bits": str(self.grid_bits),
            "m": str(self.m),
            "gap_bytes": repr(float(self.gap_bytes)),
            "curve": self.curve.value,
            "docs": str(self.stats.n),
            "vocab_size": str(self.stats.vocab_size),
            "total_tokens": str(self.stats.total_tokens),
            "footprints": str(self.footprint_count),
            "toeprints": str(self.toeprint_count),
            "source.corpus": self.source_corpus,
            "source.gazetteer": self.source_gazetteer,
        }
        values.update({f"geocode.{name}": value for name, value in sorted(self.geocoder.items())})
        values.update({f"file.{role}": name for role, name in sorted(self.files.items())})
        values.update(self.extra)
        return "".join(f"{key}={value}\n" for key, value in values.items())

    def write(self) -> Path:
        target = self.directory / MANIFEST_FILE
        target.write_text(self.to_text(), encoding="utf-8")
        return target

    @classmethod
    def read(cls, directory: PathLike) -> IndexManifest:
        directory = Path(directory)
        source = directory / MANIFEST_FILE
        if not source.is_file():
            raise ManifestError(f"{directory} holds no index manifest")
        values: Dict[str, str] = {}
        for lineno, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ManifestError(f"{source}:{lineno}: expected key=value")
            values[key.strip()] = value.strip()

        try:
            version = int(values.pop("format_version"))
            if version != FORMAT_VERSION:
                raise ManifestError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
            files = {k[len("file."):]: values.pop(k) for k in list(values) if k.startswith("file.")}
            manifest = cls(
                directory=directory,
                files=files,
                grid_bits=int(values.pop("grid_bits")),
                m=int(values.pop("m")),
                gap_bytes=float(values.pop("gap_bytes")),
                curve=CurveKind(values.pop("curve")),
                stats=CollectionStats(int(values.pop("docs")), int(values.pop("vocab_size")),
                                      int(values.pop("total_tokens"))),
                footprint_count=int(values.pop("footprints")),
                toeprint_count=int(values.pop("toeprints")),
                source_corpus=values.pop("source.corpus", ""),
                source_gazetteer=values.pop("source.gazetteer", ""),
                geocoder={k[len("geocode."):]: values.pop(k) for k in list(values) if k.startswith("geocode.")},
                format_version=version,
                extra=values,
            )
        except KeyError as e:
            raise ManifestError(f"{source}: missing key {e}") from e
        except ValueError as e:
            if isinstance(e, ManifestError):
                raise
            raise ManifestError(f"{source}: {e}") from e

        missing = [role for role in INDEX_FILES if role not in files]
        if missing:
            raise ManifestError(f"{source}: no entry for {', '.join(missing)}")
        for role, name in files.items():
            if not (directory / name).is_file():
                raise ManifestError(f"{source}: {role} file '{name}' does not exist")
        return manifest


def _stage(name: str, fn: Callable[..., T], *args, **kwargs) -> T:
    logger.info("build stage: %s", name)
    try:
        return fn(*args, **kwargs)
    except (GeoSearchError, OSError, ValueError, httpx.HTTPError) as e:
        raise BuildStageError(name, e) from e


def build_artifacts(
    corpus: PathLike,
    gazetteer: Union[str, Path],
    out_dir: PathLike,
    settings: Optional[EngineSettings] = None,
    global_scores: Optional[PathLike] = None,
) -> IndexManifest:
    """Run every build stage into a staging directory, then publish.

    Stages: ingest, geocode, index, footprints, toeprints, grid, mbr_tree.
    On failure the staging directory is removed and no manifest is written.
    """
    settings = resolve_settings(settings)
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".geosearch-build-", dir=out.parent))
    try:
        collection = _stage("ingest", ingest, corpus)
        gaz = _stage("gazetteer", load_gazetteer, gazetteer)
        footprints = _stage("geocode", geocode_collection, collection, gaz, settings)
        stats = _stage("index", build_index, collection, staging, settings)
        _stage("footprints", write_store, footprints, staging)
        toeprints = _stage("toeprints", assign_toeprints, footprints, settings.grid_bits, settings.curve)
        _stage("toeprints", write_toeprints, toeprints, staging / TOEPRINTS_FILE)
        grid = _stage("grid", build_grid, toeprints, settings.intervals_per_tile, settings.grid_bits)
        grid_bytes = _stage("grid", grid.write, staging / GRID_FILE)
        tree = _stage("mbr_tree", build_mbr_tree, footprints)

        files = dict(INDEX_FILES)
        if global_scores is not None:
            table = _stage("global_scores", GlobalScoreTable.load, global_scores)
            _stage("global_scores", table.write, staging / GLOBAL_SCORES_FILE)
            files["global_scores"] = GLOBAL_SCORES_FILE

        out.mkdir(parents=True, exist_ok=True)
        (out / MANIFEST_FILE).unlink(missing_ok=True)
        for name in files.values():
            os.replace(staging / name, out / name)
        manifest = IndexManifest(
            directory=out,
            files=files,
            grid_bits=settings.grid_bits,
            m=settings.intervals_per_tile,
            gap_bytes=settings.gap_bytes,
            curve=settings.curve,
            stats=stats,
            footprint_count=len(footprints),
            toeprint_count=len(toeprints),
            source_corpus=str(Path(corpus).resolve()),
            source_gazetteer=str(gazetteer) if is_url(gazetteer) else str(Path(gazetteer).resolve()),
            geocoder={name: repr(getattr(settings, name)) for name in GEOCODER_FIELDS},
            extra={"grid_bytes": str(grid_bytes), "mbr_entries": str(len(tree))},
        )
        manifest.write()
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    logger.info("index written to %s: %d docs, %d footprints, %d toeprints",
                out, stats.n, len(footprints), len(toeprints))
    return manifest
