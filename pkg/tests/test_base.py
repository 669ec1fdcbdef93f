"""Tests for geometry, the I/O meter, the varint codec and settings."""
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from geosearch.base import (
    ContractViolation,
    CorruptionError,
    Footprint,
    IoCategory,
    IoMeter,
    MappedFile,
    Rect,
    Region,
    decode_varint,
    encode_varint,
    load_settings,
)


class TestRect:
    """Closed intersection, areas and parsing."""

    def test_touching_edges_intersect(self):
        assert Rect(0.0, 0.0, 0.5, 0.5).intersects(Rect(0.5, 0.5, 1.0, 1.0))

    def test_touching_edges_have_no_intersection_area(self):
        assert Rect(0.0, 0.0, 0.5, 0.5).intersection_area(Rect(0.5, 0.0, 1.0, 0.5)) == 0.0

    def test_intersection_area(self):
        area = Rect(0.0, 0.0, 0.5, 0.5).intersection_area(Rect(0.25, 0.25, 1.0, 1.0))
        assert area == pytest.approx(0.0625)

    def test_parse_and_format(self):
        rect = Rect.parse("0.1 0.2 0.3 0.4")
        assert rect == Rect(0.1, 0.2, 0.3, 0.4)
        assert Rect.parse(rect.format()) == rect

    def test_parse_rejects_wrong_arity(self):
        with pytest.raises(ValueError):
            Rect.parse("0.1 0.2 0.3")

    def test_parse_rejects_nan(self):
        with pytest.raises(ValueError):
            Rect.parse("nan 0.2 0.3 0.4")

    def test_validity(self):
        assert Rect(0.0, 0.0, 1.0, 1.0).is_valid
        assert not Rect(0.5, 0.0, 0.5, 1.0).is_valid, "zero width is not a valid region"
        assert not Rect(-0.1, 0.0, 0.5, 1.0).is_valid

    def test_bounding_of_nothing(self):
        with pytest.raises(ContractViolation):
            Rect.bounding([])


class TestFootprint:
    """Footprint construction rules."""

    def test_merged_keeps_max_certainty(self):
        r = Rect(0.1, 0.1, 0.2, 0.2)
        fp = Footprint.merged([Region(r, 0.3), Region(r, 0.9), Region(r, 0.5)])
        assert fp.regions == (Region(r, 0.9),)

    def test_merged_sorts_by_rect(self):
        a, b = Rect(0.5, 0.5, 0.6, 0.6), Rect(0.1, 0.1, 0.2, 0.2)
        fp = Footprint.merged([Region(a, 1.0), Region(b, 1.0)])
        assert [r.rect for r in fp.regions] == [b, a]

    def test_empty_footprint_rejected(self):
        with pytest.raises(ContractViolation):
            Footprint(())

    def test_certainty_out_of_range(self):
        with pytest.raises(ContractViolation):
            Footprint.from_rect(Rect(0.1, 0.1, 0.2, 0.2), certainty=0.0)

    def test_mbr(self):
        fp = Footprint.merged([Region(Rect(0.1, 0.1, 0.2, 0.2), 1.0), Region(Rect(0.5, 0.4, 0.6, 0.9), 1.0)])
        assert fp.mbr == Rect(0.1, 0.1, 0.6, 0.9)


class TestIoMeter:
    """Per-category accounting."""

    def test_charge_and_totals(self):
        meter = IoMeter()
        meter.charge(IoCategory.POSTINGS, 100, seeks=1)
        meter.charge(IoCategory.TOEPRINTS, 48, seeks=2)
        assert meter.total_bytes == 148
        assert meter.total_seeks == 3
        assert meter.as_dict()["toeprints_seeks"] == 2

    def test_merge(self):
        a, b = IoMeter(), IoMeter()
        a.charge(IoCategory.FOOTPRINTS, 10, seeks=1)
        b.charge(IoCategory.FOOTPRINTS, 5, seeks=1)
        a.merge(b)
        assert a.bytes_read[IoCategory.FOOTPRINTS] == 15
        assert a.seeks[IoCategory.FOOTPRINTS] == 2


class TestVarint:
    """LEB128-style varints."""

    @given(st.integers(min_value=0, max_value=2**63))
    def test_decode_inverts_encode(self, value):
        out = bytearray()
        encode_varint(value, out)
        assert decode_varint(bytes(out), 0) == (value, len(out))

    def test_small_values_take_one_byte(self):
        out = bytearray()
        encode_varint(127, out)
        assert bytes(out) == b"\x7f"
        out = bytearray()
        encode_varint(128, out)
        assert bytes(out) == b"\x80\x01"

    def test_negative_rejected(self):
        with pytest.raises(ContractViolation):
            encode_varint(-1, bytearray())

    def test_truncated(self):
        with pytest.raises(CorruptionError):
            decode_varint(b"\x80\x80", 0)


class TestMappedFile:
    """Bounds-checked reads."""

    def test_read_past_end(self, tmp_path):
        path = tmp_path / "blob"
        path.write_bytes(b"abcdef")
        mapped = MappedFile(path)
        try:
            assert mapped.read(1, 4) == b"bcd"
            with pytest.raises(CorruptionError):
                mapped.read(4, 10)
        finally:
            mapped.close()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty"
        path.write_bytes(b"")
        mapped = MappedFile(path)
        assert mapped.size == 0
        assert mapped.read(0, 0) == b""
        mapped.close()


class TestSettings:
    """Environment and explicit overrides."""

    def test_defaults(self):
        settings = load_settings()
        assert settings.grid_bits == 10
        assert settings.intervals_per_tile == 2
        assert settings.k_sweeps == 4
        assert settings.gap_bytes == 65536
        assert settings.seek_cost == 524288

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("GEOSEARCH_K_SWEEPS", "8")
        monkeypatch.setenv("GEOSEARCH_CURVE", "hilbert")
        settings = load_settings()
        assert settings.k_sweeps == 8
        assert settings.curve.value == "hilbert"

    def test_explicit_beats_env(self, monkeypatch):
        monkeypatch.setenv("GEOSEARCH_K_SWEEPS", "8")
        assert load_settings(k_sweeps=6).k_sweeps == 6

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValidationError):
            load_settings(w_text=0, w_geo=0, w_global=0)

    def test_grid_bits_bounds(self):
        with pytest.raises(ValidationError):
            load_settings(grid_bits=16)

    def test_intervals_per_tile_fits_grid_header(self):
        assert load_settings(intervals_per_tile=65535).intervals_per_tile == 65535
        with pytest.raises(ValidationError):
            load_settings(intervals_per_tile=70000)
        with pytest.raises(ValidationError):
            load_settings(intervals_per_tile=0)
