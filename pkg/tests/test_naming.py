"""Naming convention parser: canonical names, violations, round trips."""

import pytest
from hypothesis import given, strategies as st

from samforge.errors import RangeError
from samforge.naming import (
    ConventionViolation,
    LegacyNameParts,
    format_legacy_name,
    parse_legacy_name,
    tier_from_extension,
)


def test_parses_canonical_name():
    parts = parse_legacy_name("bphy0412_fs0007_0042.raw")
    assert parts == LegacyNameParts(
        stream="b",
        event_type="phy",
        program_version=4,
        calibration_set=12,
        fileset_number=7,
        sequence=42,
        data_tier="raw",
    )
    assert parts.dataset_id == "bphy0412"


@pytest.mark.parametrize("name,token", [
    ("1phy0412_fs0007_0042.raw", "stream"),
    ("bPHY0412_fs0007_0042.raw", "event_type"),
    ("bphyxx12_fs0007_0042.raw", "program_version"),
    ("bphy04xx_fs0007_0042.raw", "calibration_set"),
    ("bphy04123_fs0007_0042.raw", "prefix"),
    ("bphy0412_fs07_0042.raw", "fileset"),
    ("bphy0412_0007_0042.raw", "fileset"),
    ("bphy0412_fs0007-0042.raw", "sequence"),
    ("bphy0412_fs0007_042.raw", "sequence"),
    ("bphy0412_fs0007_0042", "data_tier"),
    ("bphy0412_fs0007_0042.xyz", "data_tier"),
    ("oops.raw", "fileset"),
    ("", "fileset"),
])
def test_violations_name_the_failing_token(name, token):
    result = parse_legacy_name(name)
    assert isinstance(result, ConventionViolation)
    assert result.token == token
    assert result.name == name
    assert result.reason


def test_parse_never_raises_on_junk():
    for name in ("", " ", "_fs", "_fs____", "a_fs0000_0000.", "\x00\xff_fs"):
        parse_legacy_name(name)  # any return is fine; raising is not


parts_strategy = st.builds(
    LegacyNameParts,
    stream=st.text("abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=1),
    event_type=st.text("abcdefghijklmnopqrstuvwxyz", min_size=3, max_size=3),
    program_version=st.integers(0, 99),
    calibration_set=st.integers(0, 99),
    fileset_number=st.integers(0, 9999),
    sequence=st.integers(0, 9999),
    data_tier=st.sampled_from(["raw", "prd", "ntp"]),
)


@given(parts_strategy)
def test_format_parse_round_trip(parts):
    assert parse_legacy_name(format_legacy_name(parts)) == parts


@given(st.text(max_size=40))
def test_parse_format_round_trip_on_arbitrary_text(name):
    parsed = parse_legacy_name(name)
    if isinstance(parsed, LegacyNameParts):
        assert format_legacy_name(parsed) == name


@pytest.mark.parametrize("bad", [
    dict(stream="bb"),
    dict(stream="B"),
    dict(event_type="ph"),
    dict(program_version=100),
    dict(calibration_set=-1),
    dict(fileset_number=10000),
    dict(sequence=-1),
    dict(data_tier="root"),
])
def test_format_rejects_out_of_range_fields(bad):
    base = dict(stream="b", event_type="phy", program_version=4, calibration_set=12,
                fileset_number=7, sequence=42, data_tier="raw")
    base.update(bad)
    with pytest.raises(RangeError):
        format_legacy_name(LegacyNameParts(**base))


def test_tier_from_extension():
    assert tier_from_extension("whatever.raw") == "raw"
    assert tier_from_extension("a.b.ntp") == "ntp"
    assert tier_from_extension("noext") is None
    assert tier_from_extension("trailingdot.") is None
    assert tier_from_extension("wrong.root") is None
