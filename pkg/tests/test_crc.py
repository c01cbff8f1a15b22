"""Checksum behavior against an independent bit-level reference.

The reference below implements reflected CRC-32 (polynomial 0xEDB88320,
init and final XOR 0xFFFFFFFF) one bit at a time, sharing no code with
the implementation under test.
"""

import io

import pytest
from hypothesis import given, strategies as st

from samforge.transfer import crc32_bytes, crc32_file, crc32_stream


def reference_crc32(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xEDB88320
            else:
                crc >>= 1
    return crc ^ 0xFFFFFFFF


def test_empty_vector():
    assert reference_crc32(b"") == 0x00000000
    assert crc32_bytes(b"") == 0x00000000


def test_check_vector():
    # the standard CRC-32 check value
    assert reference_crc32(b"123456789") == 0xCBF43926
    assert crc32_bytes(b"123456789") == 0xCBF43926


@pytest.mark.parametrize("data", [b"\x00", b"\xff" * 32, b"abc", bytes(range(256))])
def test_matches_reference(data):
    assert crc32_bytes(data) == reference_crc32(data)


@given(st.binary(max_size=512))
def test_matches_reference_any_input(data):
    assert crc32_bytes(data) == reference_crc32(data)


@given(st.binary(min_size=1, max_size=256), st.data())
def test_single_byte_change_changes_crc(data, draw):
    pos = draw.draw(st.integers(min_value=0, max_value=len(data) - 1))
    flipped = bytearray(data)
    flipped[pos] ^= 0xFF
    assert crc32_bytes(bytes(flipped)) != crc32_bytes(data)


def test_stream_matches_bytes_across_chunk_sizes():
    data = bytes(i % 251 for i in range(300_000))  # spans several 64 KiB chunks
    assert crc32_stream(io.BytesIO(data)) == crc32_bytes(data)


def test_file_checksum(tmp_path):
    path = tmp_path / "blob"
    path.write_bytes(b"123456789")
    assert crc32_file(path) == 0xCBF43926
