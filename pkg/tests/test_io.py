import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from searchmorph import io


def test_tnsr_layout(tmp_path):
    path = tmp_path / "a.tnsr"
    io.save_tnsr(path, np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"TNSR"
    assert struct.unpack("<III", raw[4:16]) == (2, 2, 3)
    assert np.frombuffer(raw[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tnsr_roundtrip(arr):
    data, end = io.tnsr_from_buffer(io.tnsr_bytes(arr))
    assert end == len(io.tnsr_bytes(arr))
    np.testing.assert_array_equal(data, arr)


def test_tnsr_truncated(tmp_path):
    path = tmp_path / "bad.tnsr"
    path.write_bytes(io.tnsr_bytes(np.zeros((4, 4)))[:-3])
    with pytest.raises(io.FormatError, match="64 bytes, found 61"):
        io.load_tnsr(path)


def test_tnsr_bad_magic(tmp_path):
    path = tmp_path / "bad.tnsr"
    path.write_bytes(b"XXXX" + b"\0" * 8)
    with pytest.raises(io.FormatError):
        io.load_tnsr(path)


def test_smck_roundtrip(tmp_path):
    entries = {"b.weight": np.ones((2, 3)), "a": np.arange(4.0), "ütf": np.zeros(())}
    path = tmp_path / "x.smck"
    io.write_entries(path, entries)
    back = io.read_entries(path)
    assert list(back) == list(entries)
    for k in entries:
        np.testing.assert_array_equal(back[k], entries[k])
    assert path.read_bytes()[:12] == b"SMCK" + struct.pack("<II", 1, 3)


def test_smck_rejects_other_files(tmp_path):
    path = tmp_path / "x.smck"
    path.write_bytes(b"NOPE")
    with pytest.raises(io.FormatError):
        io.read_entries(path)
    path.write_bytes(b"SMCK" + struct.pack("<II", 9, 0))
    with pytest.raises(io.FormatError, match="version 9"):
        io.read_entries(path)


def test_text_roundtrip():
    assert io.array_to_text(io.text_to_array("radius = 3\n# é")) == "radius = 3\n# é"


def _pgm(path, w, h, payload, maxval=255, comment=False):
    head = f"P5\n{'# made by hand' + chr(10) if comment else ''}{w} {h}\n{maxval}\n"
    path.write_bytes(head.encode() + bytes(payload))


def test_pgm_scaling(tmp_path):
    path = tmp_path / "a.pgm"
    _pgm(path, 2, 2, [0, 255, 128, 64], comment=True)
    img, pad = io.load_pgm(path, multiple=2)
    np.testing.assert_allclose(img.data[0], [[0, 1.0], [0.50196, 0.25098]], atol=1e-5)
    assert pad == (0, 0, 0, 0)


def test_pgm_padding(tmp_path):
    path = tmp_path / "a.pgm"
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(158, 158), dtype=np.uint8)
    io.write_pgm(path, raw)
    img, pad = io.load_pgm(path)
    assert img.shape == (1, 160, 160)
    assert pad == (0, 2, 0, 2)
    np.testing.assert_array_equal(img.data[0, 158:, :158], np.repeat(img.data[0, 157:158, :158], 2, 0))
    np.testing.assert_array_equal(io.unpad(img.data, pad)[0], raw / np.float32(255.0))


def test_echo_size_needs_no_padding(tmp_path):
    path = tmp_path / "a.pgm"
    io.write_pgm(path, np.zeros((160, 160), np.uint8))
    img, pad = io.load_pgm(path)
    assert img.shape == (1, 160, 160) and pad == (0, 0, 0, 0)


def test_pgm_errors(tmp_path):
    path = tmp_path / "a.pgm"
    _pgm(path, 4, 4, [1] * 10)
    with pytest.raises(io.FormatError, match="expected 16 bytes, got 10"):
        io.read_pgm(path)
    _pgm(path, 2, 2, [0] * 8, maxval=65535)
    with pytest.raises(io.FormatError, match="16-bit"):
        io.read_pgm(path)
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(io.FormatError, match="P5"):
        io.read_pgm(path)
    path.write_bytes(b"P5\n2")
    with pytest.raises(io.FormatError):
        io.read_pgm(path)


def test_mask_labels(tmp_path):
    path = tmp_path / "m.pgm"
    io.write_pgm(path, np.array([[0, 1, 2]], np.uint8))
    mask, pad = io.load_mask(path)
    assert mask.shape == (4, 4) and pad == (0, 3, 0, 1)
    assert mask.dtype.kind == "i"
    assert mask[0].tolist() == [0, 1, 2, 2]
