import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modbias import idx
from modbias.errors import BadMagic, DimMismatch, Truncated


def _encode(array):
    array = np.asarray(array, dtype=np.uint8)
    head = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
    dims = b"".join(struct.pack(">I", d) for d in array.shape)
    return head + dims + array.tobytes()


def test_parse_hand_built_matrix():
    a = np.arange(6, dtype=np.uint8).reshape(2, 3)
    out = idx.parse_idx(_encode(a))
    assert np.array_equal(out, a)
    assert out.dtype == np.uint8


def test_round_trip_via_file(tmp_path):
    a = np.random.default_rng(0).integers(0, 256, size=(4, 28, 28)).astype(np.uint8)
    path = tmp_path / "imgs"
    idx.write_idx(a, str(path))
    assert np.array_equal(idx.parse_idx(str(path)), a)


def test_dims_are_big_endian():
    # 2 rows x 3 cols: a little-endian reader would see absurd dims
    raw = _encode(np.zeros((2, 3), dtype=np.uint8))
    assert raw[4:8] == b"\x00\x00\x00\x02"
    assert raw[8:12] == b"\x00\x00\x00\x03"


def test_bad_magic_nonzero_prefix():
    raw = bytearray(_encode(np.zeros(3, dtype=np.uint8)))
    raw[0] = 1
    with pytest.raises(BadMagic):
        idx.parse_idx(bytes(raw))


def test_bad_magic_wrong_dtype_code():
    raw = bytearray(_encode(np.zeros(3, dtype=np.uint8)))
    raw[2] = 0x0D  # float dtype code
    with pytest.raises(BadMagic):
        idx.parse_idx(bytes(raw))


def test_bad_magic_rank_out_of_range():
    raw = bytearray(_encode(np.zeros(3, dtype=np.uint8)))
    raw[3] = 4
    with pytest.raises(BadMagic):
        idx.parse_idx(bytes(raw))


def test_truncated_payload():
    raw = _encode(np.zeros((2, 3), dtype=np.uint8))
    with pytest.raises(Truncated):
        idx.parse_idx(raw[:-1])


def test_truncated_header():
    with pytest.raises(Truncated):
        idx.parse_idx(b"\x00\x00\x08")


def test_load_pair(tmp_path):
    rng = np.random.default_rng(1)
    imgs = rng.integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, size=5).astype(np.uint8)
    ip, lp = tmp_path / "i", tmp_path / "l"
    idx.write_idx(imgs, str(ip))
    idx.write_idx(labels, str(lp))
    x, y = idx.load_pair(str(ip), str(lp))
    assert x.shape == (5, 28, 28) and x.dtype == np.float64
    assert x.max() <= 1.0 and x.min() >= 0.0
    assert np.array_equal(y, labels)
    assert np.abs(x - imgs / 255.0).max() == 0.0


def test_load_pair_count_mismatch(tmp_path):
    idx.write_idx(np.zeros((5, 28, 28), dtype=np.uint8), str(tmp_path / "i"))
    idx.write_idx(np.zeros(4, dtype=np.uint8), str(tmp_path / "l"))
    with pytest.raises(DimMismatch):
        idx.load_pair(str(tmp_path / "i"), str(tmp_path / "l"))


def test_load_pair_wrong_image_size(tmp_path):
    idx.write_idx(np.zeros((2, 14, 14), dtype=np.uint8), str(tmp_path / "i"))
    idx.write_idx(np.zeros(2, dtype=np.uint8), str(tmp_path / "l"))
    with pytest.raises(DimMismatch):
        idx.load_pair(str(tmp_path / "i"), str(tmp_path / "l"))


@given(st.integers(1, 3), st.integers(0, 100_000))
@settings(max_examples=30, deadline=None)
def test_round_trip_property(rank, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(rng.integers(1, 7)) for _ in range(rank))
    a = rng.integers(0, 256, size=shape).astype(np.uint8)
    assert np.array_equal(idx.parse_idx(_encode(a)), a)
