import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hoilayout.errors import MissingFileError, SceneFormatError
from hoilayout.formats import (b64_to_mask, depth_to_png, mask_to_b64, read_depth, read_gray_png,
                               read_index_png, read_mask_png, write_depth, write_index_png, write_mask_png)


def test_depth_header_layout(tmp_path):
    d = np.full((3, 5), np.inf)
    d[1, 2] = 4.25
    write_depth(tmp_path / "d.bin", d)
    raw = (tmp_path / "d.bin").read_bytes()
    assert len(raw) == 16 + 4 * 15
    assert struct.unpack("<4sIII", raw[:16]) == (b"HDPT", 1, 5, 3)
    assert struct.unpack_from("<f", raw, 16 + 4 * (1 * 5 + 2))[0] == 4.25
    back = read_depth(tmp_path / "d.bin")
    assert back.shape == (3, 5) and back[1, 2] == 4.25 and np.isinf(back[0, 0])


def test_depth_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(SceneFormatError):
        read_depth(tmp_path / "x.bin")


@given(arrays(np.float32, (4, 6), elements=st.floats(0.5, 1e4, width=32)))
def test_depth_round_trip_float32_exact(tmp_path_factory, d):
    p = tmp_path_factory.mktemp("d") / "d.bin"
    write_depth(p, d)
    assert np.array_equal(read_depth(p), d.astype(np.float64))


def test_mask_png_is_0_255(tmp_path):
    m = np.zeros((4, 4), dtype=np.uint8)
    m[1:3, 1:3] = 1
    write_mask_png(tmp_path / "m.png", m)
    raw = read_gray_png(tmp_path / "m.png")
    assert set(np.unique(raw)) == {0, 255}
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), m)
    assert np.array_equal(b64_to_mask(mask_to_b64(m)), m)


def test_index_png_round_trip(tmp_path):
    idx = np.array([[0, 1, 2], [3, 255, 0]])
    write_index_png(tmp_path / "i.png", idx)
    assert np.array_equal(read_index_png(tmp_path / "i.png"), idx)
    with pytest.raises(ValueError):
        write_index_png(tmp_path / "j.png", np.array([[256]]))


def test_missing_and_corrupt_png(tmp_path):
    with pytest.raises(MissingFileError):
        read_gray_png(tmp_path / "none.png")
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(SceneFormatError):
        read_gray_png(tmp_path / "bad.png")


def test_depth_preview_brightness():
    d = np.array([[1.0, 2.0, np.inf]])
    assert depth_to_png(d).tolist() == [[255, 55, 0]]
