import numpy as np
import pytest

from i2vlab.layout import TokenLayout


def test_counts():
    lay = TokenLayout(frames=8, height=8, width=8)
    assert lay.frame_size == 64
    assert lay.token_count == 512


def test_flatten_is_frame_major_then_row_major():
    lay = TokenLayout(frames=3, height=2, width=4)
    assert lay.flatten_index(0, 0, 0) == 0
    assert lay.flatten_index(0, 0, 3) == 3
    assert lay.flatten_index(0, 1, 0) == 4
    assert lay.flatten_index(1, 0, 0) == 8
    assert lay.flatten_index(2, 1, 3) == lay.token_count - 1


def test_flatten_unflatten_bijection():
    lay = TokenLayout(frames=4, height=3, width=5)
    seen = set()
    for f in range(lay.frames):
        for y in range(lay.height):
            for x in range(lay.width):
                i = lay.flatten_index(f, y, x)
                assert lay.unflatten_index(i) == (f, y, x)
                assert lay.frame_of(i) == f
                seen.add(i)
    assert seen == set(range(lay.token_count))


def test_reference_prefix_is_contiguous():
    lay = TokenLayout(frames=5, height=2, width=3)
    ref = lay.reference_indices()
    np.testing.assert_array_equal(ref, np.arange(6))
    assert all(lay.frame_of(int(i)) == 0 for i in ref)
    assert lay.frame_of(int(ref[-1]) + 1) == 1


def test_frame_index_map_matches_frame_of():
    lay = TokenLayout(frames=3, height=2, width=2)
    fmap = lay.frame_index_map()
    assert fmap.shape == (lay.token_count,)
    for i in range(lay.token_count):
        assert fmap[i] == lay.frame_of(i)


def test_out_of_range_indices_raise():
    lay = TokenLayout(frames=2, height=2, width=2)
    with pytest.raises(IndexError):
        lay.flatten_index(2, 0, 0)
    with pytest.raises(IndexError):
        lay.flatten_index(0, -1, 0)
    with pytest.raises(IndexError):
        lay.unflatten_index(8)
    with pytest.raises(IndexError):
        lay.frame_of(-1)


def test_nonpositive_dimensions_rejected():
    for bad in [dict(frames=0, height=2, width=2),
                dict(frames=2, height=0, width=2),
                dict(frames=2, height=2, width=-1)]:
        with pytest.raises(ValueError):
            TokenLayout(**bad)


def test_single_frame_layout_allowed():
    lay = TokenLayout(frames=1, height=4, width=4)
    assert lay.token_count == lay.frame_size == 16
    np.testing.assert_array_equal(lay.frame_index_map(), np.zeros(16, dtype=int))
