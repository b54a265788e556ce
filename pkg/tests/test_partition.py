import numpy as np
import pytest
from hypothesis import given, strategies as st

from upreid.partition import DimensionError, PatchLayout, partition_image, reassemble, symmetric_index


def test_layout_is_row_major_left_then_right():
    grid = PatchLayout(8).grid
    assert grid[1] == (1, "left") and grid[2] == (1, "right")
    assert grid[3] == (2, "left") and grid[8] == (4, "right")
    assert len(set(grid.values())) == 8


@pytest.mark.parametrize("M", [0, 1, 3, 7])
def test_odd_or_tiny_M_rejected(M):
    with pytest.raises(ValueError):
        PatchLayout(M)


@pytest.mark.parametrize("M, shape", [(8, (16, 16)), (4, (32, 16)), (2, (64, 16))])
def test_patch_shapes(M, shape):
    view = np.zeros((64, 32, 3))
    patches = partition_image(view, PatchLayout(M))
    assert len(patches) == M
    assert all(p.shape == shape + (3,) for p in patches)


def test_dimension_error_names_axis():
    with pytest.raises(DimensionError, match="height 63"):
        partition_image(np.zeros((63, 32, 3)), PatchLayout(8))
    with pytest.raises(DimensionError, match="width 31"):
        partition_image(np.zeros((64, 31, 3)), PatchLayout(8))


def test_patches_cover_view_without_overlap():
    h, w = 64, 32
    ids = np.arange(h * w).reshape(h, w, 1).astype(np.float64)
    seen = np.concatenate([p.ravel() for p in partition_image(ids, PatchLayout(8))])
    assert np.array_equal(np.sort(seen), ids.ravel())


def test_patch_i_has_fixed_coordinates():
    a = np.random.default_rng(0).random((64, 32, 3))
    layout = PatchLayout(8)
    # patch 3 is stripe 2, left
    assert np.array_equal(partition_image(a, layout)[2], a[16:32, :16])
    assert np.array_equal(partition_image(a, layout)[7], a[48:64, 16:])


@given(stripes=st.integers(1, 6), ph=st.integers(1, 6), pw=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_reassembly_round_trip(stripes, ph, pw, seed):
    layout = PatchLayout(2 * stripes)
    view = np.random.default_rng(seed).random((stripes * ph, 2 * pw, 3)).astype(np.float32)
    back = reassemble(partition_image(view, layout), layout)
    assert back.dtype == view.dtype
    assert np.array_equal(back, view)


@pytest.mark.parametrize("M", [2, 4, 8, 12])
def test_symmetric_index_involution_no_fixed_points(M):
    layout = PatchLayout(M)
    for i in range(1, M + 1):
        j = symmetric_index(i, layout)
        assert j != i
        assert symmetric_index(j, layout) == i
        assert layout.grid[i][0] == layout.grid[j][0]


def test_symmetric_index_examples():
    layout = PatchLayout(8)
    assert symmetric_index(1, layout) == 2
    assert symmetric_index(2, layout) == 1
    assert symmetric_index(7, layout) == 8


@pytest.mark.parametrize("i", [0, 9, -1])
def test_symmetric_index_out_of_range(i):
    with pytest.raises(IndexError):
        symmetric_index(i, PatchLayout(8))


def test_mirror_partner_is_flipped_content():
    # a left-right symmetric view maps patch i onto the mirror of its partner
    half = np.random.default_rng(3).random((64, 16, 3))
    view = np.concatenate([half, half[:, ::-1]], axis=1)
    layout = PatchLayout(8)
    patches = partition_image(view, layout)
    for i in range(1, 9):
        assert np.array_equal(patches[i - 1], patches[symmetric_index(i, layout) - 1][:, ::-1])
