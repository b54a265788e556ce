import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from upreid.augmentation import AugmentConfig, augment, make_views, resize
from upreid.partition import PatchLayout, reassemble


@pytest.fixture
def img():
    return np.random.default_rng(5).random((80, 40, 3)).astype(np.float32)


def test_no_color_jitter_fields():
    names = AugmentConfig.keys()
    for banned in ("hue", "saturation", "brightness", "contrast", "jitter"):
        assert not any(banned in n for n in names)


@pytest.mark.parametrize("change", [
    {"grayscale_prob": 1.5}, {"blur_prob": -0.1}, {"crop_scale_range": (0.8, 0.5)},
    {"erase_area_range": (0.3, 0.1)}, {"output_size": (0, 32)}, {"crop_scale_range": (0.0, 1.0)},
])
def test_config_invariants(change):
    with pytest.raises(ValueError):
        dataclasses.replace(AugmentConfig(), **change)


def test_identity_config_returns_resized_original(img):
    cfg = AugmentConfig.identity()
    out = augment(img, cfg, np.random.default_rng(0))
    assert np.array_equal(out, resize(img, (64, 32)))


def test_already_sized_image_passes_through():
    img = np.random.default_rng(1).random((64, 32, 3)).astype(np.float32)
    assert np.array_equal(augment(img, AugmentConfig.identity(), np.random.default_rng(0)), img)


def test_grayscale_equalises_channels(img):
    cfg = dataclasses.replace(AugmentConfig.identity(), grayscale_prob=1.0)
    out = augment(img, cfg, np.random.default_rng(0))
    assert np.array_equal(out[..., 0], out[..., 1])
    assert np.array_equal(out[..., 1], out[..., 2])


def test_hflip_mirrors(img):
    cfg = dataclasses.replace(AugmentConfig.identity(), hflip_prob=1.0)
    out = augment(img, cfg, np.random.default_rng(0))
    assert np.array_equal(out, resize(img, (64, 32))[:, ::-1])


def test_determinism_and_seed_sensitivity(img):
    cfg = AugmentConfig()
    a = augment(img, cfg, np.random.default_rng(7))
    b = augment(img, cfg, np.random.default_rng(7))
    c = augment(img, cfg, np.random.default_rng(8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(seed=st.integers(0, 2**32 - 1), h=st.integers(8, 90), w=st.integers(8, 60))
def test_range_and_shape(seed, h, w):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w, 3)).astype(np.float32)
    cfg = AugmentConfig(grayscale_prob=0.5, blur_prob=1.0, erase_prob=1.0)
    out = augment(img, cfg, rng)
    assert out.shape == (64, 32, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_rejects_small_and_nonfinite(img):
    with pytest.raises(ValueError, match="8x8"):
        augment(np.zeros((7, 30, 3)), AugmentConfig(), np.random.default_rng(0))
    bad = img.copy()
    bad[3, 3, 1] = np.nan
    with pytest.raises(ValueError, match="finite"):
        augment(bad, AugmentConfig(), np.random.default_rng(0))


def test_make_views_identity_gives_original(img):
    v = make_views(img, AugmentConfig.identity(), 8, np.random.default_rng(0))
    assert np.array_equal(v.view_q, v.original)
    assert np.array_equal(v.view_k, v.original)
    assert len(v.patches_q) == len(v.patches_k) == 8
    assert all(p.shape == (16, 16, 3) for p in v.patches_q)


def test_make_views_original_untouched_by_augmentation(img):
    v = make_views(img, AugmentConfig(erase_prob=1.0, grayscale_prob=1.0), 4, np.random.default_rng(0))
    assert np.array_equal(v.original, resize(img, (64, 32)))
    assert not np.array_equal(v.view_q, v.view_k)


def test_make_views_patches_reassemble(img):
    layout = PatchLayout(8)
    v = make_views(img, AugmentConfig(), 8, np.random.default_rng(3))
    assert np.array_equal(reassemble(v.patches_q, layout), v.view_q)
    assert np.array_equal(reassemble(v.patches_k, layout), v.view_k)


def test_make_views_propagates_partition_error(img):
    cfg = dataclasses.replace(AugmentConfig(), output_size=(63, 32))
    with pytest.raises(ValueError, match="height 63"):
        make_views(img, cfg, 8, np.random.default_rng(0))
