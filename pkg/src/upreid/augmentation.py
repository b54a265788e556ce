"""Stochastic view generation for person images.

Images are ``H x W x 3`` float arrays in ``[0, 1]``. Every input is first
resized to ``output_size`` so the untouched original and both augmented views
share one coordinate frame. The stochastic chain is random resized crop,
grayscale, Gaussian blur, horizontal flip, random erasing. There is no colour
jitter: clothing colour is the main identity cue in person images.
"""
import math
from dataclasses import dataclass, fields

import cv2
import numpy as np

from upreid.partition import PatchLayout, partition_image

# torchvision RandomErasing default aspect range
ERASE_RATIO = (0.3, 3.3)
ERASE_ATTEMPTS = 10


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale_range: tuple[float, float] = (0.4, 1.0)
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 1.0)
    hflip_prob: float = 0.5
    erase_prob: float = 0.5
    erase_area_range: tuple[float, float] = (0.02, 0.2)
    output_size: tuple[int, int] = (64, 32)

    def __post_init__(self):
        for name in ("grayscale_prob", "blur_prob", "hflip_prob", "erase_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("crop_scale_range", "blur_sigma_range", "erase_area_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy low <= high, got {(lo, hi)}")
            if lo < 0:
                raise ValueError(f"{name} must be non-negative, got {(lo, hi)}")
        lo, hi = self.crop_scale_range
        if lo <= 0 or hi > 1:
            raise ValueError(f"crop_scale_range must lie in (0, 1], got {(lo, hi)}")
        h, w = self.output_size
        if h <= 0 or w <= 0:
            raise ValueError(f"output_size must be positive, got {self.output_size}")

    @classmethod
    def identity(cls, output_size=(64, 32)) -> "AugmentConfig":
        """A configuration whose views equal the resized original."""
        return cls(crop_scale_range=(1.0, 1.0), grayscale_prob=0.0, blur_prob=0.0,
                   hflip_prob=0.0, erase_prob=0.0, output_size=tuple(output_size))

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ViewBundle:
    original: np.ndarray
    view_q: np.ndarray
    view_k: np.ndarray
    patches_q: list[np.ndarray]
    patches_k: list[np.ndarray]


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise ValueError(f"image {img.shape[:2]} is smaller than 8x8")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite pixel values")


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to ``(height, width)``; a no-op (copy) when already that size."""
    img = np.asarray(img, dtype=np.float32)
    h, w = size
    if img.shape[:2] == (h, w):
        return img.copy()
    return cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)


def _random_resized_crop(img, scale_range, rng):
    h, w = img.shape[:2]
    scale = rng.uniform(*scale_range)
    ch = min(h, max(1, int(round(h * math.sqrt(scale)))))
    cw = min(w, max(1, int(round(w * math.sqrt(scale)))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return resize(img[top:top + ch, left:left + cw], (h, w))


def _grayscale(img):
    lum = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    return np.repeat(lum[:, :, None], 3, axis=2)


def _random_erase(img, area_range, rng):
    h, w = img.shape[:2]
    log_lo, log_hi = math.log(ERASE_RATIO[0]), math.log(ERASE_RATIO[1])
    for _ in range(ERASE_ATTEMPTS):
        area = rng.uniform(*area_range) * h * w
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        eh = int(round(math.sqrt(area * ratio)))
        ew = int(round(math.sqrt(area / ratio)))
        if 0 < eh < h and 0 < ew < w:
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out = img.copy()
            out[top:top + eh, left:left + ew] = rng.random((eh, ew, 3), dtype=np.float32)
            return out
    return img


def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of ``img``; a pure function of ``(img, cfg, rng state)``.

    Every random draw happens regardless of whether its transform fires, so the
    stream consumption is fixed per call and views stay aligned across configs.
    """
    _check_image(img)
    out = resize(img, cfg.output_size)
    out = _random_resized_crop(out, cfg.crop_scale_range, rng)
    if rng.random() < cfg.grayscale_prob:
        out = _grayscale(out)
    blur, sigma = rng.random(), rng.uniform(*cfg.blur_sigma_range)
    if blur < cfg.blur_prob and sigma > 0:
        out = cv2.GaussianBlur(out, (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT_101)
    if rng.random() < cfg.hflip_prob:
        out = np.ascontiguousarray(out[:, ::-1])
    if rng.random() < cfg.erase_prob:
        out = _random_erase(out, cfg.erase_area_range, rng)
    return np.clip(out, 0.0, 1.0, out=out)


def make_views(img: np.ndarray, cfg: AugmentConfig, M: int, rng: np.random.Generator) -> ViewBundle:
    """Original plus two independent views, each partitioned into ``M`` patches."""
    layout = PatchLayout(M)
    _check_image(img)
    original = resize(img, cfg.output_size)
    layout.patch_shape(*original.shape[:2])
    view_q = augment(img, cfg, rng)
    view_k = augment(img, cfg, rng)
    return ViewBundle(
        original=original,
        view_q=view_q,
        view_k=view_k,
        patches_q=partition_image(view_q, layout),
        patches_k=partition_image(view_k, layout),
    )
