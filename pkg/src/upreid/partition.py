"""Patch geometry: stripes split into left/right halves, row-major indexing.

Patch indices are 1-based. Patch ``2s - 1`` is the left half of stripe ``s``
and patch ``2s`` the right half, so the horizontal mirror of patch ``i`` is
its stripe partner.
"""
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when an image cannot be split evenly along some axis."""


@dataclass(frozen=True)
class PatchLayout:
    M: int

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError(f"M must be even and >= 2, got {self.M}")

    @property
    def stripes(self) -> int:
        return self.M // 2

    @property
    def grid(self) -> dict[int, tuple[int, str]]:
        """Patch index -> (stripe row, 'left' | 'right'), both 1-based/row-major."""
        return {i: ((i + 1) // 2, "left" if i % 2 else "right") for i in range(1, self.M + 1)}

    def patch_shape(self, height: int, width: int) -> tuple[int, int]:
        if height % self.stripes:
            raise DimensionError(
                f"height {height} is not divisible by the {self.stripes} stripes of M={self.M}"
            )
        if width % 2:
            raise DimensionError(f"width {width} is not divisible by 2")
        return height // self.stripes, width // 2


def partition_image(view: np.ndarray, layout: PatchLayout) -> list[np.ndarray]:
    """Split an ``H x W x C`` view into ``layout.M`` patches in row-major order."""
    ph, pw = layout.patch_shape(view.shape[0], view.shape[1])
    patches = []
    for s in range(layout.stripes):
        stripe = view[s * ph:(s + 1) * ph]
        patches.append(stripe[:, :pw].copy())
        patches.append(stripe[:, pw:].copy())
    return patches


def reassemble(patches: list[np.ndarray], layout: PatchLayout) -> np.ndarray:
    """Inverse of :func:`partition_image`."""
    if len(patches) != layout.M:
        raise ValueError(f"expected {layout.M} patches, got {len(patches)}")
    rows = [np.concatenate(patches[2 * s:2 * s + 2], axis=1) for s in range(layout.stripes)]
    return np.concatenate(rows, axis=0)


def symmetric_index(i: int, layout: PatchLayout) -> int:
    """Index of the horizontally mirrored patch in the same stripe."""
    if not 1 <= i <= layout.M:
        raise IndexError(f"patch index {i} outside 1..{layout.M}")
    return i + 1 if i % 2 else i - 1
