"""Exact Euclidean distance transforms, ridge skeletons, and per-mask bandwidths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import BinaryMask


@dataclass(frozen=True)
class DistanceField:
    """Per-pixel distances to a reference set.

    Outside the defined support, values are +inf and `defined` is False; consumers
    must not read them. Squared fields hold exact integer values (a sum of two
    squared integer offsets) in a float array.
    """

    values: np.ndarray  # (height, width) float64
    squared: bool
    defined: np.ndarray  # (height, width) bool

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def max_defined(self) -> float:
        if not self.defined.any():
            raise ValueError("distance field has no defined pixels")
        return float(self.values[self.defined].max())


def _exact_squared_edt(reference: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from every pixel to the nearest True pixel.

    scipy's exact EDT provides nearest-reference coordinates; the squared distance
    is then recomputed in integer arithmetic so the result is exact by construction.
    """
    if not reference.any():
        raise ValueError("no reference pixel")
    # distance_transform_edt measures nonzero pixels against zero pixels.
    _, (iy, ix) = ndimage.distance_transform_edt(~reference, return_indices=True)
    h, w = reference.shape
    gy, gx = np.ogrid[:h, :w]
    dy = (iy - gy).astype(np.int64)
    dx = (ix - gx).astype(np.int64)
    return (dy * dy + dx * dx).astype(np.float64)


def euclidean_distance_transform(
    m: BinaryMask, reference: str = "set-pixels", squared: bool = False
) -> DistanceField:
    """Distance from each pixel to the nearest reference pixel of the mask.

    reference selects which pixels distances are measured to: "set-pixels" or
    "unset-pixels". Raises if the reference set is empty.
    """
    if reference == "set-pixels":
        ref = m.bits
    elif reference == "unset-pixels":
        ref = ~m.bits
    else:
        raise ValueError(f"reference must be 'set-pixels' or 'unset-pixels', got {reference!r}")
    sq = _exact_squared_edt(ref)
    values = sq if squared else np.sqrt(sq)
    return DistanceField(values, squared=squared, defined=np.ones_like(m.bits, dtype=bool))


def _interior_squared_edt(m: BinaryMask) -> np.ndarray:
    """Squared distance of each pixel to the nearest unset pixel, with the canvas
    boundary counting as unset (so the field is defined even for an all-ones mask)."""
    padded = np.pad(m.bits, 1, constant_values=False)
    sq = _exact_squared_edt(~padded)
    return sq[1:-1, 1:-1]


def medial_skeleton(m: BinaryMask) -> BinaryMask:
    """Ridge pixels of the interior distance transform.

    A mask pixel is on the skeleton iff its interior distance is >= that of all
    8 neighbors (ties included; off-canvas neighbors count as distance 0). The
    result is a non-empty subset of the mask for any non-empty mask.
    """
    if m.area == 0:
        raise ValueError("empty mask has no skeleton")
    sq = _interior_squared_edt(m)
    padded = np.pad(sq, 1, constant_values=0.0)
    ridge = np.ones_like(m.bits, dtype=bool)
    h, w = sq.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            ridge &= sq >= neighbor
    return BinaryMask(ridge & m.bits)


def skeleton_distance_field(m: BinaryMask, squared: bool = False) -> DistanceField:
    """Distance from each mask pixel to the mask's skeleton; undefined outside the mask."""
    if m.area == 0:
        raise ValueError("empty mask has no skeleton distance field")
    skeleton = medial_skeleton(m)
    sq = _exact_squared_edt(skeleton.bits)
    values = sq if squared else np.sqrt(sq)
    values = np.where(m.bits, values, np.inf)
    return DistanceField(values, squared=squared, defined=m.bits.copy())


def bandwidth(m: BinaryMask) -> float:
    """Max skeleton distance over the mask's pixels, divided by 3."""
    field = skeleton_distance_field(m, squared=True)
    return float(np.sqrt(field.max_defined()) / 3.0)


def bandwidth_from_field(field: DistanceField) -> float:
    """Bandwidth computed from an already-built squared skeleton distance field."""
    if not field.squared:
        raise ValueError("expected a squared distance field")
    return float(np.sqrt(field.max_defined()) / 3.0)
