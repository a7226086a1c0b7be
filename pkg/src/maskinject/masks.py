"""Binary masks, mask sets, and label maps with the set operations everything else builds on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BinaryMask:
    """A row-major bit grid over an image canvas; 1 means inside the mask."""

    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        """Number of set pixels (popcount of the bit grid)."""
        return int(np.count_nonzero(self.bits))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class MaskSet:
    """An ordered collection of same-sized masks; order is insertion order and is stable."""

    width: int
    height: int
    masks: tuple[BinaryMask, ...]
    disjoint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        for m in self.masks:
            if m.width != self.width or m.height != self.height:
                raise ValueError(
                    f"mask of size {m.width}x{m.height} in a {self.width}x{self.height} set"
                )

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def __getitem__(self, i: int) -> BinaryMask:
        return self.masks[i]

    def coverage_counts(self) -> np.ndarray:
        """Per-pixel count of member masks covering it, as an int array."""
        counts = np.zeros((self.height, self.width), dtype=np.int64)
        for m in self.masks:
            counts += m.bits
        return counts

    def check_disjoint(self) -> bool:
        """True iff no pixel is covered by more than one member."""
        return bool((self.coverage_counts() <= 1).all())

    def stack(self) -> np.ndarray:
        """Member indicator grids stacked into an (n, height, width) bool array."""
        if not self.masks:
            return np.zeros((0, self.height, self.width), dtype=bool)
        return np.stack([m.bits for m in self.masks])


@dataclass(frozen=True)
class LabelMap:
    """Row-major non-negative integer labels; 0 is background."""

    labels: np.ndarray  # (height, width) int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError(f"label map must be integer-typed, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValueError("label map contains negative labels")
        object.__setattr__(self, "labels", _freeze(labels.astype(np.int64)))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def distinct_labels(lm: LabelMap) -> list[int]:
    """Sorted list of the nonzero labels present in the map."""
    vals = np.unique(lm.labels)
    return [int(v) for v in vals if v != 0]


def masks_from_labelmap(lm: LabelMap) -> MaskSet:
    """One mask per distinct nonzero label, ordered by ascending label id."""
    masks = tuple(BinaryMask(lm.labels == k) for k in distinct_labels(lm))
    return MaskSet(lm.width, lm.height, masks, disjoint=True)


def labelmap_from_masks(ms: MaskSet, ids: list[int] | None = None) -> LabelMap:
    """Paint masks into a label map; later masks overwrite earlier ones where they overlap.

    ids defaults to 1..n in mask order.
    """
    if ids is None:
        ids = list(range(1, len(ms) + 1))
    if len(ids) != len(ms):
        raise ValueError("need one label id per mask")
    labels = np.zeros((ms.height, ms.width), dtype=np.int64)
    for m, k in zip(ms.masks, ids):
        labels[m.bits] = k
    return LabelMap(labels)


def connected_components(m: BinaryMask, connectivity: int = 8) -> MaskSet:
    """Split a mask into connected components (raster order of each component's first pixel)."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    labeled, n = ndimage.label(m.bits, structure=structure)
    masks = tuple(BinaryMask(labeled == k) for k in range(1, n + 1))
    return MaskSet(m.width, m.height, masks, disjoint=True)


def intersect_count(a: BinaryMask, b: BinaryMask) -> int:
    """Count of pixels set in both masks."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"dimension mismatch: {a.bits.shape} vs {b.bits.shape}")
    return int(np.count_nonzero(a.bits & b.bits))


def union_all(masks: list[BinaryMask], width: int | None = None, height: int | None = None) -> BinaryMask:
    """Pixelwise OR of the given masks; empty input yields an all-zero mask of the requested size."""
    if not masks:
        if width is None or height is None:
            raise ValueError("empty union needs explicit width and height")
        return BinaryMask.empty(width, height)
    shape = masks[0].bits.shape
    for m in masks[1:]:
        if m.bits.shape != shape:
            raise ValueError(f"dimension mismatch: {m.bits.shape} vs {shape}")
    return BinaryMask(np.logical_or.reduce([m.bits for m in masks]))


def downsample_mask(m: BinaryMask, factor: int) -> BinaryMask:
    """Majority-vote decimation by an integer factor; ties count as set.

    Thin structures survive one level because a half-covered block stays set.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return m
    if m.height % factor or m.width % factor:
        raise ValueError(
            f"factor {factor} does not divide {m.width}x{m.height}"
        )
    h, w = m.height // factor, m.width // factor
    blocks = m.bits.reshape(h, factor, w, factor)
    counts = blocks.sum(axis=(1, 3), dtype=np.int64)
    return BinaryMask(2 * counts >= factor * factor)


def upsample_mask(m: BinaryMask, factor: int) -> BinaryMask:
    """Nearest-neighbor replication of each cell into a factor x factor block."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return m
    return BinaryMask(np.repeat(np.repeat(m.bits, factor, axis=0), factor, axis=1))
