"""Synthetic scenes: non-overlapping labeled objects, noisy per-class cost maps,
and a stand-in mask proposer that over-segments ground truth into Voronoi patches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, LabelMap, MaskSet, connected_components, distinct_labels
from .prompts import CostMap, PointPrompts, cell_center_pixels

# Object extent as a fraction of the short canvas side.
_MIN_SIZE_FRAC = 0.10
_MAX_SIZE_FRAC = 0.28
_PLACEMENT_TRIES = 40
_REGION_SALT = 0x5EED

SHAPE_FAMILIES = ("rectangles", "ellipses", "blobs")


@dataclass(frozen=True)
class SceneConfig:
    width: int = 256
    height: int = 256
    n_objects: int = 6
    num_classes: int = 8
    family: str = "ellipses"
    noise: float = 0.2
    splits: tuple[int, int] = (2, 4)  # inclusive range of Voronoi patches per region
    seed: int = 0

    def __post_init__(self):
        if self.width % 16 or self.height % 16:
            raise ValueError("scene dimensions must be divisible by 16")
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        if self.family not in SHAPE_FAMILIES:
            raise ValueError(f"family must be one of {SHAPE_FAMILIES}")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")
        lo, hi = self.splits
        if lo < 1 or hi < lo:
            raise ValueError("splits must be an increasing range starting at >= 1")


def _ellipse_bits(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    gy, gx = np.ogrid[:h, :w]
    return ((gy - cy) / ry) ** 2 + ((gx - cx) / rx) ** 2 <= 1.0


def _draw_shape(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    short = min(h, w)
    lo = max(4, int(_MIN_SIZE_FRAC * short))
    hi = max(lo + 1, int(_MAX_SIZE_FRAC * short))
    sy = int(rng.integers(lo, hi))
    sx = int(rng.integers(lo, hi))
    top = int(rng.integers(1, max(2, h - sy - 1)))
    left = int(rng.integers(1, max(2, w - sx - 1)))
    bits = np.zeros((h, w), dtype=bool)
    if cfg.family == "rectangles":
        bits[top : top + sy, left : left + sx] = True
        return bits
    cy, cx = top + sy / 2.0, left + sx / 2.0
    bits = _ellipse_bits(h, w, cy, cx, sy / 2.0, sx / 2.0)
    if cfg.family == "ellipses":
        return bits
    # Blobs: a base ellipse with two overlapping satellites, kept connected.
    for _ in range(2):
        oy = float(rng.uniform(-sy / 3.0, sy / 3.0))
        ox = float(rng.uniform(-sx / 3.0, sx / 3.0))
        ry = float(rng.uniform(sy / 4.0, sy / 2.0))
        rx = float(rng.uniform(sx / 4.0, sx / 2.0))
        bits |= _ellipse_bits(h, w, cy + oy, cx + ox, ry, rx)
    labeled, n = ndimage.label(bits, structure=np.ones((3, 3), dtype=bool))
    if n > 1:
        base = labeled[min(int(cy), h - 1), min(int(cx), w - 1)]
        if base == 0:
            base = 1
        bits = labeled == base
    return bits


def gen_scene(cfg: SceneConfig) -> tuple[LabelMap, CostMap]:
    """Generate a labeled scene plus its noisy coarse cost map, deterministically per seed.

    The cost map holds one channel per class: the cell-center class indicator,
    box-blurred 3x3 (zero padding), plus uniform noise of the configured
    amplitude, clamped to [-1, 1].
    """
    rng = np.random.default_rng(cfg.seed)
    labels = np.zeros((cfg.height, cfg.width), dtype=np.int64)
    occupied = np.zeros_like(labels, dtype=bool)
    for _ in range(cfg.n_objects):
        cls = int(rng.integers(1, cfg.num_classes + 1))
        for attempt in range(_PLACEMENT_TRIES + 1):
            if attempt == _PLACEMENT_TRIES:
                raise RuntimeError(
                    f"could not place an object after {_PLACEMENT_TRIES} tries; "
                    "lower n_objects or enlarge the canvas"
                )
            bits = _draw_shape(rng, cfg)
            if not (bits & occupied).any():
                labels[bits] = cls
                occupied |= bits
                break

    gh, gw = cfg.height // 16, cfg.width // 16
    py, px = cell_center_pixels(gh, gw, cfg.width, cfg.height)
    grid_labels = labels[py[:, None], px[None, :]]
    cost = np.zeros((cfg.num_classes, gh, gw), dtype=np.float64)
    for k in range(1, cfg.num_classes + 1):
        ind = (grid_labels == k).astype(np.float64)
        cost[k - 1] = ndimage.uniform_filter(ind, size=3, mode="constant", cval=0.0)
    cost += rng.uniform(-cfg.noise, cfg.noise, size=cost.shape)
    np.clip(cost, -1.0, 1.0, out=cost)
    return LabelMap(labels), CostMap(cost)


def _region_rng(scene_seed: int, region_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((scene_seed, _REGION_SALT, region_index)))


def voronoi_patches(gt: LabelMap, cfg: SceneConfig) -> list[tuple[BinaryMask, list[BinaryMask]]]:
    """Split every ground-truth region into Voronoi patches around random in-region seeds.

    Regions are the 8-connected components of each class's support, ordered by
    ascending class then component raster order. Each region draws its own RNG
    stream from (scene seed, region index), so the decomposition is independent
    of who asks for it. Ties in the nearest-seed assignment go to the lowest
    seed index.
    """
    regions: list[BinaryMask] = []
    for cls in distinct_labels(gt):
        comp = connected_components(BinaryMask(gt.labels == cls), connectivity=8)
        regions.extend(comp.masks)

    out: list[tuple[BinaryMask, list[BinaryMask]]] = []
    lo, hi = cfg.splits
    for r, region in enumerate(regions):
        rng = _region_rng(cfg.seed, r)
        n_splits = int(rng.integers(lo, hi + 1))
        ys, xs = np.nonzero(region.bits)
        n_seeds = min(n_splits, ys.size)
        chosen = rng.choice(ys.size, size=n_seeds, replace=False)
        seed_y, seed_x = ys[chosen], xs[chosen]
        d2 = (ys[:, None] - seed_y[None, :]) ** 2 + (xs[:, None] - seed_x[None, :]) ** 2
        owner = d2.argmin(axis=1)
        patches = []
        for s in range(n_seeds):
            bits = np.zeros_like(region.bits)
            sel = owner == s
            bits[ys[sel], xs[sel]] = True
            patches.append(BinaryMask(bits))
        out.append((region, patches))
    return out


def simulate_sam(gt: LabelMap, points: PointPrompts, cfg: SceneConfig) -> MaskSet:
    """Return, for each prompt point, the pre-split ground-truth sub-patch containing it.

    Points on background contribute nothing; duplicate sub-patches are
    deduplicated. Output order is (region, patch) so it does not depend on the
    order of the points.
    """
    decomposition = voronoi_patches(gt, cfg)
    patch_id = np.full((gt.height, gt.width), -1, dtype=np.int64)
    flat_patches: list[BinaryMask] = []
    for _, patches in decomposition:
        for patch in patches:
            patch_id[patch.bits] = len(flat_patches)
            flat_patches.append(patch)

    hit: set[int] = set()
    for x, y in points.points:
        px = min(max(int(math.floor(x)), 0), gt.width - 1)
        py = min(max(int(math.floor(y)), 0), gt.height - 1)
        pid = patch_id[py, px]
        if pid >= 0:
            hit.add(int(pid))
    masks = tuple(flat_patches[i] for i in sorted(hit))
    return MaskSet(gt.width, gt.height, masks, disjoint=True)


def default_suite(seed: int = 0, n_scenes: int = 20) -> list[SceneConfig]:
    """The standard 20-scene benchmark suite: 3..12 objects, per-scene derived seeds."""
    configs = []
    for i in range(n_scenes):
        scene_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        configs.append(
            SceneConfig(n_objects=3 + (i % 10), seed=scene_seed)
        )
    return configs
