"""Sampling-probability targets over a prompt grid, Bernoulli point sampling, and
binarization of per-class logits into coarse text masks.

Probabilities follow two rules: cells near a mask's skeleton get more mass
(Gaussian decay with a per-mask bandwidth), and each mask's total mass equals
its expected point count, which grows with area up to a cap. Cells belonging to
no mask get zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import bandwidth_from_field, skeleton_distance_field
from .masks import BinaryMask, LabelMap, MaskSet


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for target generation and point sampling.

    g_p is the area (in grid cells by default) per expected point; m_p caps the
    expected points per mask. count_area_in_cells=False switches the area term
    to full-resolution pixels.
    """

    g_p: int = 5
    m_p: int = 10
    grid_h: int = 32
    grid_w: int = 32
    seed: int = 0
    count_area_in_cells: bool = True

    def __post_init__(self):
        if self.g_p < 1 or self.m_p < 1:
            raise ValueError("g_p and m_p must be >= 1")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be >= 1")


@dataclass(frozen=True)
class ProbabilityGrid:
    """Per-cell sampling probabilities on the prompt grid.

    raw holds the pre-clamp target values (>= 0, may exceed 1 for tiny dense
    masks); probs is raw clamped to [0, 1]. image_w/image_h give the pixel
    frame the grid maps onto; skipped lists ground-truth masks whose
    cell-center rasterization was empty.
    """

    raw: np.ndarray  # (grid_h, grid_w) float64
    image_w: int
    image_h: int
    skipped: tuple[int, ...] = ()
    probs: np.ndarray = field(init=False)

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.ndim != 2:
            raise ValueError("probability grid must be 2-D")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "probs", np.clip(raw, 0.0, 1.0))

    @property
    def grid_h(self) -> int:
        return self.raw.shape[0]

    @property
    def grid_w(self) -> int:
        return self.raw.shape[1]


@dataclass(frozen=True)
class PointPrompts:
    """Sampled prompt points at image-space grid-cell centers."""

    points: np.ndarray  # (n, 2) float64, columns x, y in pixels
    cell_probs: np.ndarray  # (n,) probability of the cell each point came from

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CostMap:
    """Per-class score maps; raw cosine-like values live in [-1, 1]."""

    values: np.ndarray  # (K, h, w) float64

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError("cost map must be (K, h, w)")
        object.__setattr__(self, "values", values)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def grid_h(self) -> int:
        return self.values.shape[1]

    @property
    def grid_w(self) -> int:
        return self.values.shape[2]


def cell_center_pixels(
    grid_h: int, grid_w: int, image_w: int, image_h: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel indices containing each grid cell's image-space center.

    Cell (i, j) has center ((j + 0.5) * W / grid_w, (i + 0.5) * H / grid_h);
    returns (py, px) index arrays of shape (grid_h,) and (grid_w,).
    """
    cx = (np.arange(grid_w) + 0.5) * image_w / grid_w
    cy = (np.arange(grid_h) + 0.5) * image_h / grid_h
    px = np.minimum(np.floor(cx).astype(np.int64), image_w - 1)
    py = np.minimum(np.floor(cy).astype(np.int64), image_h - 1)
    return py, px


def cell_centers(grid_h: int, grid_w: int, image_w: int, image_h: int) -> np.ndarray:
    """Image-space centers of all cells as an (grid_h, grid_w, 2) array of (x, y)."""
    cx = (np.arange(grid_w) + 0.5) * image_w / grid_w
    cy = (np.arange(grid_h) + 0.5) * image_h / grid_h
    out = np.empty((grid_h, grid_w, 2), dtype=np.float64)
    out[:, :, 0] = cx[None, :]
    out[:, :, 1] = cy[:, None]
    return out


def rasterize_cell_centers(m: BinaryMask, grid_h: int, grid_w: int) -> np.ndarray:
    """Cell-center membership of a mask: cell (i, j) is set iff its center pixel is in the mask."""
    py, px = cell_center_pixels(grid_h, grid_w, m.width, m.height)
    return m.bits[py[:, None], px[None, :]]


def expected_point_count(area: int, cfg: SamplerConfig) -> int:
    """min(ceil(area / g_p), m_p); zero for an empty area."""
    if area <= 0:
        return 0
    return min(math.ceil(area / cfg.g_p), cfg.m_p)


def expected_points(m: BinaryMask, cfg: SamplerConfig) -> int:
    """Expected point budget for one mask, counting area per the config's unit."""
    if cfg.count_area_in_cells:
        area = int(np.count_nonzero(rasterize_cell_centers(m, cfg.grid_h, cfg.grid_w)))
    else:
        area = m.area
    return expected_point_count(area, cfg)


def probability_target(gt: MaskSet, cfg: SamplerConfig) -> ProbabilityGrid:
    """Target sampling probabilities from disjoint ground-truth masks.

    Per mask: Gaussian decay of the skeleton distance, normalized over the
    mask's grid cells so the mask's total raw mass equals its expected point
    count. A zero bandwidth degenerates to an indicator on the skeleton.
    """
    if not gt.disjoint or not gt.check_disjoint():
        raise ValueError("ground-truth masks must be disjoint")
    grid_h, grid_w = cfg.grid_h, cfg.grid_w
    raw = np.zeros((grid_h, grid_w), dtype=np.float64)
    skipped: list[int] = []
    py, px = cell_center_pixels(grid_h, grid_w, gt.width, gt.height)
    for k, m in enumerate(gt.masks):
        if m.area == 0:
            skipped.append(k)
            continue
        member = m.bits[py[:, None], px[None, :]]
        if not member.any():
            skipped.append(k)
            continue
        field_sq = skeleton_distance_field(m, squared=True)
        sigma = bandwidth_from_field(field_sq)
        d_sq = field_sq.values[py[:, None], px[None, :]][member]
        if sigma == 0.0:
            weights = np.where(d_sq == 0.0, 1.0, 0.0)
        else:
            weights = np.exp(-d_sq / (2.0 * sigma * sigma))
        area = int(member.sum()) if cfg.count_area_in_cells else m.area
        p_k = expected_point_count(area, cfg)
        raw[member] = weights / weights.sum() * p_k
    return ProbabilityGrid(raw, gt.width, gt.height, skipped=tuple(skipped))


def sample_points(p: ProbabilityGrid, cfg: SamplerConfig) -> PointPrompts:
    """Independent Bernoulli draw per cell; selected cells become image-space center points.

    Deterministic for a fixed cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    draws = rng.random(p.probs.shape)
    chosen = draws < p.probs
    centers = cell_centers(p.grid_h, p.grid_w, p.image_w, p.image_h)
    points = centers[chosen]
    return PointPrompts(points=points.reshape(-1, 2), cell_probs=p.probs[chosen])


def _argmax_with_margin(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell argmax class and its margin over the mean of the other classes.

    The margin is invariant to adding a constant across all classes at a cell;
    with a single class the score itself is the margin.
    """
    k = scores.shape[0]
    winner = scores.argmax(axis=0)
    best = scores.max(axis=0)
    if k > 1:
        rest_mean = (scores.sum(axis=0) - best) / (k - 1)
        margin = best - rest_mean
    else:
        margin = best.copy()
    return winner, margin


def classify_scores(scores: np.ndarray, bg_threshold: float = 0.0) -> np.ndarray:
    """Per-cell class labels (1-based) from score maps; 0 where no class clears the margin."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ValueError("scores must be (K, h, w)")
    winner, margin = _argmax_with_margin(scores)
    return np.where(margin > bg_threshold, winner + 1, 0).astype(np.int64)


def text_masks_from_logits(logits: np.ndarray, bg_threshold: float = 0.0) -> MaskSet:
    """Binarize per-class logits into one disjoint mask per class.

    A cell joins its argmax class iff the winning logit beats the mean of the
    other classes by more than bg_threshold (see classify_scores).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ValueError("logits must be (K, h, w)")
    k, h, w = logits.shape
    labels = classify_scores(logits, bg_threshold)
    masks = tuple(BinaryMask(labels == c + 1) for c in range(k))
    return MaskSet(w, h, masks, disjoint=True)
