"""Shallow mask aggregation: merge proposal masks that overlap a class's coarse
text mask strongly enough, and pass everything else through untouched."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import BinaryMask, MaskSet, downsample_mask, intersect_count, union_all, upsample_mask

DEFAULT_ALPHA = 0.50
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class MatchMatrix:
    """Overlap scores between proposal masks (rows) and per-class text masks (columns).

    Entry (i, j) is |proposal_i AND text_j| / (|proposal_i| + eps), strictly < 1.
    """

    scores: np.ndarray  # (n_sam, n_text) float64

    @property
    def n_sam(self) -> int:
        return self.scores.shape[0]

    @property
    def n_text(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class AggregationResult:
    """Merged masks plus bookkeeping.

    class_of[i] is the text-mask column the i-th output was merged under, or
    None for a passthrough proposal; provenance[i] lists the source proposal
    indices. Class groups come first in ascending class order, then
    passthroughs in input order, so indices are reproducible.
    """

    masks: MaskSet
    class_of: tuple[int | None, ...]
    provenance: tuple[tuple[int, ...], ...]

    @property
    def n_masks(self) -> int:
        return len(self.masks)


def _align(sam: MaskSet, text: MaskSet, resolution: str) -> tuple[list[BinaryMask], list[BinaryMask]]:
    """Bring both mask sets to a common grid for scoring.

    resolution="coarse" majority-downsamples proposals to the text grid (the
    default); "full" nearest-neighbor-upsamples text masks to the proposal grid.
    """
    if resolution not in ("coarse", "full"):
        raise ValueError(f"resolution must be 'coarse' or 'full', got {resolution!r}")
    if sam.width == text.width and sam.height == text.height:
        return list(sam.masks), list(text.masks)
    if sam.width % text.width or sam.height % text.height:
        raise ValueError(
            f"proposal grid {sam.width}x{sam.height} is not an integer multiple "
            f"of the text grid {text.width}x{text.height}"
        )
    fx, fy = sam.width // text.width, sam.height // text.height
    if fx != fy:
        raise ValueError("anisotropic resolution ratios are not supported")
    if resolution == "coarse":
        return [downsample_mask(m, fx) for m in sam.masks], list(text.masks)
    return list(sam.masks), [upsample_mask(m, fx) for m in text.masks]


def matching_scores(
    sam: MaskSet, text: MaskSet, eps: float = DEFAULT_EPS, resolution: str = "coarse"
) -> MatchMatrix:
    """Score every proposal against every text mask after resolution alignment."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    sam_aligned, text_aligned = _align(sam, text, resolution)
    scores = np.zeros((len(sam_aligned), len(text_aligned)), dtype=np.float64)
    for i, a in enumerate(sam_aligned):
        denom = a.area + eps
        for j, b in enumerate(text_aligned):
            scores[i, j] = intersect_count(a, b) / denom
    return MatchMatrix(scores)


def aggregate(
    sam: MaskSet,
    text: MaskSet,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    resolution: str = "coarse",
) -> AggregationResult:
    """Merge proposals whose matching score for some class exceeds alpha.

    A proposal exceeding alpha for several classes joins only its argmax class
    (ties to the lowest column index), so every proposal lands in exactly one
    output and the output count never exceeds the input count. Unions are
    formed from the original full-resolution proposals. Proposals matched to no
    class are emitted unchanged and untagged.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must satisfy 0 <= alpha < 1, got {alpha}")
    if len(sam) == 0:
        return AggregationResult(
            masks=MaskSet(sam.width, sam.height, ()), class_of=(), provenance=()
        )
    if len(text) == 0:
        return AggregationResult(
            masks=MaskSet(sam.width, sam.height, sam.masks, disjoint=sam.disjoint),
            class_of=(None,) * len(sam),
            provenance=tuple((i,) for i in range(len(sam))),
        )

    scores = matching_scores(sam, text, eps, resolution).scores
    best = scores.argmax(axis=1)
    best_score = scores[np.arange(len(sam)), best]

    groups: dict[int, list[int]] = {}
    passthrough: list[int] = []
    for i in range(len(sam)):
        if best_score[i] > alpha:
            groups.setdefault(int(best[i]), []).append(i)
        else:
            passthrough.append(i)

    out_masks: list[BinaryMask] = []
    class_of: list[int | None] = []
    provenance: list[tuple[int, ...]] = []
    for j in sorted(groups):
        rows = groups[j]
        out_masks.append(union_all([sam.masks[i] for i in rows]))
        class_of.append(j)
        provenance.append(tuple(rows))
    for i in passthrough:
        out_masks.append(sam.masks[i])
        class_of.append(None)
        provenance.append((i,))

    return AggregationResult(
        masks=MaskSet(sam.width, sam.height, tuple(out_masks)),
        class_of=tuple(class_of),
        provenance=tuple(provenance),
    )
