"""Brute-force reference implementations used only to check the fast paths.

Everything here is written directly from the defining formulas, on plain numpy
arrays, and shares no code with the modules it verifies. Expect quadratic or
worse complexity; keep instances small.
"""

from __future__ import annotations

import math

import numpy as np


def oracle_edt_squared(reference: np.ndarray) -> np.ndarray:
    """Exact squared distance to the nearest True pixel by scanning every reference pixel."""
    ref_y, ref_x = np.nonzero(reference)
    if ref_y.size == 0:
        raise ValueError("no reference pixel")
    h, w = reference.shape
    gy, gx = np.mgrid[:h, :w]
    out = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    # One reference point at a time keeps memory flat; this is the O(N*M) scan.
    for y, x in zip(ref_y.tolist(), ref_x.tolist()):
        d = (gy - y) ** 2 + (gx - x) ** 2
        np.minimum(out, d, out=out)
    return out


def oracle_interior_edt_squared(mask: np.ndarray) -> np.ndarray:
    """Squared distance of each pixel to the nearest unset pixel, canvas border counting as unset."""
    padded = np.pad(mask, 1, constant_values=False)
    return oracle_edt_squared(~padded)[1:-1, 1:-1]


def oracle_ridge_skeleton(mask: np.ndarray) -> np.ndarray:
    """Mask pixels whose interior distance is >= all 8 neighbors' (off-canvas neighbors are 0)."""
    sq = oracle_interior_edt_squared(mask)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = True
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dy == 0 and dx == 0:
                        continue
                    ny, nx = y + dy, x + dx
                    nval = sq[ny, nx] if 0 <= ny < h and 0 <= nx < w else 0
                    if nval > sq[y, x]:
                        best = False
            if best:
                out[y, x] = True
    return out


def oracle_skeleton_distance_squared(mask: np.ndarray) -> np.ndarray:
    """Squared distance of mask pixels to the ridge skeleton; +inf outside the mask."""
    skeleton = oracle_ridge_skeleton(mask)
    sq = oracle_edt_squared(skeleton).astype(np.float64)
    return np.where(mask, sq, np.inf)


def oracle_probability_target(
    masks: list[np.ndarray],
    image_w: int,
    image_h: int,
    grid_h: int,
    grid_w: int,
    g_p: int,
    m_p: int,
) -> tuple[np.ndarray, list[int]]:
    """Direct evaluation of the Gaussian skeleton-decay sampling target on grid-cell centers.

    Returns the pre-clamp target grid and the indices of masks whose cell-center
    rasterization is empty.
    """
    raw = np.zeros((grid_h, grid_w), dtype=np.float64)
    skipped: list[int] = []
    for k, mask in enumerate(masks):
        dsq = oracle_skeleton_distance_squared(mask)
        sigma = math.sqrt(max(dsq[mask].max(), 0.0)) / 3.0 if mask.any() else 0.0
        cells = []
        for i in range(grid_h):
            for j in range(grid_w):
                cx = (j + 0.5) * image_w / grid_w
                cy = (i + 0.5) * image_h / grid_h
                px = min(int(math.floor(cx)), image_w - 1)
                py = min(int(math.floor(cy)), image_h - 1)
                if mask[py, px]:
                    cells.append((i, j, dsq[py, px]))
        if not cells:
            skipped.append(k)
            continue
        p_k = min(math.ceil(len(cells) / g_p), m_p)
        weights = []
        for _, _, d2 in cells:
            if sigma == 0.0:
                weights.append(1.0 if d2 == 0.0 else 0.0)
            else:
                weights.append(math.exp(-d2 / (2.0 * sigma * sigma)))
        total = sum(weights)
        for (i, j, _), wgt in zip(cells, weights):
            raw[i, j] = wgt / total * p_k
    return raw, skipped


def oracle_matching_scores(
    sam: list[np.ndarray], text: list[np.ndarray], eps: float
) -> np.ndarray:
    """Overlap-over-proposal-area score matrix by per-pixel counting."""
    scores = np.zeros((len(sam), len(text)), dtype=np.float64)
    for i, a in enumerate(sam):
        area = 0
        h, w = a.shape
        for y in range(h):
            for x in range(w):
                if a[y, x]:
                    area += 1
        for j, b in enumerate(text):
            inter = 0
            for y in range(h):
                for x in range(w):
                    if a[y, x] and b[y, x]:
                        inter += 1
            scores[i, j] = inter / (area + eps)
    return scores


def oracle_majority_downsample(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-counting majority decimation; ties map to set."""
    h, w = mask.shape[0] // factor, mask.shape[1] // factor
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            count = 0
            for dy in range(factor):
                for dx in range(factor):
                    if mask[i * factor + dy, j * factor + dx]:
                        count += 1
            out[i, j] = 2 * count >= factor * factor
    return out


def oracle_aggregate(
    sam: list[np.ndarray],
    text: list[np.ndarray],
    alpha: float,
    eps: float,
) -> tuple[list[np.ndarray], list[int | None], list[list[int]]]:
    """Exhaustive threshold-and-union aggregation.

    sam masks are scored at text resolution (majority-downsampled when larger);
    a proposal joins the argmax class among those whose score exceeds alpha
    (ties to the lowest class index), otherwise passes through unchanged.
    Returns (masks, class_of, provenance) with class groups first in ascending
    class order, then passthroughs in input order.
    """
    if sam and text:
        factor = sam[0].shape[0] // text[0].shape[0]
        if factor > 1:
            aligned = [oracle_majority_downsample(a, factor) for a in sam]
        else:
            aligned = sam
        scores = oracle_matching_scores(aligned, text, eps)
    else:
        scores = np.zeros((len(sam), len(text)))

    assigned: dict[int, list[int]] = {}
    passthrough: list[int] = []
    for i in range(len(sam)):
        best_j, best_score = None, alpha
        for j in range(len(text)):
            if scores[i, j] > best_score:
                best_j, best_score = j, scores[i, j]
        if best_j is None:
            passthrough.append(i)
        else:
            assigned.setdefault(best_j, []).append(i)

    out_masks: list[np.ndarray] = []
    out_class: list[int | None] = []
    out_sources: list[list[int]] = []
    for j in sorted(assigned):
        rows = assigned[j]
        merged = np.zeros_like(sam[0])
        for i in rows:
            merged = merged | sam[i]
        out_masks.append(merged)
        out_class.append(j)
        out_sources.append(rows)
    for i in passthrough:
        out_masks.append(sam[i].copy())
        out_class.append(None)
        out_sources.append([i])
    return out_masks, out_class, out_sources


def oracle_depthwise_conv3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 cross-correlation with zero padding, evaluated cell by cell."""
    d, h, w = x.shape
    out = np.zeros_like(x)
    for c in range(d):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for u in (-1, 0, 1):
                    for v in (-1, 0, 1):
                        yy, xv = y + u, xx + v
                        if 0 <= yy < h and 0 <= xv < w:
                            acc += kernel[c, u + 1, v + 1] * x[c, yy, xv]
                out[c, y, xx] = acc
    return out


def oracle_mask_pool(f: np.ndarray, masks: list[np.ndarray]) -> np.ndarray:
    """Masked feature means via explicit summation; empty masks pool to zero."""
    d = f.shape[0]
    out = np.zeros((len(masks), d), dtype=np.float64)
    for k, mask in enumerate(masks):
        count = 0
        acc = np.zeros(d)
        h, w = mask.shape
        for y in range(h):
            for x in range(w):
                if mask[y, x]:
                    acc += f[:, y, x]
                    count += 1
        if count:
            out[k] = acc / count
    return out


def oracle_low_freq_inject(f: np.ndarray, masks: list[np.ndarray]) -> np.ndarray:
    """Dense evaluation of pooled-context add plus single-head attention over mask embeddings."""
    d, h, w = f.shape
    emb = oracle_mask_pool(f, masks)
    intra = f.copy()
    for k, mask in enumerate(masks):
        for y in range(h):
            for x in range(w):
                if mask[y, x]:
                    intra[:, y, x] += emb[k]
    out = intra.copy()
    n = len(masks)
    if n == 0:
        return out
    for y in range(h):
        for x in range(w):
            logits = [float(np.dot(intra[:, y, x], emb[k])) / math.sqrt(d) for k in range(n)]
            exps = [math.exp(v) for v in logits]
            total = sum(exps)
            attn = np.zeros(d)
            for k in range(n):
                attn += exps[k] / total * emb[k]
            out[:, y, x] += attn
    return out


def oracle_flood_fill_components(mask: np.ndarray, connectivity: int = 8) -> list[np.ndarray]:
    """Connected components by stack-based flood fill, in raster order of discovery."""
    if connectivity == 8:
        neighbors = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        neighbors = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    h, w = mask.shape
    seen = np.zeros_like(mask)
    components = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            comp = np.zeros_like(mask)
            stack = [(y, x)]
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                comp[cy, cx] = True
                for dy, dx in neighbors:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            components.append(comp)
    return components
