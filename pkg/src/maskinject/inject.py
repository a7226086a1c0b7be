"""Mask injection into feature maps, decoupled into a low-frequency path
(mask pooling, pooled-context add, cross-attention over mask embeddings) and a
high-frequency path (mask summary projection, per-cell MLP, depthwise
convolution, learnable per-channel gain).

Forward passes and analytic backward passes are both implemented here; the
backward passes recompute the cheap forward intermediates instead of threading
caches through the public API.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import MaskSet

DEFAULT_CHANNELS = 16
DEFAULT_CLASS_CAP = 4
DEFAULT_BOUNDARY_CAP = 3.0

_HIGH_BLOCKS = (
    "proj_w1",
    "proj_b1",
    "proj_w2",
    "proj_b2",
    "mlp_w1",
    "mlp_b1",
    "mlp_w2",
    "mlp_b2",
    "kernel",
    "gamma",
)


@dataclass(frozen=True)
class FeatureMap:
    """A dense channels-first feature grid."""

    values: np.ndarray  # (D, h, w) float64

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError("feature map must be (D, h, w)")
        if not np.isfinite(values).all():
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_h(self) -> int:
        return self.values.shape[1]

    @property
    def grid_w(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class MaskEmbeddings:
    """Per-mask pooled feature vectors; empty_rows lists masks that pooled over nothing."""

    vectors: np.ndarray  # (N, D) float64
    empty_rows: tuple[int, ...] = ()

    @property
    def n_masks(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class HighFreqParams:
    """Weights of the high-frequency path; gamma starts at 1 so the path opens gently."""

    proj_w1: np.ndarray  # (Hp, Cs)
    proj_b1: np.ndarray  # (Hp,)
    proj_w2: np.ndarray  # (Dp, Hp)
    proj_b2: np.ndarray  # (Dp,)
    mlp_w1: np.ndarray  # (Hm, D + Dp)
    mlp_b1: np.ndarray  # (Hm,)
    mlp_w2: np.ndarray  # (D, Hm)
    mlp_b2: np.ndarray  # (D,)
    kernel: np.ndarray  # (D, k, k), k odd
    gamma: np.ndarray  # (D,)

    def __post_init__(self):
        k = self.kernel.shape[1]
        if self.kernel.shape[2] != k or k % 2 == 0:
            raise ValueError("depthwise kernel must be square with odd size")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @property
    def stack_channels(self) -> int:
        return self.proj_w1.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _HIGH_BLOCKS}

    def copy(self) -> "HighFreqParams":
        return HighFreqParams(**{k: v.copy() for k, v in self.blocks().items()})

    def to_vector(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.blocks().values()])

    def from_vector(self, vec: np.ndarray) -> "HighFreqParams":
        """Rebuild params with this instance's shapes from a flat vector."""
        out = {}
        offset = 0
        for name, arr in self.blocks().items():
            out[name] = vec[offset : offset + arr.size].reshape(arr.shape).astype(np.float64)
            offset += arr.size
        if offset != vec.size:
            raise ValueError(f"expected vector of length {offset}, got {vec.size}")
        return HighFreqParams(**out)


def init_high_freq_params(
    channels: int = DEFAULT_CHANNELS,
    class_cap: int = DEFAULT_CLASS_CAP,
    proj_hidden: int = 8,
    proj_out: int = 8,
    mlp_hidden: int = 16,
    kernel_size: int = 3,
    seed: int = 0,
    scale: float = 0.3,
) -> HighFreqParams:
    rng = np.random.default_rng(seed)
    cs = 2 + class_cap
    d = channels
    return HighFreqParams(
        proj_w1=rng.normal(0.0, scale, (proj_hidden, cs)),
        proj_b1=rng.normal(0.0, scale, proj_hidden),
        proj_w2=rng.normal(0.0, scale, (proj_out, proj_hidden)),
        proj_b2=rng.normal(0.0, scale, proj_out),
        mlp_w1=rng.normal(0.0, scale, (mlp_hidden, d + proj_out)),
        mlp_b1=rng.normal(0.0, scale, mlp_hidden),
        mlp_w2=rng.normal(0.0, scale, (d, mlp_hidden)),
        mlp_b2=rng.normal(0.0, scale, d),
        kernel=rng.normal(0.0, scale, (d, kernel_size, kernel_size)),
        gamma=np.ones(d),
    )


def zero_mlp_high_freq_params(base: HighFreqParams) -> HighFreqParams:
    """Copy of base with both MLP stacks zeroed (the injection then adds a constant-free zero)."""
    out = base.copy()
    out.mlp_w1[:] = 0.0
    out.mlp_b1[:] = 0.0
    out.mlp_w2[:] = 0.0
    out.mlp_b2[:] = 0.0
    return out


def mask_summary_stack(
    masks: MaskSet,
    class_ids: list[int | None] | None = None,
    class_cap: int = DEFAULT_CLASS_CAP,
    boundary_cap: float = DEFAULT_BOUNDARY_CAP,
) -> np.ndarray:
    """Fixed-size per-cell encoding of a mask set.

    Channels: [coverage count, distance to the nearest mask-boundary cell capped
    at boundary_cap (the cap everywhere when there is no boundary), one presence
    bit per class id below class_cap]. Untagged masks default their id to the
    mask index. The channel count is independent of how many masks there are,
    which keeps downstream parameter shapes static.
    """
    h, w = masks.height, masks.width
    stack = np.zeros((2 + class_cap, h, w), dtype=np.float64)
    coverage = masks.coverage_counts()
    stack[0] = coverage

    covered = coverage > 0
    boundary = np.zeros_like(covered)
    if covered.any():
        inner = covered.copy()
        for shifted in (
            np.pad(covered, ((1, 0), (0, 0)))[:-1, :],
            np.pad(covered, ((0, 1), (0, 0)))[1:, :],
            np.pad(covered, ((0, 0), (1, 0)))[:, :-1],
            np.pad(covered, ((0, 0), (0, 1)))[:, 1:],
        ):
            inner &= shifted
        boundary = covered & ~inner
    if boundary.any():
        dist = ndimage.distance_transform_edt(~boundary)
        stack[1] = np.minimum(dist, boundary_cap)
    else:
        stack[1] = boundary_cap

    if class_ids is None:
        class_ids = list(range(len(masks)))
    if len(class_ids) != len(masks):
        raise ValueError("need one class id (or None) per mask")
    for m, cid in zip(masks.masks, class_ids):
        if cid is not None and 0 <= cid < class_cap:
            stack[2 + cid][m.bits] = 1.0
    return stack


def mask_pool(f: FeatureMap, masks: MaskSet) -> MaskEmbeddings:
    """Mean feature vector over each mask's cells; empty masks pool to zero and are flagged."""
    if (masks.height, masks.width) != (f.grid_h, f.grid_w):
        raise ValueError("masks are not rasterized at the feature map's resolution")
    flat = f.values.reshape(f.channels, -1)
    ind = masks.stack().reshape(len(masks), f.grid_h * f.grid_w)
    counts = ind.sum(axis=1)
    sums = ind.astype(np.float64) @ flat.T
    empty = np.nonzero(counts == 0)[0]
    safe = np.where(counts == 0, 1, counts)
    vectors = sums / safe[:, None]
    vectors[empty] = 0.0
    return MaskEmbeddings(vectors=vectors, empty_rows=tuple(int(i) for i in empty))


def intra_mask_context(f: FeatureMap, masks: MaskSet, emb: MaskEmbeddings) -> FeatureMap:
    """Add each covering mask's embedding to a cell's feature; uncovered cells pass through."""
    if emb.n_masks != len(masks):
        raise ValueError("one embedding row per mask required")
    flat = f.values.reshape(f.channels, -1)
    ind = masks.stack().reshape(len(masks), f.grid_h * f.grid_w).astype(np.float64)
    out = flat + emb.vectors.T @ ind
    return FeatureMap(out.reshape(f.values.shape))


def _attention(query: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """softmax(keys @ query / sqrt(D)) mixing of value rows; query (D, P), keys (N, D), values (N, Dv)."""
    d = query.shape[0]
    logits = keys @ query / math.sqrt(d)
    logits -= logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=0, keepdims=True)
    return values.T @ weights


def cross_attention(query: FeatureMap, emb: MaskEmbeddings) -> FeatureMap:
    """Single-head scaled dot-product attention of each cell over the mask embeddings.

    With zero embeddings the attention has nothing to say: the output is an
    all-zero map (and a warning is emitted).
    """
    if emb.n_masks == 0:
        warnings.warn("attention over zero mask embeddings yields a zero map", stacklevel=2)
        return FeatureMap(np.zeros_like(query.values))
    if emb.dim != query.channels:
        raise ValueError(f"embedding dim {emb.dim} != query channels {query.channels}")
    flat = query.values.reshape(query.channels, -1)
    out = _attention(flat, emb.vectors, emb.vectors)
    return FeatureMap(out.reshape(query.values.shape))


def cross_attention_backward(
    query: FeatureMap, emb: MaskEmbeddings, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of cross_attention's output w.r.t. the query map and the embeddings."""
    if emb.n_masks == 0:
        return np.zeros_like(query.values), np.zeros_like(emb.vectors)
    d = query.channels
    flat = query.values.reshape(d, -1)
    d_flat_out = d_out.reshape(d, -1)
    logits = emb.vectors @ flat / math.sqrt(d)
    logits -= logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=0, keepdims=True)

    d_emb = weights @ d_flat_out.T
    d_weights = emb.vectors @ d_flat_out
    inner = (weights * d_weights).sum(axis=0, keepdims=True)
    d_logits = weights * (d_weights - inner) / math.sqrt(d)
    d_query = emb.vectors.T @ d_logits
    d_emb += d_logits @ flat.T
    return d_query.reshape(query.values.shape), d_emb


def low_freq_inject(f: FeatureMap, masks: MaskSet) -> FeatureMap:
    """Pooled-context add followed by attention over the pooled embeddings, summed.

    With no masks the pooled context is empty and the output equals the input.
    """
    emb = mask_pool(f, masks)
    intra = intra_mask_context(f, masks, emb)
    if emb.n_masks == 0:
        return intra
    inter = cross_attention(intra, emb)
    return FeatureMap(intra.values + inter.values)


def low_freq_backward(f: FeatureMap, masks: MaskSet, d_out: np.ndarray) -> np.ndarray:
    """Gradient of low_freq_inject's output w.r.t. the input features."""
    d_ch = f.channels
    flat = f.values.reshape(d_ch, -1)
    ind = masks.stack().reshape(len(masks), f.grid_h * f.grid_w).astype(np.float64)
    counts = ind.sum(axis=1)
    safe = np.where(counts == 0, 1.0, counts)
    emb = (ind @ flat.T) / safe[:, None]
    emb[counts == 0] = 0.0
    intra = flat + emb.T @ ind

    d_flat_out = d_out.reshape(d_ch, -1)
    if len(masks) == 0:
        return d_flat_out.reshape(f.values.shape).copy()

    d_intra = d_flat_out.copy()
    d_q, d_emb = cross_attention_backward(
        FeatureMap(intra.reshape(f.values.shape)),
        MaskEmbeddings(emb),
        d_flat_out,
    )
    d_intra += d_q.reshape(d_ch, -1)

    d_f = d_intra.copy()
    d_emb += ind @ d_intra.T
    d_emb_scaled = d_emb / safe[:, None]
    d_emb_scaled[counts == 0] = 0.0
    d_f += d_emb_scaled.T @ ind
    return d_f.reshape(f.values.shape)


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[.., y, x] = arr[.., y + dy, x + dx], zero outside the canvas."""
    out = np.zeros_like(arr)
    h, w = arr.shape[-2:]
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, dy), min(h, h + dy))
    xs_src = slice(max(0, dx), min(w, w + dx))
    out[..., ys, xs] = arr[..., ys_src, xs_src]
    return out


def depthwise_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel cross-correlation with zero padding and stride 1."""
    k = kernel.shape[1]
    r = k // 2
    out = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            out += kernel[:, u, v][:, None, None] * _shift(x, u - r, v - r)
    return out


def depthwise_conv_backward(
    x: np.ndarray, kernel: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    k = kernel.shape[1]
    r = k // 2
    d_x = np.zeros_like(x)
    d_kernel = np.zeros_like(kernel)
    for u in range(k):
        for v in range(k):
            d_x += kernel[:, u, v][:, None, None] * _shift(d_out, -(u - r), -(v - r))
            d_kernel[:, u, v] = (d_out * _shift(x, u - r, v - r)).sum(axis=(1, 2))
    return d_x, d_kernel


def _high_freq_forward(
    f_h: FeatureMap, stack: np.ndarray, params: HighFreqParams
) -> dict[str, np.ndarray]:
    d, h, w = f_h.values.shape
    flat = f_h.values.reshape(d, -1)
    stack_flat = stack.reshape(stack.shape[0], -1)
    p1 = np.tanh(params.proj_w1 @ stack_flat + params.proj_b1[:, None])
    pr = params.proj_w2 @ p1 + params.proj_b2[:, None]
    x = np.concatenate([flat, pr], axis=0)
    h1 = np.tanh(params.mlp_w1 @ x + params.mlp_b1[:, None])
    mo = params.mlp_w2 @ h1 + params.mlp_b2[:, None]
    conv = depthwise_conv(mo.reshape(d, h, w), params.kernel)
    out = f_h.values + params.gamma[:, None, None] * conv
    return {
        "stack_flat": stack_flat, "p1": p1, "pr": pr, "x": x,
        "h1": h1, "mo": mo, "conv": conv, "out": out,
    }


def high_freq_inject(
    f_h: FeatureMap,
    masks: MaskSet,
    params: HighFreqParams,
    class_ids: list[int | None] | None = None,
) -> FeatureMap:
    """Add a gated, convolved readout of [features, projected mask summary] back onto the features.

    gamma scales the injected signal per channel; gamma = 0 reproduces the input
    exactly.
    """
    if params.channels != f_h.channels:
        raise ValueError("parameter channel count does not match the feature map")
    cap = params.stack_channels - 2
    stack = mask_summary_stack(masks, class_ids, class_cap=cap)
    cache = _high_freq_forward(f_h, stack, params)
    return FeatureMap(cache["out"])


def high_freq_backward(
    f_h: FeatureMap,
    masks: MaskSet,
    params: HighFreqParams,
    d_out: np.ndarray,
    class_ids: list[int | None] | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of high_freq_inject w.r.t. every parameter block and the input features."""
    d, h, w = f_h.values.shape
    cap = params.stack_channels - 2
    stack = mask_summary_stack(masks, class_ids, class_cap=cap)
    cache = _high_freq_forward(f_h, stack, params)

    d_f = d_out.copy()
    d_gamma = (d_out * cache["conv"]).sum(axis=(1, 2))
    d_conv = params.gamma[:, None, None] * d_out
    d_mo_grid, d_kernel = depthwise_conv_backward(
        cache["mo"].reshape(d, h, w), params.kernel, d_conv
    )
    d_mo = d_mo_grid.reshape(d, -1)

    d_mlp_w2 = d_mo @ cache["h1"].T
    d_mlp_b2 = d_mo.sum(axis=1)
    d_h1 = params.mlp_w2.T @ d_mo
    d_pre_m = d_h1 * (1.0 - cache["h1"] ** 2)
    d_mlp_w1 = d_pre_m @ cache["x"].T
    d_mlp_b1 = d_pre_m.sum(axis=1)
    d_x = params.mlp_w1.T @ d_pre_m

    d_f += d_x[:d].reshape(d, h, w)
    d_pr = d_x[d:]
    d_proj_w2 = d_pr @ cache["p1"].T
    d_proj_b2 = d_pr.sum(axis=1)
    d_p1 = params.proj_w2.T @ d_pr
    d_pre_p = d_p1 * (1.0 - cache["p1"] ** 2)
    d_proj_w1 = d_pre_p @ cache["stack_flat"].T
    d_proj_b1 = d_pre_p.sum(axis=1)

    grads = {
        "proj_w1": d_proj_w1,
        "proj_b1": d_proj_b1,
        "proj_w2": d_proj_w2,
        "proj_b2": d_proj_b2,
        "mlp_w1": d_mlp_w1,
        "mlp_b1": d_mlp_b1,
        "mlp_w2": d_mlp_w2,
        "mlp_b2": d_mlp_b2,
        "kernel": d_kernel,
        "gamma": d_gamma,
    }
    return grads, d_f
