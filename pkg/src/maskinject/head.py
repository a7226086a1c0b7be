"""A small learned head over per-class cost maps.

Each class's scalar score is embedded into C channels by a per-cell MLP, a
single-head scaled dot-product attention block mixes information across the
class axis, and two linear heads read out a per-cell sampling probability and
per-class mask logits. Forward, loss, and analytic gradients are implemented
directly in numpy (double precision) so the whole chain is finite-difference
checkable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .masks import LabelMap, masks_from_labelmap
from .prompts import (
    CostMap,
    ProbabilityGrid,
    SamplerConfig,
    cell_center_pixels,
    probability_target,
)

DEFAULT_EMBED_CHANNELS = 16
DEFAULT_STAGE2_WEIGHT = 0.1
DEFAULT_MSE_WEIGHT = 0.5

# Parameter blocks in vector-packing order.
_BLOCKS = (
    "embed_w1",
    "embed_b1",
    "embed_w2",
    "embed_b2",
    "attn_q",
    "attn_k",
    "attn_v",
    "prob_w",
    "prob_b",
    "mask_w",
    "mask_b",
)


@dataclass
class PromptHeadParams:
    """Weights of the head; channel count C is implied by the array shapes."""

    embed_w1: np.ndarray  # (C,)
    embed_b1: np.ndarray  # (C,)
    embed_w2: np.ndarray  # (C, C)
    embed_b2: np.ndarray  # (C,)
    attn_q: np.ndarray  # (C, C)
    attn_k: np.ndarray  # (C, C)
    attn_v: np.ndarray  # (C, C)
    prob_w: np.ndarray  # (C,)
    prob_b: np.ndarray  # ()
    mask_w: np.ndarray  # (C,)
    mask_b: np.ndarray  # ()

    @property
    def channels(self) -> int:
        return self.embed_w1.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _BLOCKS}

    def copy(self) -> "PromptHeadParams":
        return PromptHeadParams(**{k: v.copy() for k, v in self.blocks().items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.blocks().values())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.blocks().values()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, channels: int) -> "PromptHeadParams":
        template = zero_head_params(channels)
        out = {}
        offset = 0
        for name, arr in template.blocks().items():
            size = arr.size
            out[name] = vec[offset : offset + size].reshape(arr.shape).astype(np.float64)
            offset += size
        if offset != vec.size:
            raise ValueError(f"expected vector of length {offset}, got {vec.size}")
        return cls(**out)


def zero_head_params(channels: int = DEFAULT_EMBED_CHANNELS) -> PromptHeadParams:
    c = channels
    return PromptHeadParams(
        embed_w1=np.zeros(c),
        embed_b1=np.zeros(c),
        embed_w2=np.zeros((c, c)),
        embed_b2=np.zeros(c),
        attn_q=np.zeros((c, c)),
        attn_k=np.zeros((c, c)),
        attn_v=np.zeros((c, c)),
        prob_w=np.zeros(c),
        prob_b=np.zeros(()),
        mask_w=np.zeros(c),
        mask_b=np.zeros(()),
    )


def init_head_params(
    channels: int = DEFAULT_EMBED_CHANNELS, seed: int = 0, scale: float = 0.3
) -> PromptHeadParams:
    """Deterministic small-random initialization."""
    rng = np.random.default_rng(seed)
    c = channels
    return PromptHeadParams(
        embed_w1=rng.normal(0.0, scale, c),
        embed_b1=rng.normal(0.0, scale, c),
        embed_w2=rng.normal(0.0, scale / math.sqrt(c), (c, c)),
        embed_b2=rng.normal(0.0, scale, c),
        attn_q=rng.normal(0.0, scale / math.sqrt(c), (c, c)),
        attn_k=rng.normal(0.0, scale / math.sqrt(c), (c, c)),
        attn_v=rng.normal(0.0, scale / math.sqrt(c), (c, c)),
        prob_w=rng.normal(0.0, scale, c),
        prob_b=rng.normal(0.0, scale, ()),
        mask_w=rng.normal(0.0, scale, c),
        mask_b=rng.normal(0.0, scale, ()),
    )


@dataclass
class HeadForwardCache:
    """Intermediates saved by head_forward for the backward pass.

    Activations are cell-major, (P, K, C) with P = grid cells, so the linear
    layers run as single large matrix products.
    """

    s: np.ndarray  # (P, K) input scores
    e1: np.ndarray  # (P, K, C) tanh output of the first embed layer
    e: np.ndarray  # (P, K, C) embedded scores
    q: np.ndarray  # (P, K, C)
    k: np.ndarray  # (P, K, C)
    v: np.ndarray  # (P, K, C)
    attn: np.ndarray  # (P, K, K) softmax weights, query axis first
    s_en: np.ndarray  # (P, K, C) enriched embedding
    pooled: np.ndarray  # (P, C) class-mean of s_en
    pred: np.ndarray  # (P,) sigmoid probability
    grid_shape: tuple[int, int]
    params: PromptHeadParams


@dataclass
class HeadOutput:
    pred: ProbabilityGrid
    mask_logits: np.ndarray  # (K, h, w)
    cache: HeadForwardCache


def head_forward(
    s: CostMap,
    params: PromptHeadParams,
    image_w: int | None = None,
    image_h: int | None = None,
) -> HeadOutput:
    """Run the head on a cost map.

    Returns per-cell probabilities (sigmoid-squashed, so an all-zero map under
    zero weights predicts 0.5 everywhere) and per-class mask logits.
    """
    k_classes, gh, gw = s.values.shape
    c = params.channels
    p_cells = gh * gw
    sv = np.ascontiguousarray(s.values.reshape(k_classes, p_cells).T)  # (P, K)

    def per_vector(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        # Apply a (C_out, C_in) map to every (cell, class) vector in one GEMM.
        return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))

    pre1 = sv[:, :, None] * params.embed_w1[None, None, :] + params.embed_b1[None, None, :]
    e1 = np.tanh(pre1)
    e = per_vector(e1, params.embed_w2) + params.embed_b2[None, None, :]

    q = per_vector(e, params.attn_q)
    kt = per_vector(e, params.attn_k)
    v = per_vector(e, params.attn_v)
    scores = q @ kt.transpose(0, 2, 1) / math.sqrt(c)  # (P, K, K), keys on the last axis
    scores -= scores.max(axis=2, keepdims=True)
    exps = np.exp(scores)
    attn = exps / exps.sum(axis=2, keepdims=True)
    mixed = attn @ v
    s_en = e + mixed

    pooled = s_en.mean(axis=1)  # (P, C)
    plogit = pooled @ params.prob_w + float(params.prob_b)
    pred = 1.0 / (1.0 + np.exp(-plogit))
    mask_logits = s_en @ params.mask_w + float(params.mask_b)  # (P, K)

    if image_w is None:
        image_w = 16 * gw
    if image_h is None:
        image_h = 16 * gh
    cache = HeadForwardCache(
        s=sv, e1=e1, e=e, q=q, k=kt, v=v, attn=attn, s_en=s_en,
        pooled=pooled, pred=pred, grid_shape=(gh, gw), params=params,
    )
    grid = ProbabilityGrid(pred.reshape(gh, gw), image_w, image_h)
    if not (np.isfinite(pred).all() and np.isfinite(mask_logits).all()):
        raise FloatingPointError("head produced non-finite outputs")
    logits_grid = np.ascontiguousarray(mask_logits.T).reshape(k_classes, gh, gw)
    return HeadOutput(pred=grid, mask_logits=logits_grid, cache=cache)


def head_backward(
    cache: HeadForwardCache, d_pred: np.ndarray, d_logits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate loss gradients on the head outputs to parameters and input.

    d_pred is the gradient on the post-sigmoid probabilities, (h, w); d_logits
    on the mask logits, (K, h, w). Returns (parameter gradients, input gradient).
    """
    params = cache.params
    c = params.channels
    p_cells, k_classes, _ = cache.e.shape
    gh, gw = cache.grid_shape

    d_pred = d_pred.reshape(p_cells)
    d_ml = np.ascontiguousarray(d_logits.reshape(k_classes, p_cells).T)  # (P, K)

    def flat(x: np.ndarray) -> np.ndarray:
        return x.reshape(-1, x.shape[-1])

    d_plogit = d_pred * cache.pred * (1.0 - cache.pred)
    g_prob_w = cache.pooled.T @ d_plogit
    g_prob_b = np.array(d_plogit.sum())
    d_pooled = d_plogit[:, None] * params.prob_w[None, :]  # (P, C)

    d_s_en = np.broadcast_to(d_pooled[:, None, :] / k_classes, cache.s_en.shape).copy()
    d_s_en += d_ml[:, :, None] * params.mask_w[None, None, :]
    g_mask_w = np.tensordot(d_ml, cache.s_en, axes=([0, 1], [0, 1]))
    g_mask_b = np.array(d_ml.sum())

    d_e = d_s_en.copy()
    d_mixed = d_s_en

    d_attn = d_mixed @ cache.v.transpose(0, 2, 1)  # (P, K, K)
    d_v = cache.attn.transpose(0, 2, 1) @ d_mixed  # (P, K, C)
    inner = (cache.attn * d_attn).sum(axis=2, keepdims=True)
    d_scores = cache.attn * (d_attn - inner) / math.sqrt(c)
    d_q = d_scores @ cache.k
    d_k = d_scores.transpose(0, 2, 1) @ cache.q

    g_attn_q = flat(d_q).T @ flat(cache.e)
    g_attn_k = flat(d_k).T @ flat(cache.e)
    g_attn_v = flat(d_v).T @ flat(cache.e)
    d_e += (flat(d_q) @ params.attn_q).reshape(d_e.shape)
    d_e += (flat(d_k) @ params.attn_k).reshape(d_e.shape)
    d_e += (flat(d_v) @ params.attn_v).reshape(d_e.shape)

    g_embed_w2 = flat(d_e).T @ flat(cache.e1)
    g_embed_b2 = d_e.sum(axis=(0, 1))
    d_e1 = (flat(d_e) @ params.embed_w2).reshape(d_e.shape)
    d_pre1 = d_e1 * (1.0 - cache.e1 ** 2)
    g_embed_w1 = (d_pre1 * cache.s[:, :, None]).sum(axis=(0, 1))
    g_embed_b1 = d_pre1.sum(axis=(0, 1))
    d_s = d_pre1 @ params.embed_w1  # (P, K)

    grads = {
        "embed_w1": g_embed_w1,
        "embed_b1": g_embed_b1,
        "embed_w2": g_embed_w2,
        "embed_b2": g_embed_b2,
        "attn_q": g_attn_q,
        "attn_k": g_attn_k,
        "attn_v": g_attn_v,
        "prob_w": g_prob_w,
        "prob_b": g_prob_b,
        "mask_w": g_mask_w,
        "mask_b": g_mask_b,
    }
    d_input = np.ascontiguousarray(d_s.T).reshape(k_classes, gh, gw)
    return grads, d_input


@dataclass
class LossResult:
    loss: float
    ce: float
    mse: float
    all_background: bool  # warning flag: no foreground cells fed the CE term
    d_pred: np.ndarray  # (h, w) gradient on pred probabilities
    d_logits: np.ndarray  # (K, h, w) gradient on mask logits


def head_loss(
    pred: ProbabilityGrid,
    mask_logits: np.ndarray,
    target: ProbabilityGrid,
    target_labels: np.ndarray,
    mse_weight: float = DEFAULT_MSE_WEIGHT,
) -> LossResult:
    """Masked cross-entropy plus weighted MSE against the probability target.

    target_labels is a (h, w) integer grid; 0 marks background cells, which are
    excluded from the cross-entropy mean. Label k > 0 corresponds to logit
    channel k - 1.
    """
    if mse_weight < 0:
        raise ValueError("mse_weight must be >= 0")
    k_classes, gh, gw = mask_logits.shape
    labels = np.asarray(target_labels)
    if labels.shape != (gh, gw):
        raise ValueError(f"label grid shape {labels.shape} does not match logits {(gh, gw)}")
    if labels.max(initial=0) > k_classes:
        raise ValueError("label id exceeds the number of logit channels")
    if pred.probs.shape != target.probs.shape:
        raise ValueError("prediction and target grids differ in shape")

    diff = pred.probs - target.probs
    n_cells = diff.size
    mse = float((diff ** 2).mean())
    d_pred = 2.0 * diff / n_cells * mse_weight

    logits = mask_logits.reshape(k_classes, gh * gw)
    flat_labels = labels.reshape(gh * gw)
    fg = flat_labels > 0
    n_fg = int(fg.sum())
    d_logits = np.zeros_like(logits)
    if n_fg == 0:
        ce = 0.0
        all_background = True
    else:
        all_background = False
        shifted = logits - logits.max(axis=0, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=0))
        log_sm = shifted - log_z[None, :]
        idx = flat_labels[fg] - 1
        cols = np.nonzero(fg)[0]
        ce = float(-log_sm[idx, cols].mean())
        sm = np.exp(log_sm)
        d_logits[:, cols] = sm[:, cols] / n_fg
        d_logits[idx, cols] -= 1.0 / n_fg

    loss = ce + mse_weight * mse
    return LossResult(
        loss=loss,
        ce=ce,
        mse=mse,
        all_background=all_background,
        d_pred=d_pred.reshape(gh, gw),
        d_logits=d_logits.reshape(k_classes, gh, gw),
    )


def loss_and_gradients(
    params: PromptHeadParams,
    cost: CostMap,
    target: ProbabilityGrid,
    target_labels: np.ndarray,
    mse_weight: float = DEFAULT_MSE_WEIGHT,
) -> tuple[LossResult, dict[str, np.ndarray], np.ndarray]:
    """Full forward + loss + backward for one item; returns (loss, parameter grads, input grad)."""
    out = head_forward(cost, params)
    result = head_loss(out.pred, out.mask_logits, target, target_labels, mse_weight)
    grads, d_cost = head_backward(out.cache, result.d_pred, result.d_logits)
    return result, grads, d_cost


def rasterize_labels(lm: LabelMap, grid_h: int, grid_w: int) -> np.ndarray:
    """Grid-cell labels: the label of the pixel containing each cell center."""
    py, px = cell_center_pixels(grid_h, grid_w, lm.width, lm.height)
    return lm.labels[py[:, None], px[None, :]]


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch gradient descent with a fixed step size."""

    steps: int = 200
    step_size: float = 5.0
    mse_weight: float = DEFAULT_MSE_WEIGHT
    sampler: SamplerConfig = SamplerConfig()
    init_seed: int = 0
    init_scale: float = 0.3
    channels: int = DEFAULT_EMBED_CHANNELS


@dataclass
class TrainTrace:
    loss: np.ndarray  # (steps + 1,) loss before each update, plus the final loss
    ce: np.ndarray
    mse: np.ndarray


def train_head(
    dataset: list[tuple[CostMap, LabelMap]],
    cfg: TrainConfig,
    params: PromptHeadParams | None = None,
) -> tuple[PromptHeadParams, TrainTrace]:
    """Minimize the head loss over a dataset of (cost map, full-resolution label map) pairs.

    Targets and grid labels are precomputed per item. Because the head acts
    cell by cell, the items are stacked along the grid's row axis into a single
    batch, so one step is one forward/backward pass; the cross-entropy then
    averages over all foreground cells of the batch. Raises if the loss goes
    non-finite, naming the offending step.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if params is None:
        params = init_head_params(cfg.channels, seed=cfg.init_seed, scale=cfg.init_scale)
    else:
        params = params.copy()

    costs, targets, label_grids = [], [], []
    k_classes = dataset[0][0].num_classes
    for cost, lm in dataset:
        gh, gw = cost.grid_h, cost.grid_w
        if (gh, gw) != (cfg.sampler.grid_h, cfg.sampler.grid_w):
            raise ValueError("cost map grid does not match the sampler grid")
        if cost.num_classes != k_classes:
            raise ValueError("all items must share the same class count")
        target = probability_target(masks_from_labelmap(lm), cfg.sampler)
        costs.append(cost.values)
        targets.append(target.raw)
        label_grids.append(rasterize_labels(lm, gh, gw))
    stacked_cost = CostMap(np.concatenate(costs, axis=1))
    stacked_target = ProbabilityGrid(
        np.concatenate(targets, axis=0), dataset[0][0].grid_w * 16, stacked_cost.grid_h * 16
    )
    stacked_labels = np.concatenate(label_grids, axis=0)

    losses, ces, mses = [], [], []
    for step in range(cfg.steps + 1):
        try:
            with np.errstate(over="ignore"):
                result, grads, _ = loss_and_gradients(
                    params, stacked_cost, stacked_target, stacked_labels, cfg.mse_weight
                )
        except FloatingPointError as err:
            raise RuntimeError(f"training diverged at step {step}: {err}") from err
        if not math.isfinite(result.loss):
            raise RuntimeError(f"training diverged at step {step}: loss is not finite")
        losses.append(result.loss)
        ces.append(result.ce)
        mses.append(result.mse)
        if step == cfg.steps:
            break
        for name, arr in params.blocks().items():
            arr -= cfg.step_size * grads[name]

    trace = TrainTrace(loss=np.array(losses), ce=np.array(ces), mse=np.array(mses))
    return params, trace


def composed_stage2_loss(
    base_ce: float, head_loss_value: float, weight: float = DEFAULT_STAGE2_WEIGHT
) -> float:
    """Second-stage objective: the base segmentation CE plus a down-weighted head loss."""
    return base_ce + weight * head_loss_value
