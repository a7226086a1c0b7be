"""End-to-end composition on synthetic scenes, the sampling-efficiency benchmark,
and the aggregation-threshold sweep.

The pipeline runs: cost map -> head -> point sampling -> simulated mask
proposals -> aggregation -> mask injection -> mask-guided cost refinement ->
per-cell argmax. Masks steer the refinement only through pooled statistics and
attention weights, so inaccurate proposals degrade gracefully instead of being
pasted into the output.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregate import DEFAULT_ALPHA, AggregationResult, aggregate
from .head import HeadOutput, PromptHeadParams, head_forward
from .inject import (
    FeatureMap,
    HighFreqParams,
    high_freq_inject,
    low_freq_inject,
    mask_pool,
    _attention,
)
from .masks import BinaryMask, LabelMap, MaskSet, downsample_mask, masks_from_labelmap
from .prompts import (
    CostMap,
    PointPrompts,
    ProbabilityGrid,
    SamplerConfig,
    cell_centers,
    classify_scores,
    probability_target,
    sample_points,
    text_masks_from_logits,
)
from .scenes import SceneConfig, gen_scene, simulate_sam

# Reference constants reported alongside benchmark output, for orientation only;
# nothing asserts synthetic numbers against them.
REFERENCE_POINTS = {
    "grid32": 1024,
    "sparse-target-a150": 41,
    "sparse-target-pc59": 37,
    "reduction-percent": 96.0,
}

DEFAULT_INJECT_WEIGHT = 0.5


@dataclass
class Diagnostics:
    n_points: int
    n_sam: int
    n_masks: int
    n_masks_at_grid: int
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class PipelineResult:
    semantic: LabelMap
    diagnostics: Diagnostics
    aggregation: AggregationResult
    head_output: HeadOutput
    points: PointPrompts
    refined_scores: np.ndarray  # (K, H, W), full resolution


def synthetic_features(cost: CostMap, head_out: HeadOutput) -> FeatureMap:
    """Feature map for injection: the raw cost channels, the class-mean embedded
    cost channels, and a normalized coordinate grid stacked channelwise.

    Keeping the cost channels first means the injected output carries refined
    class scores directly in its leading channels.
    """
    emb = head_out.cache.e.mean(axis=1).T  # (C, P)
    gh, gw = cost.grid_h, cost.grid_w
    coords = np.empty((2, gh, gw), dtype=np.float64)
    coords[0] = ((np.arange(gh) + 0.5) / gh)[:, None]
    coords[1] = ((np.arange(gw) + 0.5) / gw)[None, :]
    values = np.concatenate([cost.values, emb.reshape(-1, gh, gw), coords], axis=0)
    return FeatureMap(values)


def passthrough_aggregation(sam: MaskSet) -> AggregationResult:
    """The no-aggregation result: every proposal kept unchanged and untagged."""
    return AggregationResult(
        masks=MaskSet(sam.width, sam.height, sam.masks, disjoint=sam.disjoint),
        class_of=(None,) * len(sam),
        provenance=tuple((i,) for i in range(len(sam))),
    )


def refine_cost(
    cost: CostMap,
    features: FeatureMap,
    masks_at_grid: MaskSet,
    masks_full: MaskSet,
    class_ids: list[int | None],
    high_params: HighFreqParams | None,
    weight: float = DEFAULT_INJECT_WEIGHT,
) -> np.ndarray:
    """Mask-guided refinement of the raw cost map, returned at full resolution.

    The feature map (whose leading channels are the raw cost) passes through
    the low-frequency injection at the coarse grid, is upsampled, and then
    through the high-frequency injection against the full-resolution masks,
    whose precise edges are exactly what that path is for. The injected class
    channels then replace a weight-sized fraction of the raw scores on pixels
    some proposal covers; the injected increment is halved because the
    pooled-context add and the attention mix each contribute roughly one
    mask-mean of signal. Pixels no proposal covers keep their raw scores, so
    refinement never reaches beyond the proposals.
    """
    k = cost.num_classes
    factor = masks_full.width // cost.grid_w
    cost_full = np.repeat(np.repeat(cost.values, factor, axis=1), factor, axis=2)
    if len(masks_full) == 0:
        return cost_full
    injected = low_freq_inject(features, masks_at_grid)
    injected_full = FeatureMap(
        np.repeat(np.repeat(injected.values, factor, axis=1), factor, axis=2)
    )
    if high_params is not None:
        injected_full = high_freq_inject(
            injected_full, masks_full, high_params, class_ids
        )
    delta = 0.5 * (injected_full.values[:k] - cost_full)
    covered = masks_full.coverage_counts() > 0
    refined = cost_full.copy()
    refined[:, covered] = (
        (1.0 - weight) * cost_full[:, covered] + weight * delta[:, covered]
    )
    return refined


def run_pipeline(
    labels: LabelMap,
    cost: CostMap,
    head_params: PromptHeadParams,
    high_params: HighFreqParams | None,
    scene_cfg: SceneConfig,
    sampler_cfg: SamplerConfig,
    alpha: float = DEFAULT_ALPHA,
    use_aggregation: bool = True,
    use_injection: bool = True,
    inject_weight: float = DEFAULT_INJECT_WEIGHT,
    bg_threshold: float | None = None,
) -> PipelineResult:
    """Compose the full chain on one scene and return the semantic map plus diagnostics.

    bg_threshold is the margin a cell's best refined score must clear to leave
    the background; by default it adapts to the scene's cost-map noise
    (1.5 * noise amplitude), since the best of K noisy background channels
    clears any fixed sub-noise margin far too often.
    """
    if bg_threshold is None:
        bg_threshold = 1.5 * scene_cfg.noise
    timings: dict[str, float] = {}
    factor = labels.width // cost.grid_w
    if cost.grid_w * factor != labels.width or cost.grid_h * factor != labels.height:
        raise ValueError("cost grid does not evenly divide the label map")

    t0 = time.perf_counter()
    head_out = head_forward(cost, head_params, image_w=labels.width, image_h=labels.height)
    timings["head"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    points = sample_points(head_out.pred, sampler_cfg)
    timings["sampling"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sam = simulate_sam(labels, points, scene_cfg)
    timings["proposals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    text = text_masks_from_logits(head_out.mask_logits)
    if use_aggregation:
        result = aggregate(sam, text, alpha)
    else:
        result = passthrough_aggregation(sam)
    timings["aggregation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid_masks: list[BinaryMask] = []
    for m in result.masks.masks:
        small = downsample_mask(m, factor)
        if small.area > 0:
            grid_masks.append(small)
    masks_at_grid = MaskSet(cost.grid_w, cost.grid_h, tuple(grid_masks))

    if use_injection:
        features = synthetic_features(cost, head_out)
        refined = refine_cost(
            cost, features, masks_at_grid, result.masks, list(result.class_of),
            high_params, inject_weight,
        )
    else:
        refined = np.repeat(np.repeat(cost.values, factor, axis=1), factor, axis=2)
    timings["injection"] = time.perf_counter() - t0

    semantic = LabelMap(classify_scores(refined, bg_threshold))

    diag = Diagnostics(
        n_points=points.count,
        n_sam=len(sam),
        n_masks=result.n_masks,
        n_masks_at_grid=len(masks_at_grid),
        timings=timings,
    )
    return PipelineResult(
        semantic=semantic,
        diagnostics=diag,
        aggregation=result,
        head_output=head_out,
        points=points,
        refined_scores=refined,
    )


def mean_iou(pred: LabelMap, gt: LabelMap, num_classes: int) -> float:
    """Mean per-class IoU over the classes present in either map; 1.0 when both are empty."""
    ious = []
    for k in range(1, num_classes + 1):
        p = pred.labels == k
        g = gt.labels == k
        union = int(np.count_nonzero(p | g))
        if union == 0:
            continue
        ious.append(int(np.count_nonzero(p & g)) / union)
    return float(np.mean(ious)) if ious else 1.0


def _scene_seed(base: int, index: int, salt: int) -> int:
    return int(np.random.SeedSequence((base, index, salt)).generate_state(1)[0])


def map_scenes(fn, configs: list[SceneConfig], jobs: int = 1) -> list:
    """Apply fn to each scene config, optionally across threads; order is by index
    and every scene uses only its own derived RNG streams, so parallelism never
    changes results."""
    if jobs <= 1:
        return [fn(i, cfg) for i, cfg in enumerate(configs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, i, cfg) for i, cfg in enumerate(configs)]
        return [f.result() for f in futures]


@dataclass
class StrategyStats:
    mean_points: float
    coverage_recall: float
    seconds_per_image: float


@dataclass
class BenchReport:
    per_strategy: dict[str, StrategyStats]
    n_scenes: int
    reference: dict[str, float] = field(default_factory=lambda: dict(REFERENCE_POINTS))


def _coverage_recall(gt_masks: MaskSet, points: PointPrompts) -> float:
    if len(gt_masks) == 0:
        return 1.0
    hit = 0
    for m in gt_masks.masks:
        ok = False
        for x, y in points.points:
            px = min(max(int(x), 0), gt_masks.width - 1)
            py = min(max(int(y), 0), gt_masks.height - 1)
            if m.bits[py, px]:
                ok = True
                break
        if ok:
            hit += 1
    return hit / len(gt_masks)


def bench_sampling(
    suite: list[SceneConfig],
    sampler: SamplerConfig = SamplerConfig(),
    strategies: tuple[str, ...] = ("grid32", "random-k", "tspp-target"),
    bench_seed: int = 0,
    jobs: int = 1,
) -> BenchReport:
    """Compare point budgets and ground-truth coverage across sampling strategies.

    grid32 prompts every grid cell; tspp-target samples the probability target;
    random-k draws as many uniform cells (without replacement) as tspp-target
    used on average, rounded. Recall counts ground-truth masks hit by at least
    one point.
    """
    for s in strategies:
        if s not in ("grid32", "random-k", "tspp-target"):
            raise ValueError(f"unknown strategy {s!r}")
    if not suite:
        raise ValueError("benchmark suite must be non-empty")

    def prepare(i: int, cfg: SceneConfig):
        labels, _ = gen_scene(cfg)
        gt = masks_from_labelmap(labels)
        target = probability_target(gt, sampler)
        return labels, gt, target

    prepared = map_scenes(prepare, suite, jobs)

    stats: dict[str, StrategyStats] = {}
    target_counts: list[int] = []
    target_points: list[PointPrompts] = []
    for i, (labels, gt, target) in enumerate(prepared):
        cfg_i = replace(sampler, seed=_scene_seed(bench_seed, i, 1))
        pts = sample_points(target, cfg_i)
        target_counts.append(pts.count)
        target_points.append(pts)

    if "tspp-target" in strategies:
        t0 = time.perf_counter()
        recalls = [
            _coverage_recall(gt, pts)
            for (labels, gt, target), pts in zip(prepared, target_points)
        ]
        dt = time.perf_counter() - t0
        stats["tspp-target"] = StrategyStats(
            mean_points=float(np.mean(target_counts)),
            coverage_recall=float(np.mean(recalls)),
            seconds_per_image=dt / len(suite),
        )

    if "grid32" in strategies:
        t0 = time.perf_counter()
        recalls = []
        counts = []
        for labels, gt, target in prepared:
            centers = cell_centers(sampler.grid_h, sampler.grid_w, labels.width, labels.height)
            pts = PointPrompts(
                points=centers.reshape(-1, 2),
                cell_probs=np.ones(sampler.grid_h * sampler.grid_w),
            )
            counts.append(pts.count)
            recalls.append(_coverage_recall(gt, pts))
        dt = time.perf_counter() - t0
        stats["grid32"] = StrategyStats(
            mean_points=float(np.mean(counts)),
            coverage_recall=float(np.mean(recalls)),
            seconds_per_image=dt / len(suite),
        )

    if "random-k" in strategies:
        k = int(round(float(np.mean(target_counts))))
        t0 = time.perf_counter()
        recalls = []
        counts = []
        for i, (labels, gt, target) in enumerate(prepared):
            rng = np.random.default_rng(_scene_seed(bench_seed, i, 2))
            n_cells = sampler.grid_h * sampler.grid_w
            chosen = rng.choice(n_cells, size=min(k, n_cells), replace=False)
            centers = cell_centers(
                sampler.grid_h, sampler.grid_w, labels.width, labels.height
            ).reshape(-1, 2)
            pts = PointPrompts(points=centers[chosen], cell_probs=np.full(chosen.size, k / n_cells))
            counts.append(pts.count)
            recalls.append(_coverage_recall(gt, pts))
        dt = time.perf_counter() - t0
        stats["random-k"] = StrategyStats(
            mean_points=float(np.mean(counts)),
            coverage_recall=float(np.mean(recalls)),
            seconds_per_image=dt / len(suite),
        )

    return BenchReport(per_strategy=stats, n_scenes=len(suite))


@dataclass
class AlphaSweepRow:
    alpha: float
    mean_iou: float
    mean_masks: float
    masks_per_scene: tuple[int, ...]


@dataclass
class AlphaSweepReport:
    rows: list[AlphaSweepRow]

    def masks_monotone(self) -> bool:
        """True iff per-scene output mask counts never decrease as alpha rises."""
        ordered = sorted(self.rows, key=lambda r: r.alpha)
        for a, b in zip(ordered, ordered[1:]):
            for na, nb in zip(a.masks_per_scene, b.masks_per_scene):
                if nb < na:
                    return False
        return True


def alpha_sweep(
    suite: list[SceneConfig],
    alphas: list[float],
    head_params: PromptHeadParams,
    high_params: HighFreqParams | None,
    sampler: SamplerConfig = SamplerConfig(),
    sweep_seed: int = 0,
    jobs: int = 1,
) -> AlphaSweepReport:
    """Run the pipeline across aggregation thresholds and report IoU and mask counts."""
    for a in alphas:
        if not 0.0 <= a < 1.0:
            raise ValueError(f"alpha {a} outside [0, 1)")

    def prepare(i: int, cfg: SceneConfig):
        labels, cost = gen_scene(cfg)
        return cfg, labels, cost

    prepared = map_scenes(prepare, suite, jobs)

    rows = []
    for alpha in alphas:
        ious = []
        counts = []
        for i, (cfg, labels, cost) in enumerate(prepared):
            cfg_i = replace(sampler, seed=_scene_seed(sweep_seed, i, 3))
            result = run_pipeline(
                labels, cost, head_params, high_params, cfg, cfg_i, alpha=alpha
            )
            ious.append(mean_iou(result.semantic, labels, cost.num_classes))
            counts.append(result.diagnostics.n_masks)
        rows.append(
            AlphaSweepRow(
                alpha=alpha,
                mean_iou=float(np.mean(ious)),
                mean_masks=float(np.mean(counts)),
                masks_per_scene=tuple(counts),
            )
        )
    return AlphaSweepReport(rows=rows)
