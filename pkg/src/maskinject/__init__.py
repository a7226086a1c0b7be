"""Mask-guided cost-map refinement toolkit: sparse point-prompt targets, shallow
mask aggregation, decoupled mask injection, and a synthetic-scene harness."""

from .masks import (
    BinaryMask,
    LabelMap,
    MaskSet,
    connected_components,
    downsample_mask,
    intersect_count,
    masks_from_labelmap,
    union_all,
    upsample_mask,
)
from .geometry import (
    DistanceField,
    bandwidth,
    euclidean_distance_transform,
    medial_skeleton,
    skeleton_distance_field,
)
from .prompts import (
    CostMap,
    PointPrompts,
    ProbabilityGrid,
    SamplerConfig,
    classify_scores,
    expected_points,
    probability_target,
    sample_points,
    text_masks_from_logits,
)
from .head import (
    PromptHeadParams,
    TrainConfig,
    head_forward,
    head_loss,
    init_head_params,
    train_head,
)
from .aggregate import AggregationResult, MatchMatrix, aggregate, matching_scores
from .inject import (
    FeatureMap,
    HighFreqParams,
    MaskEmbeddings,
    cross_attention,
    high_freq_inject,
    init_high_freq_params,
    intra_mask_context,
    low_freq_inject,
    mask_pool,
)
from .gradcheck import GradCheckReport, gradcheck
from .scenes import SceneConfig, default_suite, gen_scene, simulate_sam
from .pipeline import (
    BenchReport,
    alpha_sweep,
    bench_sampling,
    mean_iou,
    run_pipeline,
)

__all__ = [name for name in dir() if not name.startswith("_")]
