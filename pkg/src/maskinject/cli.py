"""Command-line interface.

Subcommands: gen-scene, tspp-target, sample-points, smagg, dmi-forward,
gradcheck, pipeline, bench, alpha-sweep, render. A flat key=value config file
can preset any flag (--config), the MASKINJECT_SEED environment variable
presets --seed, and explicit flags win over both. Output files are byte-stable
for a fixed seed; timing figures go to stdout only.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .aggregate import DEFAULT_ALPHA, DEFAULT_EPS, aggregate
from .gradcheck import DEFAULT_TOL, GRADCHECK_OPS, gradcheck
from .head import (
    DEFAULT_EMBED_CHANNELS,
    TrainConfig,
    init_head_params,
    rasterize_labels,
    train_head,
)
from .inject import (
    FeatureMap,
    high_freq_inject,
    init_high_freq_params,
    low_freq_inject,
)
from .masks import LabelMap, distinct_labels, masks_from_labelmap
from .pipeline import (
    alpha_sweep,
    bench_sampling,
    mean_iou,
    run_pipeline,
)
from .prompts import (
    CostMap,
    ProbabilityGrid,
    SamplerConfig,
    probability_target,
    sample_points,
)
from .scenes import SHAPE_FAMILIES, SceneConfig, default_suite, gen_scene

_CONFIG_KEYS = {
    "width", "height", "objects", "classes", "family", "noise",
    "splits", "grid", "gp", "mp", "seed", "alpha", "eps", "jobs",
}


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise SystemExit(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _default_seed() -> int:
    return int(os.environ.get("MASKINJECT_SEED", "0"))


def _parse_splits(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi or lo))


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--family", choices=SHAPE_FAMILIES, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--splits", type=str, default=None, help="Voronoi splits per region, lo:hi")


def _scene_config(args, cfg: dict[str, str]) -> SceneConfig:
    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in cfg:
            return cast(cfg[key])
        return default

    base = SceneConfig()
    return SceneConfig(
        width=pick(args.width, "width", int, base.width),
        height=pick(args.height, "height", int, base.height),
        n_objects=pick(args.objects, "objects", int, base.n_objects),
        num_classes=pick(args.classes, "classes", int, base.num_classes),
        family=pick(args.family, "family", str, base.family),
        noise=pick(args.noise, "noise", float, base.noise),
        splits=pick(
            _parse_splits(args.splits) if args.splits else None,
            "splits",
            _parse_splits,
            base.splits,
        ),
        seed=_seed_of(args, cfg),
    )


def _seed_of(args, cfg: dict[str, str]) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    return _default_seed()


def _sampler_config(args, cfg: dict[str, str]) -> SamplerConfig:
    base = SamplerConfig()
    grid = args.grid if args.grid is not None else int(cfg.get("grid", base.grid_h))
    return SamplerConfig(
        g_p=args.gp if args.gp is not None else int(cfg.get("gp", base.g_p)),
        m_p=args.mp if args.mp is not None else int(cfg.get("mp", base.m_p)),
        grid_h=grid,
        grid_w=grid,
        seed=_seed_of(args, cfg),
    )


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=None, help="prompt grid side length")
    p.add_argument("--gp", type=int, default=None, help="area per expected point")
    p.add_argument("--mp", type=int, default=None, help="max expected points per mask")


def _cmd_gen_scene(args) -> int:
    cfg = _load_config(args.config)
    scene = _scene_config(args, cfg)
    labels, cost = gen_scene(scene)
    fileio.write_labelmap_pgm(args.out_labels, labels)
    if args.out_cost:
        fileio.write_fgrid(args.out_cost, cost.values)
    print(f"scene: {scene.n_objects} objects, {len(distinct_labels(labels))} classes present")
    return 0


def _cmd_tspp_target(args) -> int:
    cfg = _load_config(args.config)
    sampler = _sampler_config(args, cfg)
    labels = fileio.read_labelmap_pgm(args.labels)
    target = probability_target(masks_from_labelmap(labels), sampler)
    fileio.write_fgrid(args.out, target.raw)
    total = float(target.raw.sum())
    print(f"target mass {total:.6f} over {sampler.grid_h}x{sampler.grid_w} cells")
    if target.skipped:
        print(f"skipped masks with empty cell rasterization: {list(target.skipped)}")
    return 0


def _cmd_sample_points(args) -> int:
    cfg = _load_config(args.config)
    sampler = _sampler_config(args, cfg)
    raw = fileio.read_fgrid(args.probs)
    if raw.ndim != 2:
        raise SystemExit("--probs must hold a 2-D grid")
    image_w = args.width if args.width is not None else 16 * raw.shape[1]
    image_h = args.height if args.height is not None else 16 * raw.shape[0]
    grid = ProbabilityGrid(raw, image_w, image_h)
    points = sample_points(grid, sampler)
    fileio.write_points_csv(args.out, points)
    print(f"sampled {points.count} points (expected {grid.probs.sum():.3f})")
    return 0


def _cmd_smagg(args) -> int:
    cfg = _load_config(args.config)
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", DEFAULT_ALPHA))
    eps = args.eps if args.eps is not None else float(cfg.get("eps", DEFAULT_EPS))
    sam_labels = fileio.read_labelmap_pgm(args.sam)
    text_labels = fileio.read_labelmap_pgm(args.text)
    sam = masks_from_labelmap(sam_labels)
    text = masks_from_labelmap(text_labels)
    text_ids = distinct_labels(text_labels)
    result = aggregate(sam, text, alpha=alpha, eps=eps)

    out = np.zeros((sam.height, sam.width), dtype=np.int64)
    for i, m in enumerate(result.masks.masks):
        out[m.bits] = i + 1
    fileio.write_labelmap_pgm(args.out, LabelMap(out))
    with open(args.report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["output_index", "class", "source_indices"])
        for i, (cid, sources) in enumerate(zip(result.class_of, result.provenance)):
            label = text_ids[cid] if cid is not None else ""
            writer.writerow([i, label, ";".join(str(s) for s in sources)])
    print(f"{len(sam)} proposals -> {result.n_masks} masks at alpha={alpha}")
    return 0


def _cmd_dmi_forward(args) -> int:
    features = fileio.read_fgrid(args.features)
    if features.ndim != 3:
        raise SystemExit("--features must hold a (D, h, w) tensor")
    f = FeatureMap(features)
    label_map = fileio.read_labelmap_pgm(args.masks)
    if (label_map.height, label_map.width) != (f.grid_h, f.grid_w):
        label_map = LabelMap(rasterize_labels(label_map, f.grid_h, f.grid_w))
    masks = masks_from_labelmap(label_map)
    if args.mode == "low":
        out = low_freq_inject(f, masks)
    else:
        params = init_high_freq_params(channels=f.channels, seed=args.seed)
        if args.params:
            params = params.from_vector(fileio.read_fgrid(args.params).ravel())
        class_ids = [k - 1 for k in distinct_labels(label_map)]
        out = high_freq_inject(f, masks, params, class_ids)
    fileio.write_fgrid(args.out, out.values)
    print(f"{args.mode}-frequency injection over {len(masks)} masks")
    return 0


def _cmd_gradcheck(args) -> int:
    report = gradcheck(args.op, seed=args.seed, tol=args.tol)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    scene_cfg = _scene_config(args, cfg)
    sampler = _sampler_config(args, cfg)
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", DEFAULT_ALPHA))

    labels, cost = gen_scene(scene_cfg)
    head_params = init_head_params(seed=_seed_of(args, cfg))
    if args.train_steps > 0:
        # Train on sibling scenes of the same shape so class count and grid match.
        suite = [
            replace(scene_cfg, n_objects=max(scene_cfg.n_objects, 2),
                    seed=scene_cfg.seed + 1000 + i)
            for i in range(args.train_scenes)
        ]
        dataset = [(c, l) for (l, c) in [gen_scene(s) for s in suite]]
        train_cfg = TrainConfig(
            steps=args.train_steps,
            sampler=replace(sampler, grid_h=cost.grid_h, grid_w=cost.grid_w, seed=0),
        )
        head_params, _ = train_head(dataset, train_cfg)
    high_params = init_high_freq_params(
        channels=DEFAULT_EMBED_CHANNELS + 2, seed=_seed_of(args, cfg)
    )
    result = run_pipeline(
        labels, cost, head_params, high_params, scene_cfg, sampler,
        alpha=alpha,
        use_aggregation=not args.no_smagg,
        use_injection=not args.no_injection,
    )
    fileio.write_labelmap_pgm(args.out, result.semantic)
    if args.diag:
        with open(args.diag, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_points", "n_sam", "n_masks", "mean_iou"])
            writer.writerow([
                result.diagnostics.n_points,
                result.diagnostics.n_sam,
                result.diagnostics.n_masks,
                f"{mean_iou(result.semantic, labels, cost.num_classes):.6f}",
            ])
    d = result.diagnostics
    print(f"points={d.n_points} proposals={d.n_sam} masks={d.n_masks}")
    for stage, seconds in d.timings.items():
        print(f"  {stage}: {seconds * 1000:.1f} ms")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    sampler = _sampler_config(args, cfg)
    seed = _seed_of(args, cfg)
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    suite = default_suite(seed=seed, n_scenes=args.scenes)
    strategies = tuple(args.strategies.split(","))
    report = bench_sampling(suite, sampler, strategies, bench_seed=seed, jobs=jobs)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "mean_points", "coverage_recall"])
        for name in strategies:
            s = report.per_strategy[name]
            writer.writerow([name, f"{s.mean_points:.4f}", f"{s.coverage_recall:.6f}"])
    for name in strategies:
        s = report.per_strategy[name]
        print(
            f"{name:12s} mean_points={s.mean_points:8.2f} recall={s.coverage_recall:.3f} "
            f"({s.seconds_per_image * 1000:.1f} ms/image)"
        )
    print(f"reference: {report.reference}")
    return 0


def _cmd_alpha_sweep(args) -> int:
    cfg = _load_config(args.config)
    sampler = _sampler_config(args, cfg)
    seed = _seed_of(args, cfg)
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    suite = default_suite(seed=seed, n_scenes=args.scenes)
    alphas = [float(a) for a in args.alphas.split(",")]
    head_params = init_head_params(seed=seed)
    high_params = init_high_freq_params(channels=DEFAULT_EMBED_CHANNELS + 2, seed=seed)
    report = alpha_sweep(
        suite, alphas, head_params, high_params, sampler, sweep_seed=seed, jobs=jobs
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "mean_iou", "mean_masks"])
        for row in report.rows:
            writer.writerow([row.alpha, f"{row.mean_iou:.6f}", f"{row.mean_masks:.4f}"])
    for row in report.rows:
        print(f"alpha={row.alpha:.2f} mean_iou={row.mean_iou:.4f} mean_masks={row.mean_masks:.2f}")
    print("mask counts monotone in alpha:", report.masks_monotone())
    return 0


def _cmd_render(args) -> int:
    grid = fileio.read_fgrid(args.input)
    if grid.ndim != 2:
        raise SystemExit("render expects a 2-D FGRID")
    fileio.render_heatmap(grid, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskinject",
        description="Sparse prompt targets, mask aggregation, and mask injection on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: MASKINJECT_SEED or 0)")

    p = sub.add_parser("gen-scene", help="generate a synthetic labeled scene and cost map")
    common(p)
    _add_scene_flags(p)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-cost", default=None)
    p.set_defaults(fn=_cmd_gen_scene)

    p = sub.add_parser("tspp-target", help="probability targets from a ground-truth label map")
    common(p)
    _add_sampler_flags(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tspp_target)

    p = sub.add_parser("sample-points", help="Bernoulli-sample prompt points from a probability grid")
    common(p)
    _add_sampler_flags(p)
    p.add_argument("--probs", required=True)
    p.add_argument("--width", type=int, default=None, help="image width (default 16x grid)")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample_points)

    p = sub.add_parser("smagg", help="aggregate proposal masks under text-mask guidance")
    common(p)
    p.add_argument("--sam", required=True, help="proposal label map (PGM)")
    p.add_argument("--text", required=True, help="text-mask label map (PGM)")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_smagg)

    p = sub.add_parser("dmi-forward", help="run low- or high-frequency mask injection")
    common(p)
    p.add_argument("--features", required=True, help="(D, h, w) FGRID")
    p.add_argument("--masks", required=True, help="mask label map (PGM)")
    p.add_argument("--mode", choices=("low", "high"), required=True)
    p.add_argument("--params", default=None, help="flat FGRID of high-frequency parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_dmi_forward)

    p = sub.add_parser("gradcheck", help="compare analytic gradients against finite differences")
    common(p)
    p.add_argument("--op", choices=GRADCHECK_OPS, required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("pipeline", help="run the full chain on one generated scene")
    common(p)
    _add_scene_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--no-smagg", action="store_true")
    p.add_argument("--no-injection", action="store_true")
    p.add_argument("--train-steps", type=int, default=0,
                   help="train the head for this many steps first (0 = use initialization)")
    p.add_argument("--train-scenes", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--diag", default=None)
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("bench", help="compare sampling strategies on a scene suite")
    common(p)
    _add_sampler_flags(p)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--strategies", default="grid32,random-k,tspp-target")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("alpha-sweep", help="sweep the aggregation threshold")
    common(p)
    _add_sampler_flags(p)
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--alphas", default="0.3,0.5,0.7")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_alpha_sweep)

    p = sub.add_parser("render", help="render a 2-D FGRID as a PPM heatmap")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
