import numpy as np
import pytest

from maskinject.head import (
    PromptHeadParams,
    TrainConfig,
    composed_stage2_loss,
    head_backward,
    head_forward,
    head_loss,
    init_head_params,
    loss_and_gradients,
    rasterize_labels,
    train_head,
    zero_head_params,
)
from maskinject.gradcheck import gradcheck
from maskinject.masks import LabelMap
from maskinject.prompts import CostMap, ProbabilityGrid, SamplerConfig
from maskinject.scenes import SceneConfig, gen_scene


class TestHeadForward:
    def test_zero_map_zero_weights_gives_half(self):
        cost = CostMap(np.zeros((2, 4, 4)))
        out = head_forward(cost, zero_head_params(8))
        assert np.all(out.pred.probs == 0.5)
        assert np.all(out.mask_logits == 0.0)

    def test_single_class_shapes(self, rng):
        cost = CostMap(rng.uniform(-1, 1, (1, 6, 7)))
        out = head_forward(cost, init_head_params(8, seed=0))
        assert out.pred.probs.shape == (6, 7)
        assert out.mask_logits.shape == (1, 6, 7)

    def test_outputs_finite_and_bounded(self, rng):
        cost = CostMap(rng.uniform(-1, 1, (3, 8, 8)))
        out = head_forward(cost, init_head_params(seed=4))
        assert np.isfinite(out.mask_logits).all()
        assert np.all((out.pred.probs > 0) & (out.pred.probs < 1))

    def test_vector_round_trip(self):
        params = init_head_params(8, seed=5)
        back = PromptHeadParams.from_vector(params.to_vector(), 8)
        for name, arr in params.blocks().items():
            assert np.array_equal(arr, getattr(back, name))


class TestHeadLoss:
    def test_perfect_prediction_limit(self, rng):
        gh = gw = 4
        target = ProbabilityGrid(rng.uniform(0, 1, (gh, gw)), 64, 64)
        pred = ProbabilityGrid(target.raw.copy(), 64, 64)
        labels = rng.integers(1, 3, size=(gh, gw))
        logits = np.full((2, gh, gw), -50.0)
        for y in range(gh):
            for x in range(gw):
                logits[labels[y, x] - 1, y, x] = 50.0
        result = head_loss(pred, logits, target, labels, mse_weight=0.5)
        assert result.mse == 0.0
        assert result.ce == pytest.approx(0.0, abs=1e-12)
        assert result.loss == pytest.approx(0.0, abs=1e-12)

    def test_all_background_flag(self, rng):
        gh = gw = 3
        target = ProbabilityGrid(np.zeros((gh, gw)), 48, 48)
        pred = ProbabilityGrid(rng.uniform(0, 1, (gh, gw)), 48, 48)
        result = head_loss(pred, rng.normal(size=(2, gh, gw)), target, np.zeros((gh, gw), int))
        assert result.all_background
        assert result.ce == 0.0
        assert result.loss == pytest.approx(0.5 * result.mse)

    def test_label_above_channel_count_raises(self):
        target = ProbabilityGrid(np.zeros((2, 2)), 32, 32)
        with pytest.raises(ValueError):
            head_loss(target, np.zeros((2, 2, 2)), target, np.full((2, 2), 3))

    def test_default_mse_weight_is_half(self):
        target = ProbabilityGrid(np.zeros((2, 2)), 32, 32)
        pred = ProbabilityGrid(np.ones((2, 2)), 32, 32)
        result = head_loss(pred, np.zeros((1, 2, 2)), target, np.zeros((2, 2), int))
        assert result.loss == pytest.approx(0.5 * 1.0)  # ce drops out, mse = 1


class TestGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_full_chain_matches_finite_differences(self, seed):
        report = gradcheck("head", seed=seed)
        assert report.passed, report.lines()

    def test_backward_input_gradient_shape(self, rng):
        cost = CostMap(rng.uniform(-1, 1, (3, 4, 4)))
        params = init_head_params(6, seed=0)
        target = ProbabilityGrid(rng.uniform(0, 1, (4, 4)), 64, 64)
        labels = rng.integers(0, 4, size=(4, 4))
        result, grads, d_cost = loss_and_gradients(params, cost, target, labels)
        assert d_cost.shape == cost.values.shape
        assert set(grads) == set(params.blocks())


class TestTraining:
    def make_dataset(self, n=3, seed=0):
        out = []
        for i in range(n):
            labels, cost = gen_scene(SceneConfig(width=128, height=128, n_objects=3,
                                                 num_classes=4, seed=seed + i))
            out.append((cost, labels))
        return out

    def sampler(self):
        return SamplerConfig(grid_h=8, grid_w=8)

    def test_zero_steps_leaves_params_unchanged(self):
        dataset = self.make_dataset(1)
        cfg = TrainConfig(steps=0, sampler=self.sampler())
        init = init_head_params(cfg.channels, seed=cfg.init_seed, scale=cfg.init_scale)
        params, trace = train_head(dataset, cfg)
        for name, arr in params.blocks().items():
            assert np.array_equal(arr, getattr(init, name))
        assert trace.loss.shape == (1,)

    def test_loss_decreases(self):
        dataset = self.make_dataset(4)
        cfg = TrainConfig(steps=60, sampler=self.sampler())
        params, trace = train_head(dataset, cfg)
        assert trace.loss[-1] < 0.5 * trace.loss[0]
        assert params.all_finite()

    def test_empty_dataset_raises(self):
        with pytest.raises(ValueError):
            train_head([], TrainConfig())

    def test_divergence_names_step(self):
        dataset = self.make_dataset(2)
        cfg = TrainConfig(steps=400, step_size=1e4, sampler=self.sampler())
        with pytest.raises(RuntimeError, match=r"step \d+"):
            train_head(dataset, cfg)

    def test_grid_mismatch_raises(self):
        dataset = self.make_dataset(1)
        with pytest.raises(ValueError):
            train_head(dataset, TrainConfig(sampler=SamplerConfig(grid_h=32, grid_w=32)))


class TestLabelRasterization:
    def test_uses_cell_center_pixels(self):
        labels = np.zeros((16, 16), dtype=np.int64)
        labels[:8, :8] = 2
        grid = rasterize_labels(LabelMap(labels), 4, 4)
        assert grid.shape == (4, 4)
        assert np.array_equal(grid[:2, :2], np.full((2, 2), 2))
        assert grid[3, 3] == 0


def test_stage2_composition():
    assert composed_stage2_loss(1.25, 0.5) == pytest.approx(1.25 + 0.1 * 0.5)
    assert composed_stage2_loss(2.0, 3.0, weight=0.25) == pytest.approx(2.75)
