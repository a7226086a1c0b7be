"""Central-difference verification of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .head import (
    PromptHeadParams,
    head_loss,
    head_forward,
    head_backward,
    init_head_params,
)
from .inject import (
    FeatureMap,
    HighFreqParams,
    MaskEmbeddings,
    cross_attention,
    cross_attention_backward,
    high_freq_backward,
    high_freq_inject,
    init_high_freq_params,
    low_freq_backward,
    low_freq_inject,
)
from .masks import BinaryMask, MaskSet
from .prompts import CostMap, ProbabilityGrid

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4

GRADCHECK_OPS = ("linear", "cross-attention", "low-freq", "high-freq", "head")


@dataclass
class GradCheckReport:
    """Max relative error between analytic and central-difference gradients, per block."""

    op: str
    tol: float
    step: float
    block_errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values()) if self.block_errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def lines(self) -> list[str]:
        out = [f"gradcheck {self.op}: tol={self.tol:g} step={self.step:g}"]
        for name, err in sorted(self.block_errors.items()):
            mark = "ok" if err < self.tol else "FAIL"
            out.append(f"  {name:12s} max rel err {err:.3e}  {mark}")
        out.append(f"  => {'PASS' if self.passed else 'FAIL'} (max {self.max_error:.3e})")
        return out


def finite_difference_gradient(f, x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function over a flat parameter vector."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        grad[i] = (f(x + bump) - f(x - bump)) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise |a - n| / max(|a|, |n|, floor), reduced to the worst entry."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def _require_finite(name: str, grad: np.ndarray) -> None:
    if not np.isfinite(grad).all():
        raise FloatingPointError(f"non-finite gradient in block {name!r}")


def _random_masks(rng: np.random.Generator, n: int, h: int, w: int) -> MaskSet:
    masks = tuple(BinaryMask(rng.random((h, w)) < 0.4) for _ in range(n))
    return MaskSet(w, h, masks)


def _check_linear(rng: np.random.Generator, step: float) -> dict[str, float]:
    # y = W @ x with loss sum(y * r): gradients are exact, so FD agreement is
    # limited only by the difference quotient itself.
    w = rng.normal(size=(5, 4))
    x = rng.normal(size=4)
    r = rng.normal(size=5)

    analytic = w.T @ r
    numeric = finite_difference_gradient(lambda v: float(r @ (w @ v)), x, step)
    return {"input": max_relative_error(analytic, numeric)}


def _check_cross_attention(rng: np.random.Generator, step: float) -> dict[str, float]:
    d, n, h, w = 4, 3, 3, 4
    query = FeatureMap(rng.normal(size=(d, h, w)))
    emb = MaskEmbeddings(rng.normal(size=(n, d)))
    r = rng.normal(size=(d, h, w))

    d_query, d_emb = cross_attention_backward(query, emb, r)
    _require_finite("query", d_query)
    _require_finite("embeddings", d_emb)

    def loss_q(vec: np.ndarray) -> float:
        out = cross_attention(FeatureMap(vec.reshape(d, h, w)), emb)
        return float((out.values * r).sum())

    def loss_e(vec: np.ndarray) -> float:
        out = cross_attention(query, MaskEmbeddings(vec.reshape(n, d)))
        return float((out.values * r).sum())

    return {
        "query": max_relative_error(
            d_query, finite_difference_gradient(loss_q, query.values.ravel(), step).reshape(d, h, w)
        ),
        "embeddings": max_relative_error(
            d_emb, finite_difference_gradient(loss_e, emb.vectors.ravel(), step).reshape(n, d)
        ),
    }


def _check_low_freq(rng: np.random.Generator, step: float) -> dict[str, float]:
    d, h, w = 4, 5, 5
    f = FeatureMap(rng.normal(size=(d, h, w)))
    masks = _random_masks(rng, 3, h, w)
    r = rng.normal(size=(d, h, w))

    d_f = low_freq_backward(f, masks, r)
    _require_finite("input", d_f)

    def loss(vec: np.ndarray) -> float:
        out = low_freq_inject(FeatureMap(vec.reshape(d, h, w)), masks)
        return float((out.values * r).sum())

    numeric = finite_difference_gradient(loss, f.values.ravel(), step).reshape(d, h, w)
    return {"input": max_relative_error(d_f, numeric)}


def _check_high_freq(rng: np.random.Generator, step: float) -> dict[str, float]:
    d, h, w = 4, 6, 6
    params = init_high_freq_params(
        channels=d, class_cap=3, proj_hidden=4, proj_out=4, mlp_hidden=5,
        seed=int(rng.integers(1 << 30)),
    )
    f = FeatureMap(rng.normal(size=(d, h, w)))
    masks = _random_masks(rng, 2, h, w)
    r = rng.normal(size=(d, h, w))

    grads, d_f = high_freq_backward(f, masks, params, r)
    for name, g in grads.items():
        _require_finite(name, g)
    _require_finite("input", d_f)

    def loss_params(vec: np.ndarray) -> float:
        out = high_freq_inject(f, masks, params.from_vector(vec))
        return float((out.values * r).sum())

    numeric_vec = finite_difference_gradient(loss_params, params.to_vector(), step)
    errors: dict[str, float] = {}
    offset = 0
    for name, arr in params.blocks().items():
        chunk = numeric_vec[offset : offset + arr.size].reshape(arr.shape)
        errors[name] = max_relative_error(grads[name], chunk)
        offset += arr.size

    def loss_input(vec: np.ndarray) -> float:
        out = high_freq_inject(FeatureMap(vec.reshape(d, h, w)), masks, params)
        return float((out.values * r).sum())

    numeric_f = finite_difference_gradient(loss_input, f.values.ravel(), step).reshape(d, h, w)
    errors["input"] = max_relative_error(d_f, numeric_f)
    return errors


def _head_instance(rng: np.random.Generator):
    k, gh, gw, c = 3, 4, 5, 6
    cost = CostMap(rng.uniform(-1.0, 1.0, size=(k, gh, gw)))
    params = init_head_params(channels=c, seed=int(rng.integers(1 << 30)))
    target = ProbabilityGrid(rng.uniform(0.0, 1.0, size=(gh, gw)), 16 * gw, 16 * gh)
    labels = rng.integers(0, k + 1, size=(gh, gw))
    return cost, params, target, labels, c


def _check_head(rng: np.random.Generator, step: float) -> dict[str, float]:
    cost, params, target, labels, c = _head_instance(rng)
    mse_weight = 0.5

    out = head_forward(cost, params)
    result = head_loss(out.pred, out.mask_logits, target, labels, mse_weight)
    grads, d_cost = head_backward(out.cache, result.d_pred, result.d_logits)
    for name, g in grads.items():
        _require_finite(name, g)
    _require_finite("input", d_cost)

    def loss_params(vec: np.ndarray) -> float:
        p = PromptHeadParams.from_vector(vec, c)
        o = head_forward(cost, p)
        return head_loss(o.pred, o.mask_logits, target, labels, mse_weight).loss

    numeric_vec = finite_difference_gradient(loss_params, params.to_vector(), step)
    errors: dict[str, float] = {}
    offset = 0
    for name, arr in params.blocks().items():
        chunk = numeric_vec[offset : offset + arr.size].reshape(arr.shape)
        errors[name] = max_relative_error(grads[name], chunk)
        offset += arr.size

    def loss_input(vec: np.ndarray) -> float:
        o = head_forward(CostMap(vec.reshape(cost.values.shape)), params)
        return head_loss(o.pred, o.mask_logits, target, labels, mse_weight).loss

    numeric_s = finite_difference_gradient(loss_input, cost.values.ravel(), step)
    errors["input"] = max_relative_error(d_cost, numeric_s.reshape(cost.values.shape))
    return errors


_CHECKS = {
    "linear": _check_linear,
    "cross-attention": _check_cross_attention,
    "low-freq": _check_low_freq,
    "high-freq": _check_high_freq,
    "head": _check_head,
}


def gradcheck(
    op: str, seed: int = 0, tol: float = DEFAULT_TOL, step: float = DEFAULT_STEP
) -> GradCheckReport:
    """Compare one operation's analytic gradients against central differences."""
    if op not in _CHECKS:
        raise ValueError(f"unknown gradcheck op {op!r}; choose from {GRADCHECK_OPS}")
    rng = np.random.default_rng(seed)
    errors = _CHECKS[op](rng, step)
    return GradCheckReport(op=op, tol=tol, step=step, block_errors=errors)
