"""Central finite-difference verification of the reverse-mode gradients.

Every differentiable primitive gets a small randomized check, and the
full encoder-to-contrastive-loss pipeline gets an end-to-end one.  The
harness perturbs each parameter entry by ``+/-eps`` (64-bit), re-evaluates
the loss closure, and compares the centered difference against the
recorded gradient.  Relative error uses ``|a - f| / max(|a|, |f|, 1)``
so near-zero entries degrade to an absolute comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Graph, Tensor

# A case builder returns named parameters and a loss closure that reads
# their current .data on every call (so nudges are visible to re-runs).
CaseBuilder = Callable[[np.random.Generator, type], tuple[dict[str, Tensor], Callable[[], Tensor]]]


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s}  {self.name:34s}  max rel err {self.max_rel_err:.3e}  (tol {self.tolerance:.1e})"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Worst-entry relative disagreement, floored to absolute below 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / denom))


def finite_difference(loss_fn: Callable[[], Tensor], param: Tensor, eps: float) -> np.ndarray:
    """Centered finite-difference gradient of ``loss_fn`` w.r.t. ``param``.

    Mutates ``param.data`` in place entry by entry and restores it; must
    run outside any active graph.
    """
    if T.is_recording():
        raise ContractError("finite_difference must not run inside an active graph")
    flat = param.data.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        kept = flat[i]
        flat[i] = kept + eps
        hi = loss_fn().item()
        flat[i] = kept - eps
        lo = loss_fn().item()
        flat[i] = kept
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad.reshape(param.data.shape)


def check_case(
    name: str,
    build: CaseBuilder,
    seed: int = 0,
    eps: float = 1e-4,
    tol: float = 1e-4,
    dtype=np.float64,
) -> CheckResult:
    """Compare recorded gradients against finite differences for one case."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    params, loss_fn = build(rng, dtype)
    with Graph() as graph:
        loss = loss_fn()
    auto = graph.backward(loss, list(params.values()))
    worst = 0.0
    for (pname, param), grad in zip(params.items(), auto):
        fd = finite_difference(loss_fn, param, eps)
        worst = max(worst, relative_error(grad, fd))
    return CheckResult(name, worst, tol, worst < tol, time.perf_counter() - started)


def _rand(rng: np.random.Generator, shape, dtype, low=-1.0, high=1.0) -> np.ndarray:
    return rng.uniform(low, high, size=shape).astype(dtype)


def _away_from_zero(rng: np.random.Generator, shape, dtype, lo=0.2, hi=1.0) -> np.ndarray:
    """Magnitudes bounded away from 0 so kinked ops differentiate cleanly."""
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (sign * rng.uniform(lo, hi, size=shape)).astype(dtype)


def op_cases() -> list[tuple[str, CaseBuilder]]:
    """One finite-difference case per differentiable primitive."""

    def unary(fn, sampler=_rand):
        def build(rng, dtype):
            x = Tensor(sampler(rng, (4, 5), dtype), requires_grad=True)
            w = Tensor(_rand(rng, (4, 5), dtype))
            return {"x": x}, lambda: T.reduce_sum(T.mul(fn(x), w))

        return build

    def binary(fn, sampler_b=_rand):
        def build(rng, dtype):
            a = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
            b = Tensor(sampler_b(rng, (4, 5), dtype), requires_grad=True)
            w = Tensor(_rand(rng, (4, 5), dtype))
            return {"a": a, "b": b}, lambda: T.reduce_sum(T.mul(fn(a, b), w))

        return build

    def broadcast_add(rng, dtype):
        a = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        b = Tensor(_rand(rng, (5,), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (4, 5), dtype))
        return {"a": a, "b": b}, lambda: T.reduce_sum(T.mul(T.add(a, b), w))

    def matmul_case(rng, dtype):
        a = Tensor(_rand(rng, (3, 4), dtype), requires_grad=True)
        b = Tensor(_rand(rng, (4, 2), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (3, 2), dtype))
        return {"a": a, "b": b}, lambda: T.reduce_sum(T.mul(T.matmul(a, b), w))

    def transpose_case(rng, dtype):
        x = Tensor(_rand(rng, (3, 5), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (5, 3), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.transpose(x), w))

    def reshape_case(rng, dtype):
        x = Tensor(_rand(rng, (3, 4), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (2, 6), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.reshape(x, (2, 6)), w))

    def broadcast_to_case(rng, dtype):
        x = Tensor(_rand(rng, (1, 5), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (4, 5), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.broadcast_to(x, (4, 5)), w))

    def reduce_sum_axis(rng, dtype):
        x = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (4,), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.reduce_sum(x, axis=1), w))

    def reduce_mean_axis(rng, dtype):
        x = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (5,), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.reduce_mean(x, axis=0), w))

    def gather_rows_case(rng, dtype):
        x = Tensor(_rand(rng, (6, 3), dtype), requires_grad=True)
        idx = np.array([4, 0, 4, 2])  # repeated row exercises additive scatter
        w = Tensor(_rand(rng, (4, 3), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.gather_rows(x, idx), w))

    def gather_pixels_case(rng, dtype):
        x = Tensor(_rand(rng, (3, 4, 4), dtype), requires_grad=True)
        idx = np.array([0, 5, 5, 15, 7])
        w = Tensor(_rand(rng, (5, 3), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.gather_pixels(x, idx), w))

    def softmax_case(rng, dtype):
        x = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (4, 5), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.softmax(x, axis=1), w))

    def l2_normalize_case(rng, dtype):
        x = Tensor(_away_from_zero(rng, (4, 5), dtype, 0.3, 1.0), requires_grad=True)
        w = Tensor(_rand(rng, (4, 5), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.l2_normalize(x), w))

    def conv2d_case(rng, dtype):
        x = Tensor(_rand(rng, (2, 6, 6), dtype), requires_grad=True)
        k = Tensor(_rand(rng, (3, 2, 3, 3), dtype), requires_grad=True)
        b = Tensor(_rand(rng, (3,), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (3, 3, 3), dtype))
        return {"x": x, "k": k, "b": b}, lambda: T.reduce_sum(T.mul(T.conv2d(x, k, b, stride=2, padding=1), w))

    def conv2d_edge_case(rng, dtype):
        x = Tensor(_rand(rng, (2, 6, 6), dtype), requires_grad=True)
        k = Tensor(_rand(rng, (3, 2, 3, 3), dtype), requires_grad=True)
        b = Tensor(_rand(rng, (3,), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (3, 3, 3), dtype))
        return {"x": x, "k": k, "b": b}, lambda: T.reduce_sum(
            T.mul(T.conv2d(x, k, b, stride=2, padding=1, pad_mode="edge"), w)
        )

    def upsample_case(rng, dtype):
        x = Tensor(_rand(rng, (2, 3, 3), dtype), requires_grad=True)
        w = Tensor(_rand(rng, (2, 6, 6), dtype))
        return {"x": x}, lambda: T.reduce_sum(T.mul(T.upsample_nearest(x, 2), w))

    def squared_error_case(rng, dtype):
        a = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        b = Tensor(_rand(rng, (4, 5), dtype), requires_grad=True)
        return {"a": a, "b": b}, lambda: T.squared_error(a, b)

    return [
        ("add", binary(T.add)),
        ("add_broadcast", broadcast_add),
        ("sub", binary(T.sub)),
        ("mul", binary(T.mul)),
        ("div", binary(T.div, sampler_b=lambda r, s, d: _away_from_zero(r, s, d, 0.5, 1.5))),
        ("neg", unary(T.neg)),
        ("scale", unary(lambda x: T.scale(x, 1.7))),
        ("exp", unary(T.exp)),
        ("log", unary(T.log, sampler=lambda r, s, d: _rand(r, s, d, 0.2, 2.0))),
        ("sqrt", unary(T.sqrt, sampler=lambda r, s, d: _rand(r, s, d, 0.2, 2.0))),
        ("sigmoid", unary(T.sigmoid)),
        ("relu", unary(T.relu, sampler=_away_from_zero)),
        ("leaky_relu", unary(lambda x: T.leaky_relu(x, 0.2), sampler=_away_from_zero)),
        ("matmul", matmul_case),
        ("transpose", transpose_case),
        ("reshape", reshape_case),
        ("broadcast_to", broadcast_to_case),
        ("reduce_sum_axis", reduce_sum_axis),
        ("reduce_mean_axis", reduce_mean_axis),
        ("gather_rows", gather_rows_case),
        ("gather_pixels", gather_pixels_case),
        ("softmax", softmax_case),
        ("l2_normalize", l2_normalize_case),
        ("conv2d", conv2d_case),
        ("conv2d_edge", conv2d_edge_case),
        ("upsample_nearest", upsample_case),
        ("squared_error", squared_error_case),
    ]


def pipeline_case(rng: np.random.Generator, dtype=np.float64):
    """Encoder features through the dual weighted contrastive objective.

    Small widths (K = 8 patches, M = 3 hyperedges, 16 encoder channels)
    keep the entry-by-entry sweep under the stated budget while touching
    every parameter class end to end.
    """
    from .hypergraph import HypergraphConfig, init_hgnn_params
    from .losses import stnhcl_loss
    from .models import Encoder
    from .patches import PatchIdList, sample_patch_ids
    from .weighting import Heatmap, PatchPartition, WeightConfig, partition_patches

    size = 16
    num_patches = 8
    encoder = Encoder(rng, channels=(16, 16), dtype=dtype)
    x_img = Tensor(rng.uniform(0.0, 1.0, size=(3, size, size)).astype(dtype))
    y_img = Tensor(rng.uniform(0.0, 1.0, size=(3, size, size)).astype(dtype))

    hg_cfg = HypergraphConfig(num_edges=3, threshold=0.3, temperature=0.1, iters=10)
    # Weights flow through here (detach=False): a finite difference measures
    # the total derivative, so the recorded gradient must include the weight
    # path.  Training detaches them; that is a stop-gradient, checked apart.
    weight_cfg = WeightConfig(mu1=0.7, sigma1=0.5, mu2=0.1, sigma2=0.5, tau=0.07, detach=False)

    taps = (0, 1)
    branch_x = [init_hgnn_params(rng, c, 8, 8, dtype=dtype) for c in (16, 16)]
    branch_y = [init_hgnn_params(rng, c, 8, 8, dtype=dtype) for c in (16, 16)]

    # A fixed synthetic heatmap stands in for the discriminator: the
    # partition is discrete either way, so gradients do not cross it.
    heat = Heatmap(rng.uniform(0.0, 1.0, size=(size // 2, size // 2)), (size, size))
    id_rng = np.random.default_rng(rng.integers(2**32))
    partitions: list[PatchPartition] = []
    for tap in taps:
        hw = size // (2 ** (tap + 1))
        pool = sample_patch_ids((hw, hw), min(4 * num_patches, hw * hw), id_rng, layer=tap)
        partitions.append(partition_patches(heat, pool, num_patches))

    params: dict[str, Tensor] = dict(encoder.parameters())
    for tap, (px, py) in enumerate(zip(branch_x, branch_y)):
        params[f"hgnn.l{tap}.x.theta1"] = px.theta1
        params[f"hgnn.l{tap}.x.theta2"] = px.theta2
        params[f"hgnn.l{tap}.y.theta1"] = py.theta1
        params[f"hgnn.l{tap}.y.theta2"] = py.theta2

    def loss_fn() -> Tensor:
        # Clustering re-derives from a fixed seed on every call so the
        # evaluation stays a deterministic function of parameter values.
        cluster_rng = np.random.default_rng(1234)
        feats_x = encoder.forward(x_img)
        feats_y = encoder.forward(y_img)
        total = None
        for tap, part in zip(taps, partitions):
            term = stnhcl_loss(
                part,
                feats_x[tap],
                feats_y[tap],
                hg_cfg,
                weight_cfg,
                branch_x[tap],
                branch_y[tap],
                cluster_rng,
            )
            total = term if total is None else T.add(total, term)
        return total

    return params, loss_fn


def run_suite(eps: float = 1e-4, tol: float = 1e-4, seed: int = 0, trials_per_op: int = 3) -> list[CheckResult]:
    """Finite-difference check of every primitive plus the full pipeline."""
    results = []
    for i in range(trials_per_op):
        for name, build in op_cases():
            label = name if trials_per_op == 1 else f"{name}[{i}]"
            results.append(check_case(label, build, seed=seed + i, eps=eps, tol=tol))
    results.append(check_case("encoder_to_stnhcl_pipeline", pipeline_case, seed=seed, eps=eps, tol=tol))
    return results


def suite_passed(results: Iterable[CheckResult]) -> bool:
    return all(r.passed for r in results)
