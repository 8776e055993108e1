"""Contrastive and adversarial objectives.

The contrastive family all scores one anchor set against one candidate
set of equal size, diagonal pairs positive, off-diagonal negative:

* ``info_nce``        — plain temperature-scaled cross-entropy.
* ``weighted_nce``    — arbitrary non-negative weights on the negatives.
* ``monce_loss``      — row-softmax (optimal-transport style) weights.
* ``sthcl_loss``      — hypergraph-convolved embeddings, unweighted.
* ``stnhcl_loss``     — hypergraph embeddings over a tissue / background
                        partition with dual normal-pdf negative weights.

``lsgan_losses`` supplies the least-squares adversarial pair and
``total_generator_loss`` assembles the lambda-weighted generator total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .hypergraph import Hypergraph, HypergraphConfig, HgnnParams, build_incidence, hgnn_conv, soft_kmeans
from .patches import EmbeddingSet, gather_patches
from .tensor import Tensor
from .weighting import PatchPartition, WeightConfig, monce_weights, normal_weights

ADV_MODES = ("lsgan", "verbatim")


@dataclass
class LossReport:
    """Scalar loss terms of one generator step.

    ``total`` always equals ``lambda1 * (adv + aux) + lambda2 * (stnhcl +
    patchnce)`` for the lambdas it was assembled with.
    """

    adv: float = 0.0
    patchnce: float = 0.0
    stnhcl: float = 0.0
    aux: float = 0.0
    total: float = 0.0
    per_layer: tuple = ()


def _vectors(embeddings) -> Tensor:
    vec = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings
    if not isinstance(vec, Tensor):
        vec = Tensor(np.asarray(vec))
    if vec.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {vec.shape}")
    return vec


def _paired(emb_x, emb_y) -> tuple[Tensor, Tensor]:
    zx, zy = _vectors(emb_x), _vectors(emb_y)
    if zx.shape != zy.shape:
        raise ContractError(f"anchor and candidate sets differ in shape: {zx.shape} vs {zy.shape}")
    if zx.shape[0] < 1:
        raise ContractError("contrastive losses need at least one pair")
    return zx, zy


def _diagonal(matrix: Tensor) -> Tensor:
    eye = Tensor(np.eye(matrix.shape[0], dtype=matrix.dtype.type))
    return T.reduce_sum(T.mul(matrix, eye), axis=1)


def info_nce(emb_x, emb_y, tau: float) -> Tensor:
    """Mean cross-entropy of each anchor against its co-located candidate.

    The denominator runs over the full candidate row (positive included),
    so a single pair scores exactly zero.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    zx, zy = _paired(emb_x, emb_y)
    logits = T.scale(T.matmul(zx, T.transpose(zy)), 1.0 / tau)
    row_max = logits.data.max(axis=1, keepdims=True)
    shifted = T.sub(logits, row_max)
    lse = T.add(T.log(T.reduce_sum(T.exp(shifted), axis=1)), row_max[:, 0])
    return T.reduce_mean(T.sub(lse, _diagonal(logits)))


def weighted_nce(emb_x, emb_y, weights, tau: float) -> Tensor:
    """InfoNCE with per-negative weights; the positive keeps weight 1.

    ``weights`` must be a non-negative (k, k) matrix; the diagonal entries
    are ignored (internally pinned to 1).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    zx, zy = _paired(emb_x, emb_y)
    w = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=zx.dtype.type))
    k = zx.shape[0]
    if w.shape != (k, k):
        raise ShapeError(f"weights must have shape ({k}, {k}), got {w.shape}")
    if np.any(w.data < 0):
        raise ContractError("negative pair weights are not meaningful here")
    eye = np.eye(k, dtype=zx.dtype.type)
    pinned = T.add(T.mul(w, Tensor(1.0 - eye)), Tensor(eye))

    logits = T.scale(T.matmul(zx, T.transpose(zy)), 1.0 / tau)
    row_max = logits.data.max(axis=1, keepdims=True)
    exp_shifted = T.exp(T.sub(logits, row_max))
    denom = T.add(T.log(T.reduce_sum(T.mul(pinned, exp_shifted), axis=1)), row_max[:, 0])
    return T.reduce_mean(T.sub(denom, _diagonal(logits)))


def monce_loss(emb_x, emb_y, tau: float, mode: str = "hard", detach_weights: bool = True) -> Tensor:
    """Weighted NCE with row-softmax negative weights at temperature ``tau``."""
    zx, zy = _paired(emb_x, emb_y)
    wx, wy = (zx.detach(), zy.detach()) if detach_weights else (zx, zy)
    sims = T.matmul(wx, T.transpose(wy))
    return weighted_nce(zx, zy, monce_weights(sims, tau, mode), tau)


def hypergraph_embed(
    patch_features: Tensor,
    cfg: HypergraphConfig,
    params: HgnnParams,
    rng: np.random.Generator,
    topology: Hypergraph | None = None,
) -> tuple[Tensor, Hypergraph]:
    """Cluster patches, convolve over the induced hypergraph, normalize rows.

    Topology is derived from raw (detached) patch values — it is a
    discrete decision and carries no gradient.  Pass ``topology`` to
    reuse a hypergraph built elsewhere (e.g. the source branch's).
    """
    cfg.validate()
    if topology is None:
        membership = soft_kmeans(patch_features.data, cfg.num_edges, cfg.temperature, cfg.iters, rng)
        topology = build_incidence(membership, cfg.threshold)
    convolved = hgnn_conv(topology, patch_features, params)
    return T.l2_normalize(convolved), topology


def sthcl_loss(
    x_patches: Tensor,
    y_patches: Tensor,
    cfg: HypergraphConfig,
    params_x: HgnnParams,
    params_y: HgnnParams,
    tau: float,
    rng: np.random.Generator,
) -> Tensor:
    """Unweighted contrastive loss over hypergraph-convolved patch sets.

    Each branch clusters its own patches unless ``cfg.share_topology``
    re-uses the source-branch hypergraph for the translated branch.
    """
    zx, topology = hypergraph_embed(x_patches, cfg, params_x, rng)
    zy, _ = hypergraph_embed(
        y_patches, cfg, params_y, rng, topology=topology if cfg.share_topology else None
    )
    return info_nce(zx, zy, tau)


def _negative_weights(zx: Tensor, zy: Tensor, weight_cfg: WeightConfig, mu: float, sigma: float) -> Tensor | None:
    """Weight matrix per the configured strategy; ``None`` means unweighted."""
    if weight_cfg.strategy == "uniform":
        return None
    wx, wy = (zx.detach(), zy.detach()) if weight_cfg.detach else (zx, zy)
    sims = T.matmul(wx, T.transpose(wy))
    if weight_cfg.strategy == "dual_normal":
        if weight_cfg.similarity_domain == "logit":
            sims = T.scale(sims, 1.0 / weight_cfg.tau)
        return normal_weights(sims, mu, sigma)
    mode = "hard" if weight_cfg.strategy == "monce_hard" else "easy"
    return monce_weights(sims, weight_cfg.tau, mode)


def stnhcl_loss(
    partition: PatchPartition,
    x_features: Tensor,
    y_features: Tensor,
    hg_cfg: HypergraphConfig,
    weight_cfg: WeightConfig,
    params_x: HgnnParams,
    params_y: HgnnParams,
    rng: np.random.Generator,
) -> Tensor:
    """Dual-set weighted hypergraph contrastive loss on one tap layer.

    The tissue (hard) and background (easy) patch sets each run the full
    pipeline — gather, cluster, convolve, weight, contrast — with their
    own normal weight profile (``mu1``/``sigma1`` vs ``mu2``/``sigma2``).
    Branch parameters are shared between the two sets; the x and y
    branches keep separate parameters unless the caller passes the same
    object for both.
    """
    total = None
    for ids, mu, sigma in (
        (partition.hard_ids, weight_cfg.mu1, weight_cfg.sigma1),
        (partition.easy_ids, weight_cfg.mu2, weight_cfg.sigma2),
    ):
        x_patch = gather_patches(x_features, ids)
        y_patch = gather_patches(y_features, ids)
        zx, topology = hypergraph_embed(x_patch, hg_cfg, params_x, rng)
        zy, _ = hypergraph_embed(
            y_patch, hg_cfg, params_y, rng, topology=topology if hg_cfg.share_topology else None
        )
        weights = _negative_weights(zx, zy, weight_cfg, mu, sigma)
        if weights is None:
            term = info_nce(zx, zy, weight_cfg.tau)
        else:
            term = weighted_nce(zx, zy, weights, weight_cfg.tau)
        total = term if total is None else T.add(total, term)
    return total


def patchnce_loss(x_sets, y_sets, tau: float) -> Tensor:
    """Sum of per-layer InfoNCE terms over co-located projected patches."""
    x_sets, y_sets = list(x_sets), list(y_sets)
    if not x_sets:
        raise ContractError("patchnce needs at least one tapped layer")
    if len(x_sets) != len(y_sets):
        raise ContractError("branches must tap the same layers")
    total = None
    for ex, ey in zip(x_sets, y_sets):
        if isinstance(ex, EmbeddingSet) and isinstance(ey, EmbeddingSet) and ex.layer != ey.layer:
            raise ContractError(f"layer mismatch in patchnce: {ex.layer} vs {ey.layer}")
        term = info_nce(ex, ey, tau)
        total = term if total is None else T.add(total, term)
    return total


def lsgan_d_loss(real_scores: Tensor, fake_scores: Tensor, mode: str = "lsgan") -> Tensor:
    """Least-squares discriminator objective (means over the score maps).

    Both modes train the discriminator the standard way: real toward 1,
    translated toward 0.
    """
    if mode not in ADV_MODES:
        raise ConfigError(f"mode must be one of {ADV_MODES}, got {mode!r}")
    return T.add(T.squared_error(real_scores, 1.0), T.squared_error(fake_scores, 0.0))


def lsgan_g_loss(fake_scores: Tensor, real_scores: Tensor | None = None, mode: str = "lsgan") -> Tensor:
    """Least-squares generator objective.

    ``verbatim`` adds the discriminator-real term and scores the
    translated image as ``(1 - D)^2`` — same fixed point, shifted by a
    constant the generator cannot influence; it needs ``real_scores``.
    """
    if mode not in ADV_MODES:
        raise ConfigError(f"mode must be one of {ADV_MODES}, got {mode!r}")
    if mode == "lsgan":
        return T.squared_error(fake_scores, 1.0)
    if real_scores is None:
        raise ContractError("verbatim adversarial mode needs the real-image scores")
    return T.add(T.squared_error(real_scores, 0.0), T.squared_error(fake_scores, 1.0))


def lsgan_losses(real_scores: Tensor, fake_scores: Tensor, mode: str = "lsgan") -> tuple[Tensor, Tensor]:
    """(discriminator, generator) least-squares adversarial losses."""
    return (
        lsgan_d_loss(real_scores, fake_scores, mode),
        lsgan_g_loss(fake_scores, real_scores, mode),
    )


def _as_term(value, dtype) -> Tensor:
    if value is None:
        return Tensor(np.zeros((), dtype=dtype))
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def total_generator_loss(
    adv,
    patchnce,
    stnhcl,
    aux,
    lambda1: float,
    lambda2: float,
    per_layer: tuple = (),
) -> tuple[Tensor, LossReport]:
    """Assemble ``lambda1 * (adv + aux) + lambda2 * (stnhcl + patchnce)``.

    Terms may be tensors, plain floats, or ``None`` (treated as zero).
    Returns the differentiable total plus a float report of every part.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError(f"lambda weights must be non-negative, got {lambda1}, {lambda2}")
    dtype = np.float32
    for value in (adv, patchnce, stnhcl, aux):
        if isinstance(value, Tensor):
            dtype = value.dtype.type
            break
    adv_t, nce_t, hcl_t, aux_t = (_as_term(v, dtype) for v in (adv, patchnce, stnhcl, aux))
    total = T.add(
        T.scale(T.add(adv_t, aux_t), float(lambda1)),
        T.scale(T.add(hcl_t, nce_t), float(lambda2)),
    )
    report = LossReport(
        adv=adv_t.item(),
        patchnce=nce_t.item(),
        stnhcl=hcl_t.item(),
        aux=aux_t.item(),
        total=total.item(),
        per_layer=tuple(per_layer),
    )
    return total, report
