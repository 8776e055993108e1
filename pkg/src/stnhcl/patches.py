"""Patch sampling from encoder feature maps and the projection head.

A "patch" is one spatial location of a tapped feature map.  Identity of
a patch is its (row, col) cell on a given layer's grid; the contrastive
losses rely on gathering the *same* id list from the source and the
translated branch so positives stay co-located.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class PatchIdList:
    """Distinct spatial cells of one tapped layer's grid."""

    layer: int
    rows: np.ndarray
    cols: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ContractError("rows and cols must be 1-D arrays of equal length")
        if rows.size == 0:
            raise ContractError("a patch id list cannot be empty")
        if rows.min() < 0 or rows.max() >= self.height or cols.min() < 0 or cols.max() >= self.width:
            raise IndexError(f"patch ids out of the {self.height}x{self.width} grid")
        if np.unique(self.flat).size != rows.size:
            raise ContractError("patch ids must be distinct")

    @property
    def flat(self) -> np.ndarray:
        """Row-major spatial indices."""
        return self.rows * self.width + self.cols

    @property
    def count(self) -> int:
        return int(self.rows.size)


@dataclass
class FeatureStack:
    """Tapped feature maps of one image, aligned with their layer ids."""

    layers: list[Tensor]
    layer_ids: list[int]

    def __post_init__(self):
        if len(self.layers) != len(self.layer_ids):
            raise ContractError("one layer id per tapped feature map")


@dataclass
class EmbeddingSet:
    """Projected patch vectors (rows) from one layer."""

    vectors: Tensor
    layer: int

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


@dataclass
class ProjectionHead:
    """Two affine maps with a rectifier between, serving one tap layer."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    layer: int = 0

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def extract_stack(image: Tensor, encoder, layer_ids) -> FeatureStack:
    """Run the encoder and keep the requested tap layers."""
    feats = encoder.forward(image)
    ids = list(layer_ids)
    for i in ids:
        if not 0 <= i < len(feats):
            raise ConfigError(f"layer id {i} outside the encoder's {len(feats)} blocks")
    return FeatureStack([feats[i] for i in ids], ids)


def sample_patch_ids(
    grid_shape: tuple[int, int],
    count: int,
    rng: np.random.Generator,
    layer: int = 0,
) -> PatchIdList:
    """Uniform sample of ``count`` distinct cells from an (h, w) grid."""
    h, w = grid_shape
    if h < 1 or w < 1:
        raise ConfigError(f"grid must be non-empty, got {grid_shape}")
    if count < 1 or count > h * w:
        raise ConfigError(f"count must lie in [1, {h * w}], got {count}")
    flat = rng.choice(h * w, size=count, replace=False)
    return PatchIdList(layer, flat // w, flat % w, h, w)


def gather_patches(feature_map: Tensor, ids: PatchIdList) -> Tensor:
    """Patch feature rows (count x channels) at the listed cells."""
    if feature_map.ndim != 3:
        raise ShapeError(f"feature map must be (c, h, w), got shape {feature_map.shape}")
    c, h, w = feature_map.shape
    if (h, w) != (ids.height, ids.width):
        raise ShapeError(f"ids were drawn on a {ids.height}x{ids.width} grid, map is {h}x{w}")
    return T.gather_pixels(feature_map, ids.flat)


def project(patch_features: Tensor, head: ProjectionHead) -> EmbeddingSet:
    """Patch rows through the head, rows normalized to unit length."""
    if patch_features.ndim != 2:
        raise ShapeError(f"patch features must be 2-D, got shape {patch_features.shape}")
    if patch_features.shape[1] != head.w1.shape[0]:
        raise ConfigError(
            f"head expects {head.w1.shape[0]} input channels, got {patch_features.shape[1]}"
        )
    hidden = T.relu(T.add(T.matmul(patch_features, head.w1), head.b1))
    out = T.add(T.matmul(hidden, head.w2), head.b2)
    return EmbeddingSet(T.l2_normalize(out), head.layer)


def init_projection_head(
    rng: np.random.Generator,
    in_dim: int,
    embed_dim: int,
    layer: int = 0,
    dtype=np.float32,
) -> ProjectionHead:
    """Uniform fan-in weights, zero biases; hidden width equals the embed width."""
    b1 = 1.0 / np.sqrt(in_dim)
    b2 = 1.0 / np.sqrt(embed_dim)
    return ProjectionHead(
        w1=Tensor(rng.uniform(-b1, b1, size=(in_dim, embed_dim)).astype(dtype), requires_grad=True),
        b1=Tensor(np.zeros(embed_dim, dtype=dtype), requires_grad=True),
        w2=Tensor(rng.uniform(-b2, b2, size=(embed_dim, embed_dim)).astype(dtype), requires_grad=True),
        b2=Tensor(np.zeros(embed_dim, dtype=dtype), requires_grad=True),
        layer=layer,
    )
