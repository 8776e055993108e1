"""Heatmap-driven patch partition and negative-pair weighting.

The discriminator's spatial response separates patches into a tissue set
(content the discriminator reacts to — hard negatives) and a background
set (easy negatives).  Each set gets its own normal-distribution weight
profile over negative similarities; per anchor the weights average to
exactly 1, so the weighted loss stays on the scale of the unweighted one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .patches import PatchIdList
from .tensor import Tensor

PDF_FLOOR = 1e-300  # below this an anchor's weights fall back to uniform

WEIGHT_STRATEGIES = ("dual_normal", "monce_hard", "monce_easy", "uniform")
SIMILARITY_DOMAINS = ("cosine", "logit")
HEATMAP_MODES = ("features", "output")


@dataclass
class WeightConfig:
    """Negative-weighting profile for the tissue / background split.

    ``mu1``/``sigma1`` weight the tissue (hard) set, ``mu2``/``sigma2``
    the background (easy) set.  ``similarity_domain`` selects whether the
    normal profile reads raw cosine similarities or temperature-scaled
    logits; ``detach`` freezes weights out of the gradient.
    """

    mu1: float = 0.7
    sigma1: float = 0.5
    mu2: float = 0.1
    sigma2: float = 0.5
    tau: float = 0.07
    strategy: str = "dual_normal"
    similarity_domain: str = "cosine"
    detach: bool = True

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ConfigError(f"sigma values must be positive, got {self.sigma1}, {self.sigma2}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.strategy not in WEIGHT_STRATEGIES:
            raise ConfigError(f"strategy must be one of {WEIGHT_STRATEGIES}, got {self.strategy!r}")
        if self.similarity_domain not in SIMILARITY_DOMAINS:
            raise ConfigError(
                f"similarity_domain must be one of {SIMILARITY_DOMAINS}, got {self.similarity_domain!r}"
            )


@dataclass
class Heatmap:
    """Discriminator response on its spatial grid, plus the image mapping.

    ``origin`` (pixels) and ``cell`` (pixels per grid step) place the grid
    over the image: grid cell (i, j) covers image rows
    ``[origin[0] + i*cell[0], origin[0] + (i+1)*cell[0])`` and likewise for
    columns.  They default to a uniform full-coverage layout; a grid whose
    receptive field crops the border (valid convolution) sets a nonzero
    origin instead.
    """

    values: np.ndarray
    image_shape: tuple[int, int]
    origin: tuple[int, int] = (0, 0)
    cell: tuple[int, int] | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ShapeError(f"heatmap must be 2-D, got shape {vals.shape}")
        self.values = vals
        if self.cell is None:
            self.cell = (
                max(1, self.image_shape[0] // vals.shape[0]),
                max(1, self.image_shape[1] // vals.shape[1]),
            )
        if min(self.cell) < 1 or min(self.origin) < 0:
            raise ConfigError(f"cell must be >= 1 and origin >= 0, got {self.cell}, {self.origin}")
        for axis in (0, 1):
            if self.origin[axis] + vals.shape[axis] * self.cell[axis] > self.image_shape[axis]:
                raise ConfigError(
                    f"grid overruns the image on axis {axis}: origin {self.origin}, "
                    f"cell {self.cell}, grid {vals.shape}, image {self.image_shape}"
                )


@dataclass
class PatchPartition:
    """Disjoint hard (tissue) and easy (background) patch id lists."""

    hard_ids: PatchIdList
    easy_ids: PatchIdList

    def __post_init__(self):
        if self.hard_ids.layer != self.easy_ids.layer:
            raise ContractError("both halves of a partition live on one layer")
        if self.hard_ids.count != self.easy_ids.count:
            raise ContractError("partition halves must have equal size")
        if np.intersect1d(self.hard_ids.flat, self.easy_ids.flat).size:
            raise ContractError("hard and easy ids must be disjoint")


def heatmap_from_maps(
    score_map: np.ndarray,
    penultimate: np.ndarray | None,
    image_shape: tuple[int, int],
    mode: str = "features",
    origin: tuple[int, int] = (0, 0),
    cell: tuple[int, int] | None = None,
) -> Heatmap:
    """Build a heatmap from already-computed discriminator maps.

    ``features`` mode takes the per-location Euclidean norm across the
    penultimate feature channels (parameter-free saliency); ``output``
    mode uses the raw score map.  ``origin``/``cell`` carry the grid
    placement (see ``Heatmap``).
    """
    if mode == "features":
        if penultimate is None:
            raise ContractError("features mode needs the penultimate feature map")
        feats = np.asarray(penultimate, dtype=np.float64)
        if feats.ndim != 3:
            raise ShapeError(f"penultimate map must be (c, h, w), got shape {feats.shape}")
        values = np.sqrt((feats * feats).sum(axis=0))
    elif mode == "output":
        scores = np.asarray(score_map, dtype=np.float64)
        if scores.ndim == 3 and scores.shape[0] == 1:
            scores = scores[0]
        if scores.ndim != 2:
            raise ShapeError(f"score map must be (h, w) or (1, h, w), got shape {scores.shape}")
        values = scores.copy()
    else:
        raise ConfigError(f"heatmap mode must be one of {HEATMAP_MODES}, got {mode!r}")
    return Heatmap(values, image_shape, origin, cell)


def discriminator_heatmap(discriminator, image: Tensor, mode: str = "features") -> Heatmap:
    """Run the discriminator and summarize its spatial response.

    Always detached: the partition downstream is a discrete decision, so
    no gradient ever crosses the heatmap.  The grid placement comes from
    the discriminator's ``heat_geometry`` when it declares one, and maps
    pass through its ``heat_view`` so cells it marks as padding-driven
    never reach the heat statistics.
    """
    if image.ndim != 3:
        raise ShapeError(f"image must be (c, h, w), got shape {image.shape}")
    score, penultimate = discriminator.forward(image)
    image_shape = (image.shape[1], image.shape[2])
    geometry = getattr(discriminator, "heat_geometry", None)
    origin, cell = geometry(image_shape) if geometry is not None else ((0, 0), None)
    view = getattr(discriminator, "heat_view", lambda m: m)
    return heatmap_from_maps(
        view(score.data),
        view(penultimate.data) if penultimate is not None else None,
        image_shape,
        mode,
        origin,
        cell,
    )


def heat_values_at(heatmap: Heatmap, ids: PatchIdList) -> np.ndarray:
    """Heatmap value under each patch cell (nearest heatmap cell by center)."""
    img_h, img_w = heatmap.image_shape
    heat_h, heat_w = heatmap.values.shape
    center_r = (ids.rows + 0.5) * (img_h / ids.height)
    center_c = (ids.cols + 0.5) * (img_w / ids.width)
    hr = np.clip(((center_r - heatmap.origin[0]) / heatmap.cell[0]).astype(np.int64), 0, heat_h - 1)
    hc = np.clip(((center_c - heatmap.origin[1]) / heatmap.cell[1]).astype(np.int64), 0, heat_w - 1)
    return heatmap.values[hr, hc]


def partition_patches(heatmap: Heatmap, candidates: PatchIdList, count: int) -> PatchPartition:
    """Split candidate patches into the ``count`` hottest and ``count`` coolest.

    Candidates are ranked by heatmap value; ties break by flat patch index,
    ascending toward the easy side.  Requires at least ``2 * count``
    candidates so the two sets stay disjoint.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if candidates.count < 2 * count:
        raise ConfigError(
            f"need at least {2 * count} candidate patches to split, got {candidates.count}"
        )
    values = heat_values_at(heatmap, candidates)
    order = np.lexsort((candidates.flat, values))
    easy_sel = order[:count]
    hard_sel = order[-count:]

    def _subset(sel: np.ndarray) -> PatchIdList:
        return PatchIdList(
            candidates.layer,
            candidates.rows[sel],
            candidates.cols[sel],
            candidates.height,
            candidates.width,
        )

    return PatchPartition(hard_ids=_subset(hard_sel), easy_ids=_subset(easy_sel))


def normal_weights(sims, mu: float, sigma: float) -> Tensor:
    """Normal-pdf weights over similarities, normalized to per-row mean 1.

    ``w[i][j] = pdf(s[i][j]; mu, sigma) / mean_m(pdf(s[i][m]; mu, sigma))``.
    Rows whose pdf values all underflow past ``PDF_FLOOR`` fall back to
    uniform weight 1 (detached; such rows carry no useful shape anyway).
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    s = sims if isinstance(sims, Tensor) else Tensor(np.asarray(sims))
    if s.ndim != 2:
        raise ShapeError(f"similarities must be 2-D, got shape {s.shape}")

    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    z_data = (s.data - mu) / sigma
    pdf_data = norm * np.exp(-0.5 * z_data * z_data)
    dead_rows = pdf_data.max(axis=1) < PDF_FLOOR
    if dead_rows.any():
        weights = pdf_data / np.maximum(pdf_data.mean(axis=1, keepdims=True), PDF_FLOOR)
        weights[dead_rows] = 1.0
        return Tensor(weights.astype(s.dtype))

    z = T.div(T.sub(s, mu), sigma)
    pdf = T.scale(T.exp(T.scale(T.mul(z, z), -0.5)), norm)
    return T.div(pdf, T.reduce_mean(pdf, axis=1, keepdims=True))


def monce_weights(sims, tau: float, mode: str = "hard") -> Tensor:
    """Row-softmax negative weights at temperature ``tau``.

    ``hard`` emphasizes similar negatives (softmax of s / tau); ``easy``
    emphasizes dissimilar ones (softmax of (1 - s) / tau).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    s = sims if isinstance(sims, Tensor) else Tensor(np.asarray(sims))
    if s.ndim != 2:
        raise ShapeError(f"similarities must be 2-D, got shape {s.shape}")
    if mode == "hard":
        logits = T.scale(s, 1.0 / tau)
    elif mode == "easy":
        logits = T.scale(T.sub(1.0, s), 1.0 / tau)
    else:
        raise ConfigError(f"mode must be 'hard' or 'easy', got {mode!r}")
    return T.softmax(logits, axis=1)
