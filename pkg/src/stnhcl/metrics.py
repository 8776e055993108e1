"""Structure-oriented image metrics.

``css`` scores how well local contrast and structure survive a
translation while deliberately ignoring luminance, so recolored images
of identical geometry score near 1.  ``background_whiteness`` checks the
near-white background convention of the synthetic stains.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

CSS_WINDOW = 8
CSS_C2 = 0.03**2
CSS_C3 = CSS_C2 / 2.0


def _to_gray(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] not in (1, 3):
            raise ContractError(f"expected trailing channel extent 1 or 3, got shape {arr.shape}")
        return arr.mean(axis=2)
    if arr.ndim != 2:
        raise ContractError(f"image must be 2-D or (h, w, c), got shape {arr.shape}")
    return arr


def _window_stats(gray: np.ndarray, window: int):
    views = np.lib.stride_tricks.sliding_window_view(gray, (window, window))
    mean = views.mean(axis=(-2, -1))
    sq_mean = (views * views).mean(axis=(-2, -1))
    return views, mean, np.maximum(sq_mean - mean * mean, 0.0)


def css(image_a, image_b, window: int = CSS_WINDOW, c2: float = CSS_C2, c3: float = CSS_C3) -> float:
    """Mean contrast-structure product over sliding windows, in [-1, 1].

    Both factors come from the luminance-free half of the classic
    structural-similarity decomposition on grayscale values:

        contrast  = (2 sa sb + c2) / (sa^2 + sb^2 + c2)
        structure = (cov + c3) / (sa sb + c3)

    Identical inputs score exactly 1 (constant windows included, thanks
    to the stabilizers).  Symmetric in its arguments.
    """
    a = _to_gray(image_a)
    b = _to_gray(image_b)
    if a.shape != b.shape:
        raise ContractError(f"images differ in shape: {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ContractError(f"images must be at least {window} pixels per side, got {a.shape}")

    views_a, mean_a, var_a = _window_stats(a, window)
    views_b, mean_b, var_b = _window_stats(b, window)
    cov = (views_a * views_b).mean(axis=(-2, -1)) - mean_a * mean_b
    sd_a, sd_b = np.sqrt(var_a), np.sqrt(var_b)

    contrast = (2.0 * sd_a * sd_b + c2) / (var_a + var_b + c2)
    structure = (cov + c3) / (sd_a * sd_b + c3)
    return float((contrast * structure).mean())


def background_whiteness(image, tissue_mask) -> float:
    """Mean over background pixels of the per-pixel minimum channel.

    1.0 means a perfectly white background; any tint or darkening drags
    the score down.  Raises if the mask leaves no background pixels.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(tissue_mask, dtype=bool)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"image must be (h, w, 3), got shape {img.shape}")
    if mask.shape != img.shape[:2]:
        raise ContractError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    background = ~mask
    if not background.any():
        raise ContractError("mask covers the whole image; no background to score")
    return float(img[background].min(axis=1).mean())
