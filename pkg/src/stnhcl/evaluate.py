"""Held-out evaluation of a trained translator.

For every held-out source image and every other stain domain, the
generator translates and the pair is scored with the contrast-structure
metric plus background whiteness (against the sample's tissue mask).
Evaluation draws no randomness, so a checkpoint scores identically
every time it is loaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError
from .metrics import background_whiteness, css
from .synth import mask_path_for, read_manifest, read_pgm, read_ppm
from .tensor import Tensor
from .train import TrainState, domain_label, load_state
from .weighting import heat_values_at, heatmap_from_maps


@dataclass(frozen=True)
class PairResult:
    """Scores of one (source image, target domain) translation."""

    index: int
    path: str
    target: str
    css: float
    whiteness: float


@dataclass(frozen=True)
class DomainSummary:
    target: str
    css_mean: float
    whiteness_mean: float
    count: int


@dataclass
class EvalReport:
    source_domain: str
    pairs: list[PairResult]
    summaries: dict[str, DomainSummary]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "index": p.index,
                    "path": p.path,
                    "source": self.source_domain,
                    "target": p.target,
                    "css": round(p.css, 6),
                    "whiteness": round(p.whiteness, 6),
                }
            )
            for p in self.pairs
        ]
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = []
        for target in sorted(self.summaries):
            s = self.summaries[target]
            lines.append(
                f"{self.source_domain} -> {s.target}: css {s.css_mean:.4f}  "
                f"whiteness {s.whiteness_mean:.4f}  (n={s.count})"
            )
        return "\n".join(lines)


def _eval_rows(cfg: RunConfig, directory):
    rows = [r for r in read_manifest(directory) if r.domain == cfg.source_domain]
    if not rows:
        raise ConfigError(f"no {cfg.source_domain!r} images under {directory}")
    rows.sort(key=lambda r: r.path)
    return rows[: cfg.num_eval_samples] if cfg.num_eval_samples else rows


def _eval_targets(cfg: RunConfig, directory) -> tuple[str, ...]:
    domains = sorted({r.domain for r in read_manifest(directory)})
    targets = tuple(d for d in domains if d != cfg.source_domain)
    if not targets:
        raise ConfigError(f"evaluation data under {directory} holds no target domain")
    return targets


def evaluate(state_or_checkpoint, cfg: RunConfig, eval_dir=None) -> EvalReport:
    """Score translations of held-out source images into every target domain.

    Produces one row per (image, target) pair — ``num_eval_samples`` times
    the number of target domains — plus per-domain means.
    """
    cfg.validate()
    directory = Path(eval_dir if eval_dir is not None else cfg.eval_dir)
    state = state_or_checkpoint
    if not isinstance(state, TrainState):
        state = load_state(cfg, state_or_checkpoint)

    rows = _eval_rows(cfg, directory)
    targets = _eval_targets(cfg, directory)
    pairs: list[PairResult] = []
    for index, row in enumerate(rows):
        source_img = read_ppm(directory / row.path)
        mask = read_pgm(mask_path_for(directory, row))
        x = Tensor(np.ascontiguousarray(source_img.transpose(2, 0, 1)))
        for target in targets:
            translated = state.generator.translate(x, domain_label(target))
            out_img = translated.data.transpose(1, 2, 0)
            pairs.append(
                PairResult(
                    index=index,
                    path=row.path,
                    target=target,
                    css=css(source_img, out_img),
                    whiteness=background_whiteness(out_img, mask),
                )
            )

    summaries = {}
    for target in targets:
        scored = [p for p in pairs if p.target == target]
        summaries[target] = DomainSummary(
            target=target,
            css_mean=float(np.mean([p.css for p in scored])),
            whiteness_mean=float(np.mean([p.whiteness for p in scored])),
            count=len(scored),
        )
    return EvalReport(cfg.source_domain, pairs, summaries)


def heatmap_tissue_background_means(heatmap, mask: np.ndarray) -> tuple[float, float]:
    """Mean heatmap value over tissue cells vs background cells.

    Each heatmap cell maps to its image block (via the heatmap's
    origin/cell placement); a cell counts as tissue when at least half
    its pixels are tissue.  Raises if either side is empty (coverage
    bounds make that practically impossible).
    """
    heat = heatmap.values
    hh, hw = heat.shape
    (oy, ox), (cy, cx) = heatmap.origin, heatmap.cell
    trimmed = mask[oy : oy + hh * cy, ox : ox + hw * cx]
    fractions = trimmed.reshape(hh, cy, hw, cx).mean(axis=(1, 3))
    tissue_cells = fractions >= 0.5
    if not tissue_cells.any() or tissue_cells.all():
        raise ConfigError("mask maps to a single class on the heatmap grid")
    return float(heat[tissue_cells].mean()), float(heat[~tissue_cells].mean())


def heatmap_separation(state: TrainState, cfg: RunConfig, eval_dir=None, limit: int = 50) -> tuple[float, int]:
    """Fraction of held-out samples whose tissue out-heats the background.

    Each sample is translated into a target domain (cycled round-robin),
    the discriminator heatmap is read off the translated image, and the
    sample counts as separated when the tissue-cell mean exceeds the
    background-cell mean.
    """
    directory = Path(eval_dir if eval_dir is not None else cfg.eval_dir)
    rows = [r for r in read_manifest(directory) if r.domain == cfg.source_domain]
    rows.sort(key=lambda r: r.path)
    rows = rows[:limit]
    if not rows:
        raise ConfigError(f"no {cfg.source_domain!r} images under {directory}")
    targets = _eval_targets(cfg, directory)

    separated = 0
    for i, row in enumerate(rows):
        source_img = read_ppm(directory / row.path)
        mask = read_pgm(mask_path_for(directory, row))
        x = Tensor(np.ascontiguousarray(source_img.transpose(2, 0, 1)))
        translated = state.generator.translate(x, domain_label(targets[i % len(targets)]))
        score, penultimate = state.discriminator.forward(translated)
        origin, cell = state.discriminator.heat_geometry(mask.shape)
        heatmap = heatmap_from_maps(
            state.discriminator.heat_view(score.data),
            state.discriminator.heat_view(penultimate.data),
            (mask.shape[0], mask.shape[1]),
            cfg.heatmap_mode,
            origin,
            cell,
        )
        tissue_mean, background_mean = heatmap_tissue_background_means(heatmap, mask)
        if tissue_mean > background_mean:
            separated += 1
    return separated / len(rows), len(rows)
