"""Held-out scoring: report shape, reproducibility, and heat/mask geometry."""

import json

import numpy as np
import pytest

from stnhcl.config import RunConfig
from stnhcl.errors import ConfigError
from stnhcl.evaluate import (
    evaluate,
    heatmap_separation,
    heatmap_tissue_background_means,
)
from stnhcl.synth import make_dataset
from stnhcl.train import build_state, load_state, train
from stnhcl.weighting import Heatmap


@pytest.fixture(scope="module")
def corpus32(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval32")
    make_dataset(3, ("he", "mas", "pas"), 11, root, size=32)
    return root


@pytest.fixture(scope="module")
def cfg32(corpus32):
    return RunConfig(
        image_size=32,
        num_patches=16,
        iterations=2,
        data_dir=str(corpus32),
        eval_dir=str(corpus32),
        num_eval_samples=2,
    )


@pytest.fixture(scope="module")
def trained(cfg32, tmp_path_factory):
    return train(cfg32, tmp_path_factory.mktemp("run32"))


class TestEvaluateReport:
    def test_one_pair_per_sample_and_target(self, cfg32):
        state = build_state(cfg32, np.random.default_rng(0))
        report = evaluate(state, cfg32)
        assert report.source_domain == "he"
        assert len(report.pairs) == 2 * 2  # num_eval_samples x targets
        assert sorted(report.summaries) == ["mas", "pas"]
        for summary in report.summaries.values():
            assert summary.count == 2
        for pair in report.pairs:
            assert -1.0 <= pair.css <= 1.0
            assert 0.0 <= pair.whiteness <= 1.0

    def test_rows_are_sorted_and_limited(self, cfg32, corpus32):
        state = build_state(cfg32, np.random.default_rng(0))
        report = evaluate(state, cfg32)
        paths = [p.path for p in report.pairs]
        assert paths == sorted(paths)
        assert {p.index for p in report.pairs} == {0, 1}

    def test_summary_means_match_pairs(self, cfg32):
        state = build_state(cfg32, np.random.default_rng(0))
        report = evaluate(state, cfg32)
        for target, summary in report.summaries.items():
            scored = [p.css for p in report.pairs if p.target == target]
            assert summary.css_mean == pytest.approx(np.mean(scored), abs=1e-12)

    def test_jsonl_and_summary_text(self, cfg32):
        state = build_state(cfg32, np.random.default_rng(0))
        report = evaluate(state, cfg32)
        lines = report.to_jsonl().strip().split("\n")
        assert len(lines) == len(report.pairs)
        record = json.loads(lines[0])
        assert record["source"] == "he"
        assert set(record) == {"index", "path", "source", "target", "css", "whiteness"}
        text = report.summary_text()
        assert text.count("\n") == 1  # one line per target
        assert "he -> mas" in text and "he -> pas" in text

    def test_checkpoint_path_and_state_score_identically(self, cfg32, trained):
        from_path = evaluate(trained.checkpoint_path, cfg32)
        from_state = evaluate(load_state(cfg32, trained.checkpoint_path), cfg32)
        assert from_path.pairs == from_state.pairs
        # and scoring is exactly repeatable
        assert evaluate(trained.checkpoint_path, cfg32).pairs == from_path.pairs

    def test_missing_source_domain_is_rejected(self, cfg32, tmp_path):
        lonely = tmp_path / "mas_only"
        make_dataset(1, ("mas",), 5, lonely, size=32)
        state = build_state(cfg32, np.random.default_rng(0))
        with pytest.raises(ConfigError, match="no 'he'"):
            evaluate(state, cfg32, eval_dir=lonely)

    def test_source_only_corpus_has_no_targets(self, cfg32, tmp_path):
        solo = tmp_path / "he_only"
        make_dataset(1, ("he",), 5, solo, size=32)
        state = build_state(cfg32, np.random.default_rng(0))
        with pytest.raises(ConfigError, match="no target domain"):
            evaluate(state, cfg32, eval_dir=solo)


class TestHeatMaskGeometry:
    def test_full_coverage_grid_means(self):
        heat = Heatmap(np.arange(16, dtype=float).reshape(4, 4), (16, 16))
        mask = np.zeros((16, 16), dtype=bool)
        mask[:8, :8] = True
        tissue, background = heatmap_tissue_background_means(heat, mask)
        assert tissue == pytest.approx((0 + 1 + 4 + 5) / 4)
        assert background == pytest.approx((np.arange(16).sum() - 10) / 12)

    def test_offset_grid_reads_shifted_blocks(self):
        heat = Heatmap(np.arange(16, dtype=float).reshape(4, 4), (16, 16), origin=(2, 2), cell=(3, 3))
        mask = np.zeros((16, 16), dtype=bool)
        mask[:8, :8] = True
        tissue, background = heatmap_tissue_background_means(heat, mask)
        assert tissue == pytest.approx(2.5)
        assert background == pytest.approx(110 / 12)

    def test_exactly_half_tissue_cell_counts_as_tissue(self):
        heat = Heatmap(np.array([[3.0, 1.0], [2.0, 4.0]]), (4, 4))
        mask = np.zeros((4, 4), dtype=bool)
        mask[0, :] = True  # every top cell is half tissue
        tissue, background = heatmap_tissue_background_means(heat, mask)
        assert tissue == pytest.approx(2.0)
        assert background == pytest.approx(3.0)

    def test_single_class_mask_is_rejected(self):
        heat = Heatmap(np.ones((2, 2)), (4, 4))
        with pytest.raises(ConfigError, match="single class"):
            heatmap_tissue_background_means(heat, np.ones((4, 4), dtype=bool))
        with pytest.raises(ConfigError, match="single class"):
            heatmap_tissue_background_means(heat, np.zeros((4, 4), dtype=bool))


@pytest.fixture(scope="module")
def corpus64(tmp_path_factory):
    root = tmp_path_factory.mktemp("sep64")
    make_dataset(3, ("he", "mas"), 202, root)
    return root


class TestHeatmapSeparation:
    def test_fraction_over_limited_rows(self, corpus64):
        cfg = RunConfig(data_dir=str(corpus64), eval_dir=str(corpus64), num_eval_samples=2)
        state = build_state(cfg, np.random.default_rng(0))
        fraction, count = heatmap_separation(state, cfg, limit=3)
        assert count == 3
        assert 0.0 <= fraction <= 1.0
        assert fraction * count == int(fraction * count)
        assert heatmap_separation(state, cfg, limit=3) == (fraction, count)

    def test_empty_source_is_rejected(self, corpus64, tmp_path):
        cfg = RunConfig(
            data_dir=str(corpus64), eval_dir=str(corpus64), source_domain="pas", num_eval_samples=2
        )
        state = build_state(cfg, np.random.default_rng(0))
        with pytest.raises(ConfigError, match="no 'pas'"):
            heatmap_separation(state, cfg)
