"""Patch identity, sampling, gathering, and the projection head."""

import numpy as np
import pytest

from stnhcl.errors import ConfigError, ContractError, ShapeError
from stnhcl.models import Encoder
from stnhcl.patches import (
    PatchIdList,
    extract_stack,
    gather_patches,
    init_projection_head,
    project,
    sample_patch_ids,
)
from stnhcl.tensor import Tensor


class TestPatchIdList:
    def test_flat_is_row_major(self):
        ids = PatchIdList(0, rows=[1, 2], cols=[3, 0], height=4, width=5)
        np.testing.assert_array_equal(ids.flat, [8, 10])
        assert ids.count == 2

    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            PatchIdList(0, rows=[1, 1], cols=[2, 2], height=4, width=4)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(IndexError):
            PatchIdList(0, rows=[0, 4], cols=[0, 0], height=4, width=4)
        with pytest.raises(IndexError):
            PatchIdList(0, rows=[0], cols=[-1], height=4, width=4)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            PatchIdList(0, rows=[], cols=[], height=4, width=4)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ContractError):
            PatchIdList(0, rows=[1, 2], cols=[0], height=4, width=4)


class TestSampling:
    def test_ids_distinct_and_in_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            count = int(rng.integers(1, h * w + 1))
            ids = sample_patch_ids((h, w), count, rng, layer=2)
            assert ids.count == count and ids.layer == 2
            assert np.unique(ids.flat).size == count

    def test_full_grid_sample_covers_everything(self):
        ids = sample_patch_ids((3, 3), 9, np.random.default_rng(1))
        assert sorted(ids.flat.tolist()) == list(range(9))

    def test_oversampling_rejected(self):
        with pytest.raises(ConfigError):
            sample_patch_ids((2, 2), 5, np.random.default_rng(0))

    def test_reproducible(self):
        a = sample_patch_ids((6, 6), 10, np.random.default_rng(3))
        b = sample_patch_ids((6, 6), 10, np.random.default_rng(3))
        np.testing.assert_array_equal(a.flat, b.flat)


class TestGather:
    def test_gathers_expected_cells(self):
        fmap = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
        ids = PatchIdList(0, rows=[0, 2], cols=[1, 3], height=3, width=4)
        out = gather_patches(Tensor(fmap), ids)
        np.testing.assert_array_equal(out.data, fmap[:, [0, 2], [1, 3]].T)

    def test_same_ids_stay_colocated_across_maps(self):
        # the co-location contract: one id list indexes the same cells in
        # the source map and the translated map
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(5, 6, 6)).astype(np.float32))
        b = Tensor(rng.normal(size=(5, 6, 6)).astype(np.float32))
        ids = sample_patch_ids((6, 6), 7, rng)
        ga, gb = gather_patches(a, ids), gather_patches(b, ids)
        for k, (r, c) in enumerate(zip(ids.rows, ids.cols)):
            np.testing.assert_array_equal(ga.data[k], a.data[:, r, c])
            np.testing.assert_array_equal(gb.data[k], b.data[:, r, c])

    def test_wrong_grid_rejected(self):
        ids = PatchIdList(0, rows=[0], cols=[0], height=8, width=8)
        with pytest.raises(ShapeError):
            gather_patches(Tensor(np.zeros((3, 4, 4))), ids)


class TestProjection:
    def test_unit_row_norms(self):
        rng = np.random.default_rng(5)
        head = init_projection_head(rng, in_dim=12, embed_dim=8)
        feats = Tensor(rng.normal(size=(20, 12)).astype(np.float32))
        emb = project(feats, head)
        assert emb.vectors.shape == (20, 8)
        np.testing.assert_allclose(
            np.linalg.norm(emb.vectors.data, axis=1), 1.0, atol=1e-6
        )

    def test_layer_tag_carried(self):
        rng = np.random.default_rng(6)
        head = init_projection_head(rng, 4, 4, layer=3)
        emb = project(Tensor(rng.normal(size=(2, 4)).astype(np.float32)), head)
        assert emb.layer == 3 and emb.count == 2

    def test_channel_mismatch_rejected(self):
        head = init_projection_head(np.random.default_rng(0), 4, 4)
        with pytest.raises(ConfigError):
            project(Tensor(np.zeros((2, 5), dtype=np.float32)), head)

    def test_init_scales_and_zero_biases(self):
        head = init_projection_head(np.random.default_rng(7), 16, 9)
        assert np.abs(head.w1.data).max() <= 0.25
        assert np.abs(head.w2.data).max() <= 1.0 / 3.0
        np.testing.assert_array_equal(head.b1.data, 0.0)
        np.testing.assert_array_equal(head.b2.data, 0.0)
        assert all(p.requires_grad for p in head.parameters().values())


class TestExtractStack:
    def test_taps_align_with_layer_ids(self):
        rng = np.random.default_rng(8)
        enc = Encoder(rng, channels=(4, 8))
        img = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32))
        stack = extract_stack(img, enc, (0, 1))
        assert stack.layer_ids == [0, 1]
        assert stack.layers[0].shape == (4, 8, 8)
        assert stack.layers[1].shape == (8, 4, 4)

    def test_bad_layer_id_rejected(self):
        rng = np.random.default_rng(9)
        enc = Encoder(rng, channels=(4, 8))
        img = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32))
        with pytest.raises(ConfigError):
            extract_stack(img, enc, (0, 2))
