"""Synthetic stained-tissue data generator contracts."""

import numpy as np
import pytest

from stnhcl.errors import ConfigError, ContractError, FormatError
from stnhcl.synth import (
    COVERAGE_HIGH,
    COVERAGE_LOW,
    PALETTES,
    STAIN_DOMAINS,
    make_dataset,
    make_layout,
    mask_path_for,
    read_manifest,
    read_pgm,
    read_ppm,
    render_mask,
    sample_seed,
    synth_image,
    write_pgm,
    write_ppm,
)


class TestLayouts:
    def test_coverage_lands_in_band(self):
        for seed in range(40):
            layout = make_layout(seed)
            coverage = render_mask(layout, 64).mean()
            assert COVERAGE_LOW <= coverage <= COVERAGE_HIGH

    def test_reproducible(self):
        assert make_layout(123) == make_layout(123)

    def test_distinct_seeds_differ(self):
        assert make_layout(1) != make_layout(2)

    def test_minimum_size_enforced(self):
        with pytest.raises(ConfigError):
            render_mask(make_layout(0), 16)


class TestImages:
    def test_background_stays_light(self):
        # every background channel >= 0.9 even after 8-bit quantization
        for seed in (0, 7, 19):
            layout = make_layout(seed)
            for domain in STAIN_DOMAINS:
                img, mask = synth_image(layout, PALETTES[domain], 64)
                quantized = np.rint(img * 255.0) / 255.0
                assert quantized[~mask].min() >= 0.9, domain

    def test_mask_aligns_across_domains(self):
        layout = make_layout(5)
        masks = [synth_image(layout, PALETTES[d], 64)[1] for d in STAIN_DOMAINS]
        for m in masks[1:]:
            np.testing.assert_array_equal(m, masks[0])

    def test_domains_color_same_structure_differently(self):
        layout = make_layout(9)
        he, mask = synth_image(layout, PALETTES["he"], 64)
        mas, _ = synth_image(layout, PALETTES["mas"], 64)
        assert np.abs(he[mask] - mas[mask]).max() > 0.1

    def test_tissue_is_textured(self):
        img, mask = synth_image(make_layout(3), PALETTES["he"], 64)
        assert img[mask].std(axis=0).max() > 0.02

    def test_values_in_unit_range(self):
        img, _ = synth_image(make_layout(11), PALETTES["pasm"], 96)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_background_varies_smoothly_not_flat(self):
        # gentle illumination: globally varying (no exactly-flat tell) yet
        # locally near-constant in any 8px block, and aligned across stains
        layout = make_layout(21)
        he, mask = synth_image(layout, PALETTES["he"], 64)
        assert he[~mask].std(axis=0).max() > 1e-3
        blocks = he.reshape(8, 8, 8, 8, 3)
        bg_blocks_std = np.where(
            mask.reshape(8, 8, 8, 8).any(axis=(1, 3))[..., None], 0.0, blocks.std(axis=(1, 3))
        )
        assert bg_blocks_std.max() < 0.005
        mas, _ = synth_image(layout, PALETTES["mas"], 64)
        ratio_he = he[~mask][:, 0] / he[~mask][:, 0].mean()
        ratio_mas = mas[~mask][:, 0] / mas[~mask][:, 0].mean()
        np.testing.assert_allclose(ratio_he, ratio_mas, atol=1e-6)


class TestNetpbmRoundTrip:
    def test_ppm_round_trip_is_exact_after_quantization(self, tmp_path):
        img, _ = synth_image(make_layout(2), PALETTES["pas"], 64)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        back = read_ppm(path)
        np.testing.assert_allclose(back, np.rint(img * 255.0) / 255.0, atol=1e-7)

    def test_pgm_round_trip_preserves_mask(self, tmp_path):
        mask = render_mask(make_layout(4), 64)
        path = tmp_path / "mask.pgm"
        write_pgm(path, mask)
        np.testing.assert_array_equal(read_pgm(path), mask)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.ppm"
        payload = bytes(range(12))
        path.write_bytes(b"P6\n# a comment line\n2 2\n255\n" + payload)
        img = read_ppm(path)
        assert img.shape == (2, 2, 3)
        np.testing.assert_allclose(img.ravel(), np.arange(12) / 255.0, atol=1e-7)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_bad_header_token_rejected(self, tmp_path):
        path = tmp_path / "tok.pgm"
        path.write_bytes(b"P5\n2 two\n255\n" + bytes(4))
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_write_shape_contracts(self, tmp_path):
        with pytest.raises(ContractError):
            write_ppm(tmp_path / "x.ppm", np.zeros((4, 4)))
        with pytest.raises(ContractError):
            write_pgm(tmp_path / "x.pgm", np.zeros((4, 4, 3)))


class TestDatasets:
    def test_manifest_lists_count_times_domains(self, tmp_path):
        make_dataset(3, ("he", "mas"), seed=5, out_dir=tmp_path)
        rows = read_manifest(tmp_path)
        assert len(rows) == 6
        assert {r.domain for r in rows} == {"he", "mas"}
        for row in rows:
            assert (tmp_path / row.path).is_file()
            assert mask_path_for(tmp_path, row).is_file()

    def test_identical_arguments_give_identical_bytes(self, tmp_path):
        make_dataset(2, ("he", "pas"), seed=9, out_dir=tmp_path / "a")
        make_dataset(2, ("he", "pas"), seed=9, out_dir=tmp_path / "b")
        for rel in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_different_dataset_seeds_differ(self, tmp_path):
        make_dataset(1, ("he",), seed=1, out_dir=tmp_path / "a")
        make_dataset(1, ("he",), seed=2, out_dir=tmp_path / "b")
        a = (tmp_path / "a" / "he" / "00000.ppm").read_bytes()
        b = (tmp_path / "b" / "he" / "00000.ppm").read_bytes()
        assert a != b

    def test_sample_seed_stride(self):
        assert sample_seed(3, 7) - sample_seed(3, 6) == 1
        assert sample_seed(4, 0) > sample_seed(3, 10**4)

    def test_rejects_bad_requests(self, tmp_path):
        with pytest.raises(ConfigError):
            make_dataset(0, ("he",), seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            make_dataset(1, (), seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            make_dataset(1, ("ihc",), seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            make_dataset(1, ("he", "he"), seed=0, out_dir=tmp_path)

    def test_manifest_validation(self, tmp_path):
        with pytest.raises(FormatError):
            read_manifest(tmp_path)  # no manifest at all
        make_dataset(1, ("he",), seed=0, out_dir=tmp_path)
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("he/00000.ppm\the\n", encoding="ascii")
        with pytest.raises(FormatError):
            read_manifest(tmp_path)  # missing field
        manifest.write_text("he/00000.ppm\the\tx\n", encoding="ascii")
        with pytest.raises(FormatError):
            read_manifest(tmp_path)  # non-integer seed
        manifest.write_text("he/99999.ppm\the\t0\n", encoding="ascii")
        with pytest.raises(FormatError):
            read_manifest(tmp_path)  # dangling path
