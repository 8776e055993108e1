"""Procedural stained-tissue image synthesis.

Each sample is a layout of elliptical tissue blobs with a sinusoidal
texture wave, rendered under one of four stain palettes onto a near-white
background, with a gentle bilinear illumination gradient over the whole
frame.  The gradient matters: a mathematically constant background is
something no convolutional generator can emit, so it would hand any
adversary a degenerate "is the background perfectly flat" tell that real
scans (with their slowly varying illumination) never offer.  The layout
(hence the tissue mask) and the illumination are pixel-aligned across
domains, so a cross-domain pair of the same sample index differs only in
coloring — exactly the structure-preservation setting the metrics and
the translation objective assume.

Files are plain binary PPM (P6) for images and PGM (P5) for masks, plus
a tab-separated manifest; everything is byte-reproducible from the seed.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .runtime import worker_count

STAIN_DOMAINS = ("he", "mas", "pas", "pasm")

# Coverage is controlled at this rendering size; other sizes drift only
# by boundary-pixel quantization.
REFERENCE_SIZE = 64
COVERAGE_LOW, COVERAGE_HIGH = 0.25, 0.65
MAX_LAYOUT_ATTEMPTS = 500
SEED_STRIDE = 100003  # sample i of dataset seed s draws from s * SEED_STRIDE + i
SHADING_AMPLITUDE = 0.015  # keeps every background channel >= 0.9 after quantization


@dataclass(frozen=True)
class StainPalette:
    """Two tissue colors to blend between, a background tint, and contrast."""

    domain: str
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    background: tuple[float, float, float]
    contrast: float


PALETTES: dict[str, StainPalette] = {
    "he": StainPalette("he", (0.84, 0.32, 0.56), (0.44, 0.24, 0.62), (1.00, 0.96, 0.97), 0.50),
    "mas": StainPalette("mas", (0.25, 0.36, 0.72), (0.78, 0.24, 0.28), (0.96, 0.97, 1.00), 0.55),
    "pas": StainPalette("pas", (0.87, 0.34, 0.52), (0.95, 0.64, 0.74), (1.00, 0.97, 0.95), 0.45),
    "pasm": StainPalette("pasm", (0.16, 0.16, 0.18), (0.56, 0.56, 0.60), (0.98, 0.98, 0.98), 0.60),
}


@dataclass(frozen=True)
class Blob:
    """One rotated ellipse, in unit-square coordinates."""

    center_y: float
    center_x: float
    radius_y: float
    radius_x: float
    angle: float
    phase: float
    frequency: float


@dataclass(frozen=True)
class TissueLayout:
    """Domain-independent geometry of one sample.

    ``shading`` holds the four corner weights (each in [-1, 1]) of the
    bilinear illumination field shared by every stain of the sample.
    """

    seed: int
    blobs: tuple[Blob, ...]
    background_level: float
    shading: tuple[float, float, float, float]


def make_layout(seed: int) -> TissueLayout:
    """Sample a layout whose tissue coverage lands in the accepted band.

    Draws are rejected and redrawn (with a derived per-attempt stream)
    until the mask rendered at the reference size covers 25-65% of the
    canvas; all blobs are kept fully inside the canvas by construction.
    """
    for attempt in range(MAX_LAYOUT_ATTEMPTS):
        rng = np.random.default_rng([abs(int(seed)), attempt])
        count = int(rng.integers(3, 8))
        blobs = []
        for _ in range(count):
            ry = float(rng.uniform(0.08, 0.30))
            rx = float(rng.uniform(0.08, 0.30))
            margin = max(ry, rx) + 0.02
            blobs.append(
                Blob(
                    center_y=float(rng.uniform(margin, 1.0 - margin)),
                    center_x=float(rng.uniform(margin, 1.0 - margin)),
                    radius_y=ry,
                    radius_x=rx,
                    angle=float(rng.uniform(0.0, np.pi)),
                    phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                    frequency=float(rng.uniform(3.0, 8.0)),
                )
            )
        level = float(rng.uniform(0.97, 1.0))
        corners = tuple(float(v) for v in rng.uniform(-1.0, 1.0, size=4))
        layout = TissueLayout(int(seed), tuple(blobs), level, corners)
        coverage = render_mask(layout, REFERENCE_SIZE).mean()
        if COVERAGE_LOW <= coverage <= COVERAGE_HIGH:
            return layout
    raise ContractError(f"no acceptable layout within {MAX_LAYOUT_ATTEMPTS} draws for seed {seed}")


def _blob_fields(layout: TissueLayout, size: int) -> tuple[np.ndarray, np.ndarray]:
    """(tissue mask, texture wave) rasterized on a size x size grid.

    Overlaps resolve to the earliest blob in layout order, so the wave is
    well-defined everywhere under the mask.
    """
    centers = (np.arange(size) + 0.5) / size
    ys, xs = np.meshgrid(centers, centers, indexing="ij")
    mask = np.zeros((size, size), dtype=bool)
    wave = np.zeros((size, size), dtype=np.float64)
    for blob in layout.blobs:
        dy = ys - blob.center_y
        dx = xs - blob.center_x
        cos_a, sin_a = np.cos(blob.angle), np.sin(blob.angle)
        u = cos_a * dx + sin_a * dy
        v = -sin_a * dx + cos_a * dy
        inside = (u / blob.radius_x) ** 2 + (v / blob.radius_y) ** 2 <= 1.0
        fresh = inside & ~mask
        wave[fresh] = np.sin(2.0 * np.pi * blob.frequency * u[fresh] + blob.phase)
        mask |= inside
    return mask, wave


def render_mask(layout: TissueLayout, size: int) -> np.ndarray:
    """Boolean tissue mask at the given square size."""
    if size < 32:
        raise ConfigError(f"size must be >= 32, got {size}")
    return _blob_fields(layout, size)[0]


def _shading_field(corners, size: int) -> np.ndarray:
    """Bilinear interpolation of the four corner weights onto the canvas."""
    t = (np.arange(size) + 0.5) / size
    ys, xs = np.meshgrid(t, t, indexing="ij")
    c00, c01, c10, c11 = corners
    return (1 - ys) * (1 - xs) * c00 + (1 - ys) * xs * c01 + ys * (1 - xs) * c10 + ys * xs * c11


def synth_image(layout: TissueLayout, palette: StainPalette, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Render one (size, size, 3) float image in [0, 1] plus its tissue mask.

    Tissue pixels blend the palette's two colors along the texture wave;
    background pixels are the palette tint scaled by the layout's
    background level; the layout's illumination gradient then modulates
    the whole frame (every background channel stays >= 0.9).
    """
    if size < 32:
        raise ConfigError(f"size must be >= 32, got {size}")
    mask, wave = _blob_fields(layout, size)
    back = np.asarray(palette.background, dtype=np.float64) * layout.background_level
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = back
    blend = 0.5 + 0.5 * palette.contrast * wave[mask]
    color_a = np.asarray(palette.color_a, dtype=np.float64)
    color_b = np.asarray(palette.color_b, dtype=np.float64)
    img[mask] = color_a * (1.0 - blend[:, None]) + color_b * blend[:, None]
    img *= 1.0 + SHADING_AMPLITUDE * _shading_field(layout.shading, size)[..., None]
    np.clip(img, 0.0, 1.0, out=img)
    return img.astype(np.float32), mask


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 at 8 bits per channel."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"image must be (h, w, 3), got shape {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary P5; tissue pixels are 255, background 0."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {m.shape}")
    data = np.where(m.astype(bool), 255, 0).astype(np.uint8)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} header")
    fields: list[int] = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: malformed header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit files supported, maxval {maxval}")
    expected = w * h * channels
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w, channels) if channels > 1 else (h, w))


def read_ppm(path) -> np.ndarray:
    """(h, w, 3) float32 in [0, 1]."""
    return _read_netpbm(path, b"P6", 3).astype(np.float32) / 255.0


def read_pgm(path) -> np.ndarray:
    """Boolean mask; any nonzero byte counts as tissue."""
    return _read_netpbm(path, b"P5", 1) > 0


@dataclass(frozen=True)
class ManifestRow:
    path: str
    domain: str
    seed: int

    @property
    def sample_name(self) -> str:
        return Path(self.path).stem


def sample_seed(dataset_seed: int, index: int) -> int:
    return int(dataset_seed) * SEED_STRIDE + int(index)


def make_dataset(count: int, domains, seed: int, out_dir, size: int = REFERENCE_SIZE) -> Path:
    """Render ``count`` samples per domain under ``out_dir``.

    Every domain shares the sample's layout (so masks align pixel-exact);
    masks land in ``masks/``, images in one directory per domain, and the
    manifest lists (relative path, domain, per-sample seed) — count times
    the number of domains rows.  Byte-identical for identical arguments.
    """
    domains = list(domains)
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if not domains:
        raise ConfigError("need at least one domain")
    for d in domains:
        if d not in PALETTES:
            raise ConfigError(f"unknown domain {d!r}; available: {sorted(PALETTES)}")
    if len(set(domains)) != len(domains):
        raise ConfigError("duplicate domains in request")

    root = Path(out_dir)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for d in domains:
        (root / d).mkdir(parents=True, exist_ok=True)

    def render_sample(index: int) -> int:
        s = sample_seed(seed, index)
        layout = make_layout(s)
        stem = f"{index:05d}"
        mask_written = False
        for d in domains:
            img, mask = synth_image(layout, PALETTES[d], size)
            write_ppm(root / d / f"{stem}.ppm", img)
            if not mask_written:
                write_pgm(root / "masks" / f"{stem}.pgm", mask)
                mask_written = True
        return s

    workers = worker_count(limit=count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            seeds = list(pool.map(render_sample, range(count)))
    else:
        seeds = [render_sample(i) for i in range(count)]

    manifest = root / "manifest.tsv"
    with open(manifest, "w", encoding="ascii") as f:
        for index in range(count):
            stem = f"{index:05d}"
            for d in domains:
                f.write(f"{d}/{stem}.ppm\t{d}\t{seeds[index]}\n")
    return manifest


def read_manifest(directory) -> list[ManifestRow]:
    """Rows of ``manifest.tsv`` under ``directory``; every path must resolve."""
    root = Path(directory)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise FormatError(f"no manifest.tsv under {root}")
    rows = []
    for line_no, line in enumerate(manifest.read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{manifest}:{line_no}: expected 3 tab-separated fields")
        path, domain, seed_text = parts
        try:
            row_seed = int(seed_text)
        except ValueError:
            raise FormatError(f"{manifest}:{line_no}: seed field is not an integer") from None
        if not (root / path).is_file():
            raise FormatError(f"{manifest}:{line_no}: {path} does not resolve under {root}")
        rows.append(ManifestRow(path, domain, row_seed))
    return rows


def mask_path_for(directory, row: ManifestRow) -> Path:
    """Mask file shared by all domains of the row's sample."""
    return Path(directory) / "masks" / f"{row.sample_name}.pgm"
