"""Desk-scale convolutional models for exercising the objective stack.

These are deliberately small: a stride-2 encoder whose block outputs are
the contrastive tap points, a label-conditioned decoder mirroring it, and
a patch discriminator that returns both its spatial score map and the
penultimate feature map (the heatmap source).  Widths, dtype, and the
initialization scheme are constructor knobs so gradient checks can run
tiny 64-bit instances of the very same code path.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

INIT_SCHEMES = ("uniform", "zeros")
MODULATION_BOUND = 0.1  # label table entries start in [-bound, bound]


def init_array(rng: np.random.Generator, shape, fan_in: int, dtype, scheme: str) -> np.ndarray:
    """Uniform fan-in init: entries in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if scheme == "zeros":
        return np.zeros(shape, dtype=dtype)
    if scheme != "uniform":
        raise ConfigError(f"scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _ConvStack:
    """Shared bookkeeping: named parameter registry."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)


class Encoder(_ConvStack):
    """Stride-2 conv blocks (kernel 3, pad 1), leaky rectifier after each.

    Padding replicates the border row/column instead of inserting zeros:
    zero padding writes a synthetic dark frame around bright images, and
    a translation model must not manufacture border structure that the
    critic then learns to chase.  ``forward`` returns every block's
    post-activation output; those are the declared tap points, halving
    spatial extents per block: block i of an s-sized input is
    (channels[i], s / 2**(i+1), s / 2**(i+1)).
    """

    def __init__(self, rng, in_channels: int = 3, channels=(16, 32, 64), dtype=np.float32, scheme: str = "uniform"):
        super().__init__()
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.dtype = np.dtype(dtype)
        if not self.channels:
            raise ConfigError("encoder needs at least one block")
        prev = in_channels
        self.blocks = []
        for i, c in enumerate(self.channels):
            w = self._add(f"conv{i}.weight", init_array(rng, (c, prev, 3, 3), prev * 9, self.dtype, scheme))
            b = self._add(f"conv{i}.bias", np.zeros(c, dtype=self.dtype))
            self.blocks.append((w, b))
            prev = c

    def forward(self, image: Tensor) -> list[Tensor]:
        if image.ndim != 3 or image.shape[0] != self.in_channels:
            raise ShapeError(f"expected ({self.in_channels}, h, w) input, got shape {image.shape}")
        feats = []
        h = image
        for w, b in self.blocks:
            h = T.leaky_relu(T.conv2d(h, w, b, stride=2, padding=1, pad_mode="edge"), 0.2)
            feats.append(h)
        return feats

    def feature_shapes(self, size: int) -> list[tuple[int, int, int]]:
        shapes = []
        extent = size
        for c in self.channels:
            extent = (extent - 1) // 2 + 1
            shapes.append((c, extent, extent))
        return shapes


class ConditionalGenerator(_ConvStack):
    """Encoder + label-modulated decoder with a sigmoid-bounded output.

    Each decoder block: nearest-neighbor 2x upsample, conv (kernel 3,
    stride 1, pad 1, border-replicated like the encoder), per-label
    feature modulation ``(1 + scale[label]) * h + shift[label]``, leaky
    rectifier.  The head conv maps back to image channels and a sigmoid
    keeps values in (0, 1); replicated padding means a constant input
    translates to a constant image with no border frame.  Input extents
    must be divisible by 2**len(channels).
    """

    def __init__(self, rng, num_domains: int, in_channels: int = 3, channels=(16, 32, 64),
                 dtype=np.float32, scheme: str = "uniform"):
        super().__init__()
        if num_domains < 1:
            raise ConfigError(f"num_domains must be >= 1, got {num_domains}")
        self.num_domains = num_domains
        self.dtype = np.dtype(dtype)
        self.encoder = Encoder(rng, in_channels, channels, dtype, scheme)
        self._params.update({f"enc.{k}": v for k, v in self.encoder.parameters().items()})

        widths = list(channels)
        dec_out = widths[-2::-1] + [widths[0]]  # mirror, e.g. (16,32,64) -> [32,16,16]
        prev = widths[-1]
        self.dec_blocks = []
        for i, c in enumerate(dec_out):
            w = self._add(f"dec.block{i}.weight", init_array(rng, (c, prev, 3, 3), prev * 9, self.dtype, scheme))
            b = self._add(f"dec.block{i}.bias", np.zeros(c, dtype=self.dtype))
            if scheme == "uniform":
                tables = rng.uniform(-MODULATION_BOUND, MODULATION_BOUND, size=(2, num_domains, c)).astype(self.dtype)
            else:
                tables = np.zeros((2, num_domains, c), dtype=self.dtype)
            s = self._add(f"dec.block{i}.scale", tables[0])
            t = self._add(f"dec.block{i}.shift", tables[1])
            self.dec_blocks.append((w, b, s, t))
            prev = c
        self.head_w = self._add("dec.head.weight", init_array(rng, (in_channels, prev, 3, 3), prev * 9, self.dtype, scheme))
        self.head_b = self._add("dec.head.bias", np.zeros(in_channels, dtype=self.dtype))

    def _check_label(self, label: int) -> int:
        label = int(label)
        if not 0 <= label < self.num_domains:
            raise ConfigError(f"label must lie in [0, {self.num_domains}), got {label}")
        return label

    def decode(self, features: list[Tensor], label: int) -> Tensor:
        label = self._check_label(label)
        idx = np.array([label])
        h = features[-1]
        for w, b, scale_tab, shift_tab in self.dec_blocks:
            h = T.conv2d(T.upsample_nearest(h, 2), w, b, stride=1, padding=1, pad_mode="edge")
            c = h.shape[0]
            gain = T.reshape(T.gather_rows(scale_tab, idx), (c, 1, 1))
            offset = T.reshape(T.gather_rows(shift_tab, idx), (c, 1, 1))
            h = T.add(T.mul(h, T.add(gain, 1.0)), offset)
            h = T.leaky_relu(h, 0.2)
        return T.sigmoid(T.conv2d(h, self.head_w, self.head_b, stride=1, padding=1, pad_mode="edge"))

    def translate(self, image: Tensor, label: int) -> Tensor:
        out, _ = self.translate_with_features(image, label)
        return out

    def translate_with_features(self, image: Tensor, label: int) -> tuple[Tensor, list[Tensor]]:
        """Translated image plus the encoder taps it was decoded from."""
        divisor = 2 ** len(self.encoder.channels)
        if image.ndim != 3:
            raise ShapeError(f"image must be (c, h, w), got shape {image.shape}")
        if image.shape[1] % divisor or image.shape[2] % divisor:
            raise ConfigError(f"image extents must be divisible by {divisor}, got {image.shape[1:]}")
        features = self.encoder.forward(image)
        out = self.decode(features, label)
        if out.shape != image.shape:  # pragma: no cover - guarded by the divisor check
            raise ShapeError(f"decoder produced {out.shape} from input {image.shape}")
        return out, features


def instance_norm(h: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel spatial standardization of a (c, h, w) tensor.

    Parameter-free: each channel is centered and scaled by its own
    spatial statistics, so uniform regions map near zero and textured
    regions keep their deviations.  ``eps`` guards constant channels.
    """
    if h.ndim != 3:
        raise ShapeError(f"instance_norm needs a (c, h, w) tensor, got shape {h.shape}")
    c, hh, ww = h.shape
    flat = T.reshape(h, (c, hh * ww))
    mu = T.reduce_mean(flat, axis=1, keepdims=True)
    centered = T.sub(flat, mu)
    var = T.reduce_mean(T.mul(centered, centered), axis=1, keepdims=True)
    normed = T.div(centered, T.sqrt(T.add(var, eps)))
    return T.reshape(normed, (c, hh, ww))


class Discriminator(_ConvStack):
    """Patch discriminator: per-location scores plus penultimate features.

    Three stride-2 blocks (kernel 3, zero pad 1, leaky rectifier) then a
    stride-1 valid block (kernel 3, no padding, linear), closed by a
    1-channel stride-1 conv.  The middle blocks standardize their
    channels spatially (parameter-free instance normalization) so the
    trunk tracks local structure rather than raw brightness; the valid
    block stays linear and un-normalized because its raw response is
    the penultimate feature map — the heatmap source — and renormalizing
    or rectifying it was measured to smear exactly the per-cell energy
    contrasts the heatmap exists to expose.

    Zero padding is kept deliberately: a flat image of any color reads
    as zero after instance normalization, so the padded border response
    is the one absolute reference that lets the score react to the
    image's overall color.  The price is that border response is huge
    for bright images, so cells whose receptive field touches the
    padding must not feed the heatmap.  With kernel 3 / stride 2 /
    pad 1 at even extents only the top/left window ever overlaps the
    padding, so after the valid penultimate block the contaminated
    cells are exactly the first grid row and column; ``heat_view``
    drops them and ``heat_geometry`` reports where the remaining cells
    sit on the image.  On a 64x64 input the score map is 6x6 and the
    heat view is 5x5.  ``forward`` returns (score map, penultimate
    block).
    """

    STRIDES = (2, 2, 2, 1)
    HEAT_CROP = 1  # leading grid rows/cols whose receptive field spans padding

    def __init__(self, rng, in_channels: int = 3, channels=(16, 32, 64, 64), dtype=np.float32, scheme: str = "uniform"):
        super().__init__()
        if len(channels) != len(self.STRIDES):
            raise ConfigError(f"discriminator takes {len(self.STRIDES)} block widths, got {len(channels)}")
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.dtype = np.dtype(dtype)
        prev = in_channels
        self.blocks = []
        for i, c in enumerate(self.channels):
            w = self._add(f"conv{i}.weight", init_array(rng, (c, prev, 3, 3), prev * 9, self.dtype, scheme))
            b = self._add(f"conv{i}.bias", np.zeros(c, dtype=self.dtype))
            self.blocks.append((w, b))
            prev = c
        self.score_w = self._add("score.weight", init_array(rng, (1, prev, 3, 3), prev * 9, self.dtype, scheme))
        self.score_b = self._add("score.bias", np.zeros(1, dtype=self.dtype))

    def heat_view(self, spatial_map: np.ndarray) -> np.ndarray:
        """Restrict a (c, h, w) score/penultimate map to padding-free cells."""
        k = self.HEAT_CROP
        return spatial_map[:, k:, k:]

    def heat_geometry(self, image_shape) -> tuple[tuple[int, int], tuple[int, int]]:
        """(origin, cell) placement of the heat view on the input image.

        The stride-2 blocks give cells of ``prod(strides)`` pixels.  The
        receptive-field center of heat cell j lies at
        ``step * (j + HEAT_CROP + 1)`` image pixels, so the first cell's
        coverage starts half a cell before that center.
        """
        step = 1
        for s in self.STRIDES:
            step *= s
        origin = step * (1 + self.HEAT_CROP) - step // 2
        return (origin, origin), (step, step)

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        if image.ndim != 3 or image.shape[0] != self.in_channels:
            raise ShapeError(f"expected ({self.in_channels}, h, w) input, got shape {image.shape}")
        h = image
        last = len(self.blocks) - 1
        for i, ((w, b), stride) in enumerate(zip(self.blocks, self.STRIDES)):
            h = T.conv2d(h, w, b, stride=stride, padding=0 if i == last else 1)
            if i == last:
                break
            if i > 0:
                h = instance_norm(h)
            h = T.leaky_relu(h, 0.2)
        score = T.conv2d(h, self.score_w, self.score_b, stride=1, padding=1)
        return score, h
