"""Flat ``key = value`` run configuration.

One dataclass holds every knob with its default; the file format is one
assignment per line, ``#`` starting a comment, unknown keys rejected.
Types are inferred from the dataclass fields, so adding a field makes it
parseable automatically.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .hypergraph import _ACTIVATIONS
from .losses import ADV_MODES
from .synth import PALETTES
from .weighting import HEATMAP_MODES, SIMILARITY_DOMAINS, WEIGHT_STRATEGIES

CONTRASTIVE_MODES = ("none", "sthcl", "sthcl_monce", "stnhcl")


@dataclass
class RunConfig:
    """Everything a training or evaluation run needs, with defaults."""

    # run mechanics
    seed: int = 0
    iterations: int = 2000
    image_size: int = 64
    data_dir: str = "data/train"
    eval_dir: str = "data/eval"
    source_domain: str = "he"
    num_eval_samples: int = 12
    checkpoint_interval: int = 1000
    css_probe_interval: int = 200
    # optimizer
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    # patch sampling
    layer_taps: tuple = (0, 1)
    num_patches: int = 64
    embed_dim: int = 64
    pool_factor: int = 4
    # hypergraph
    num_hyperedges: int = 4
    membership_threshold: float = 0.3
    cluster_temperature: float = 0.1
    cluster_iters: int = 10
    hgnn_hidden: int = 64
    hgnn_out: int = 64
    hgnn_activation: str = "leaky_relu"
    share_topology: bool = False
    share_hgnn_params: bool = False
    # negative weighting
    mu1: float = 0.7
    sigma1: float = 0.5
    mu2: float = 0.1
    sigma2: float = 0.5
    tau: float = 0.07
    similarity_domain: str = "cosine"
    weight_strategy: str = "dual_normal"
    detach_weights: bool = True
    heatmap_mode: str = "features"
    # objective assembly
    adv_mode: str = "lsgan"
    lambda1: float = 10.0
    lambda2: float = 10.0
    contrastive: str = "stnhcl"
    enable_patchnce: bool = True
    enable_adv: bool = True
    # model widths
    enc_channels: tuple = (16, 32, 64)
    disc_channels: tuple = (16, 32, 64, 64)

    def validate(self) -> None:
        positive = (
            "iterations image_size num_eval_samples checkpoint_interval css_probe_interval "
            "learning_rate num_patches embed_dim pool_factor num_hyperedges cluster_iters "
            "hgnn_hidden hgnn_out tau sigma1 sigma2"
        ).split()
        for name in positive:
            value = getattr(self, name)
            if value <= 0 and not (name == "iterations" and value == 0):
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not 0.0 < self.membership_threshold < 1.0:
            raise ConfigError(f"membership_threshold must lie in (0, 1), got {self.membership_threshold}")
        if self.cluster_temperature <= 0:
            raise ConfigError(f"cluster_temperature must be positive, got {self.cluster_temperature}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"lambda weights must be >= 0, got {self.lambda1}, {self.lambda2}")
        if self.pool_factor < 2:
            raise ConfigError(f"pool_factor must be >= 2 so the partition has room, got {self.pool_factor}")
        if self.source_domain not in PALETTES:
            raise ConfigError(f"unknown source_domain {self.source_domain!r}")
        if self.hgnn_activation not in _ACTIVATIONS:
            raise ConfigError(f"hgnn_activation must be one of {sorted(_ACTIVATIONS)}")
        if self.similarity_domain not in SIMILARITY_DOMAINS:
            raise ConfigError(f"similarity_domain must be one of {SIMILARITY_DOMAINS}")
        if self.weight_strategy not in WEIGHT_STRATEGIES:
            raise ConfigError(f"weight_strategy must be one of {WEIGHT_STRATEGIES}")
        if self.heatmap_mode not in HEATMAP_MODES:
            raise ConfigError(f"heatmap_mode must be one of {HEATMAP_MODES}")
        if self.adv_mode not in ADV_MODES:
            raise ConfigError(f"adv_mode must be one of {ADV_MODES}")
        if self.contrastive not in CONTRASTIVE_MODES:
            raise ConfigError(f"contrastive must be one of {CONTRASTIVE_MODES}")
        if not self.layer_taps:
            raise ConfigError("layer_taps must name at least one encoder block")
        for tap in self.layer_taps:
            if not 0 <= tap < len(self.enc_channels):
                raise ConfigError(f"layer tap {tap} outside encoder blocks [0, {len(self.enc_channels)})")
        if len(self.enc_channels) < 1:
            raise ConfigError("enc_channels must name at least one block")
        if len(self.disc_channels) != 4:
            raise ConfigError(f"disc_channels must name 4 blocks, got {len(self.disc_channels)}")
        divisor = 2 ** len(self.enc_channels)
        if self.image_size % divisor:
            raise ConfigError(f"image_size must be divisible by {divisor}, got {self.image_size}")
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.num_hyperedges > self.num_patches:
            raise ConfigError("num_hyperedges cannot exceed num_patches")
        for tap in self.layer_taps:
            extent = self.image_size // (2 ** (tap + 1))
            cells = extent * extent
            if self.contrastive == "stnhcl" and min(4 * self.num_patches, cells) < 2 * self.num_patches:
                raise ConfigError(
                    f"tap {tap} has only {cells} cells; partitioning needs at least {2 * self.num_patches}"
                )
            if cells < self.num_patches:
                raise ConfigError(f"tap {tap} has only {cells} cells; cannot sample {self.num_patches}")

    def to_text(self) -> str:
        """Canonical ``key = value`` listing (parseable back)."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            lines.append(f"{f.name} = {rendered}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, text: str):
    field = _FIELDS[name]
    kind = field.type if isinstance(field.type, type) else type(field.default)
    text = text.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    if kind is tuple:
        if not text:
            return ()
        try:
            return tuple(int(tok) for tok in text.split(","))
        except ValueError:
            raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}") from None
    return text


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; later assignments win, unknown keys fail."""
    cfg = RunConfig()
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, value))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(encoding="utf-8"))
