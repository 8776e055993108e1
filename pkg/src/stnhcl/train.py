"""Alternating adversarial / contrastive training loop.

One iteration draws a source image and a target domain, updates the
discriminator on (real target, translated) least squares, then updates
the generator side — encoder, decoder, projection heads, and hypergraph
branches — on the lambda-weighted total objective.  Batch size is one
image; every random draw comes from a single seeded generator, so runs
are exactly reproducible.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .hypergraph import HgnnParams, HypergraphConfig, init_hgnn_params
from .losses import (
    LossReport,
    hypergraph_embed,
    lsgan_d_loss,
    lsgan_g_loss,
    monce_loss,
    patchnce_loss,
    sthcl_loss,
    stnhcl_loss,
    total_generator_loss,
)
from .metrics import css
from .models import ConditionalGenerator, Discriminator
from .optim import Adam
from .patches import gather_patches, init_projection_head, project, sample_patch_ids
from .synth import STAIN_DOMAINS, mask_path_for, read_manifest, read_pgm, read_ppm
from .tensor import Graph, Tensor
from .weighting import WeightConfig, heatmap_from_maps, partition_patches

METRICS_COLUMNS = ("iter", "loss_adv", "loss_patchnce", "loss_stnhcl", "loss_aux", "loss_total", "css_probe")


def domain_label(domain: str) -> int:
    """Stable label index over the fixed stain universe."""
    try:
        return STAIN_DOMAINS.index(domain)
    except ValueError:
        raise ConfigError(f"unknown domain {domain!r}; known: {STAIN_DOMAINS}") from None


@dataclass
class LoadedDataset:
    """All images of one manifest, decoded to channel-first float32."""

    images: dict[str, list[np.ndarray]]
    masks: dict[str, list[np.ndarray]]

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(sorted(self.images))


def load_dataset(directory, image_size: int | None = None, with_masks: bool = False) -> LoadedDataset:
    rows = read_manifest(directory)
    images: dict[str, list[np.ndarray]] = {}
    masks: dict[str, list[np.ndarray]] = {}
    root = Path(directory)
    for row in sorted(rows, key=lambda r: (r.domain, r.path)):
        img = read_ppm(root / row.path)
        if image_size is not None and img.shape[:2] != (image_size, image_size):
            raise ConfigError(
                f"{row.path} is {img.shape[1]}x{img.shape[0]}, config wants {image_size}x{image_size}"
            )
        images.setdefault(row.domain, []).append(np.ascontiguousarray(img.transpose(2, 0, 1)))
        if with_masks:
            masks.setdefault(row.domain, []).append(read_pgm(mask_path_for(root, row)))
    return LoadedDataset(images, masks)


@dataclass
class TrainState:
    """Models, per-tap heads and hypergraph branches, and their optimizers."""

    cfg: RunConfig
    generator: ConditionalGenerator
    discriminator: Discriminator
    heads: list
    hgnn_x: list[HgnnParams]
    hgnn_y: list[HgnnParams]
    opt_g: Adam = field(default=None)
    opt_d: Adam = field(default=None)

    def generator_parameters(self) -> dict[str, Tensor]:
        params = {f"gen.{k}": v for k, v in self.generator.parameters().items()}
        for tap, head in zip(self.cfg.layer_taps, self.heads):
            params.update({f"head{tap}.{k}": v for k, v in head.parameters().items()})
        for tap, px in zip(self.cfg.layer_taps, self.hgnn_x):
            params[f"hgnn.l{tap}.x.theta1"] = px.theta1
            params[f"hgnn.l{tap}.x.theta2"] = px.theta2
        if not self.cfg.share_hgnn_params:
            for tap, py in zip(self.cfg.layer_taps, self.hgnn_y):
                params[f"hgnn.l{tap}.y.theta1"] = py.theta1
                params[f"hgnn.l{tap}.y.theta2"] = py.theta2
        return params

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {f"disc.{k}": v for k, v in self.discriminator.parameters().items()}

    def all_parameters(self) -> dict[str, Tensor]:
        return {**self.generator_parameters(), **self.discriminator_parameters()}


def build_state(cfg: RunConfig, rng: np.random.Generator) -> TrainState:
    """Construct models and branch parameters; consumes ``rng`` draws."""
    cfg.validate()
    generator = ConditionalGenerator(rng, len(STAIN_DOMAINS), channels=cfg.enc_channels)
    discriminator = Discriminator(rng, channels=cfg.disc_channels)
    heads, hgnn_x, hgnn_y = [], [], []
    for tap in cfg.layer_taps:
        in_dim = cfg.enc_channels[tap]
        heads.append(init_projection_head(rng, in_dim, cfg.embed_dim, layer=tap))
        px = init_hgnn_params(rng, in_dim, cfg.hgnn_hidden, cfg.hgnn_out, cfg.hgnn_activation)
        hgnn_x.append(px)
        hgnn_y.append(px if cfg.share_hgnn_params else init_hgnn_params(rng, in_dim, cfg.hgnn_hidden, cfg.hgnn_out, cfg.hgnn_activation))
    state = TrainState(cfg, generator, discriminator, heads, hgnn_x, hgnn_y)
    state.opt_g = Adam(state.generator_parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
    state.opt_d = Adam(state.discriminator_parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
    return state


def load_state(cfg: RunConfig, checkpoint_path) -> TrainState:
    """Rebuild a state skeleton and fill it from a checkpoint."""
    state = build_state(cfg, np.random.default_rng(cfg.seed))
    assign_parameters(state.all_parameters(), load_checkpoint(checkpoint_path), str(checkpoint_path))
    return state


def _hypergraph_config(cfg: RunConfig) -> HypergraphConfig:
    return HypergraphConfig(
        num_edges=cfg.num_hyperedges,
        threshold=cfg.membership_threshold,
        temperature=cfg.cluster_temperature,
        iters=cfg.cluster_iters,
        share_topology=cfg.share_topology,
    )


def _weight_config(cfg: RunConfig) -> WeightConfig:
    return WeightConfig(
        mu1=cfg.mu1,
        sigma1=cfg.sigma1,
        mu2=cfg.mu2,
        sigma2=cfg.sigma2,
        tau=cfg.tau,
        strategy=cfg.weight_strategy,
        similarity_domain=cfg.similarity_domain,
        detach=cfg.detach_weights,
    )


def contrastive_term(
    state: TrainState,
    feats_x: list[Tensor],
    feats_y: list[Tensor],
    tap_ids: list,
    heatmap,
    rng: np.random.Generator,
):
    """Per-config contrastive objective summed over tap layers (or None)."""
    cfg = state.cfg
    hg_cfg = _hypergraph_config(cfg)
    weight_cfg = _weight_config(cfg)
    total = None
    for slot, tap in enumerate(cfg.layer_taps):
        fx, fy = feats_x[tap], feats_y[tap]
        if cfg.contrastive == "none":
            return None
        if cfg.contrastive in ("sthcl", "sthcl_monce"):
            ids = tap_ids[slot]
            xp, yp = gather_patches(fx, ids), gather_patches(fy, ids)
            if cfg.contrastive == "sthcl":
                term = sthcl_loss(xp, yp, hg_cfg, state.hgnn_x[slot], state.hgnn_y[slot], cfg.tau, rng)
            else:
                zx, topo = hypergraph_embed(xp, hg_cfg, state.hgnn_x[slot], rng)
                zy, _ = hypergraph_embed(
                    yp, hg_cfg, state.hgnn_y[slot], rng, topology=topo if hg_cfg.share_topology else None
                )
                term = monce_loss(zx, zy, cfg.tau, mode="hard", detach_weights=cfg.detach_weights)
        else:  # stnhcl
            c, h, w = fx.shape
            pool_size = min(cfg.pool_factor * cfg.num_patches, h * w)
            pool = sample_patch_ids((h, w), pool_size, rng, layer=tap)
            partition = partition_patches(heatmap, pool, cfg.num_patches)
            term = stnhcl_loss(
                partition, fx, fy, hg_cfg, weight_cfg, state.hgnn_x[slot], state.hgnn_y[slot], rng
            )
        total = term if total is None else T.add(total, term)
    return total


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    out_dir: Path
    iterations: int
    domains: tuple[str, ...]
    last_report: LossReport | None
    wall_seconds: float


def train(cfg: RunConfig, out_dir, aux_loss=None) -> TrainResult:
    """Run the configured number of iterations; returns artifact paths.

    ``aux_loss(x_image, translated, label)`` may inject an extra
    generator term (grouped with the adversarial term under lambda1).
    Writes ``ckpt_000000.stnh`` up front, periodic and final checkpoints,
    and one metrics CSV row per iteration.
    """
    cfg.validate()
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    data = load_dataset(cfg.data_dir, cfg.image_size)
    if cfg.source_domain not in data.images:
        raise ConfigError(f"source domain {cfg.source_domain!r} missing from {cfg.data_dir}")
    targets = tuple(d for d in data.domains if d != cfg.source_domain)
    if not targets:
        raise ConfigError("training data holds no target domain")
    sources = data.images[cfg.source_domain]

    rng = np.random.default_rng(cfg.seed)
    state = build_state(cfg, rng)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")

    save_checkpoint(out / "ckpt_000000.stnh", state.all_parameters())
    metrics_path = out / "metrics.csv"
    metrics_file = open(metrics_path, "w", newline="", encoding="ascii")
    writer = csv.writer(metrics_file)
    writer.writerow(METRICS_COLUMNS)

    gen_params = state.generator_parameters()
    disc_params = state.discriminator_parameters()
    gen_names, gen_tensors = list(gen_params), list(gen_params.values())
    disc_names, disc_tensors = list(disc_params), list(disc_params.values())

    report = None
    last_checkpoint = out / "ckpt_000000.stnh"
    for step in range(1, cfg.iterations + 1):
        x_img = sources[rng.integers(len(sources))]
        target = targets[rng.integers(len(targets))]
        label = domain_label(target)
        real_img = data.images[target][rng.integers(len(data.images[target]))]
        x = Tensor(x_img)
        real = Tensor(real_img)

        # Discriminator step: translated image is a constant here.
        fake_const = state.generator.translate(x, label).detach()
        with Graph() as graph:
            score_real, _ = state.discriminator.forward(real)
            score_fake, _ = state.discriminator.forward(fake_const)
            d_loss = lsgan_d_loss(score_real, score_fake, cfg.adv_mode)
            d_grads = graph.backward(d_loss, disc_tensors)
        state.opt_d.step(dict(zip(disc_names, d_grads)))

        # Generator step.
        with Graph() as graph:
            translated, feats_x = state.generator.translate_with_features(x, label)
            score_fake, penultimate = state.discriminator.forward(translated)
            adv = None
            if cfg.enable_adv:
                if cfg.adv_mode == "verbatim":
                    score_real, _ = state.discriminator.forward(real)
                    adv = lsgan_g_loss(score_fake, score_real, cfg.adv_mode)
                else:
                    adv = lsgan_g_loss(score_fake, mode=cfg.adv_mode)
            feats_y = state.generator.encoder.forward(translated)

            tap_ids = []
            for slot, tap in enumerate(cfg.layer_taps):
                c, h, w = feats_x[tap].shape
                tap_ids.append(sample_patch_ids((h, w), min(cfg.num_patches, h * w), rng, layer=tap))

            nce = None
            if cfg.enable_patchnce:
                zx_sets, zy_sets = [], []
                for slot, tap in enumerate(cfg.layer_taps):
                    ids = tap_ids[slot]
                    zx_sets.append(project(gather_patches(feats_x[tap], ids), state.heads[slot]))
                    zy_sets.append(project(gather_patches(feats_y[tap], ids), state.heads[slot]))
                nce = patchnce_loss(zx_sets, zy_sets, cfg.tau)

            origin, cell = state.discriminator.heat_geometry((cfg.image_size, cfg.image_size))
            heatmap = heatmap_from_maps(
                state.discriminator.heat_view(score_fake.data),
                state.discriminator.heat_view(penultimate.data),
                (cfg.image_size, cfg.image_size),
                cfg.heatmap_mode,
                origin,
                cell,
            )
            contrastive = contrastive_term(state, feats_x, feats_y, tap_ids, heatmap, rng)
            aux = aux_loss(x, translated, label) if aux_loss is not None else None
            total, report = total_generator_loss(adv, nce, contrastive, aux, cfg.lambda1, cfg.lambda2)
            g_grads = graph.backward(total, gen_tensors)
        state.opt_g.step(dict(zip(gen_names, g_grads)))

        probe = ""
        if cfg.css_probe_interval and step % cfg.css_probe_interval == 0:
            probe = f"{css(x_img.transpose(1, 2, 0), translated.data.transpose(1, 2, 0)):.6f}"
        writer.writerow(
            [
                step,
                f"{report.adv:.8g}",
                f"{report.patchnce:.8g}",
                f"{report.stnhcl:.8g}",
                f"{report.aux:.8g}",
                f"{report.total:.8g}",
                probe,
            ]
        )
        if step % cfg.checkpoint_interval == 0 or step == cfg.iterations:
            last_checkpoint = out / f"ckpt_{step:06d}.stnh"
            save_checkpoint(last_checkpoint, state.all_parameters())

    metrics_file.close()
    return TrainResult(
        checkpoint_path=last_checkpoint,
        metrics_path=metrics_path,
        out_dir=out,
        iterations=cfg.iterations,
        domains=data.domains,
        last_report=report,
        wall_seconds=time.perf_counter() - started,
    )
