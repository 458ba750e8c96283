"""Training loops: the toy teacher (paired L1 + adversarial) and the shortcut
block (alignment, distillation, perceptual, and adversarial terms against the
frozen teacher).

Shortcut training samples a (reference, current) frame pair from one video
per step, with a timestep gap drawn uniformly from [1, max_interval]. The
teacher is frozen throughout; since it never changes, its activations for the
whole dataset are precomputed once into a feature bank, which is
mathematically identical to recomputing them every step and much faster on
CPU. Gradients still flow through the teacher's decoder layers into the
block when producing the student's output frame.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .block import ShortcutBlock, ShortcutConfig
from .losses import (
    FeaturePyramid,
    LossWeights,
    PatchDiscriminator,
    TemporalDiscriminator,
    loss_align,
    loss_distill,
    loss_gan,
    loss_perceptual,
    total_loss,
)
from .teacher import ToyTranslator, split_for


@dataclass
class TeacherTrainConfig:
    base_width: int = 32
    steps: int = 600
    lr: float = 2e-4
    l1_weight: float = 100.0
    seed: int = 0
    log_every: int = 25


@dataclass
class ShortcutTrainConfig:
    steps: int = 2000
    alpha: int = 3
    dependence: str = "medium"
    channel_variant: str = "full"
    batch_size: int = 4
    # Toy-scale rates; the full-scale recipe pairs 2e-4 with a 2e-7
    # discriminator rate, which leaves toy discriminators inert.
    lr: float = 1e-3
    disc_lr: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    gan_mode: str = "logistic"
    seed: int = 0
    log_every: int = 25
    weights: LossWeights = field(default_factory=LossWeights)


def frames_to_tensor(frames) -> torch.Tensor:
    """[T, 3, H, W] float array -> contiguous float32 tensor.

    Contiguity matters for exact reproducibility: backend kernels are chosen
    per memory layout, so strided views can differ from contiguous ones by a
    few ulps.
    """
    if isinstance(frames, torch.Tensor):
        return frames.float().contiguous()
    import numpy as np

    return torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
        p.grad = None
    module.eval()
    return module


# -- teacher ------------------------------------------------------------------


def train_teacher(
    videos: list[tuple[torch.Tensor, torch.Tensor]],
    config: TeacherTrainConfig,
    log_path: str | Path | None = None,
) -> tuple[ToyTranslator, list[dict]]:
    """Train the toy translator on paired (source, target) frames."""
    if not videos or any(src.shape[0] < 1 for src, _ in videos):
        raise ValueError("need at least one video with at least one frame")
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)

    teacher = ToyTranslator(base_width=config.base_width)
    disc = PatchDiscriminator()
    opt_g = torch.optim.Adam(teacher.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(0.5, 0.999))

    metrics = []
    for step in range(config.steps):
        src, tgt = videos[rng.randrange(len(videos))]
        t = rng.randrange(src.shape[0])
        x = src[t : t + 1]
        y = tgt[t : t + 1]

        fake = teacher(x)
        l1 = (fake - y).abs().mean()
        adv = torch.nn.functional.softplus(-disc(fake)).mean()
        g_loss = config.l1_weight * l1 + adv
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        d_loss = (
            torch.nn.functional.softplus(-disc(y)).mean()
            + torch.nn.functional.softplus(disc(fake.detach())).mean()
        )
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        metrics.append({"step": step, "l1": l1.item(), "adv": adv.item(), "d": d_loss.item()})

    if log_path is not None:
        _write_csv(log_path, metrics)
    freeze(teacher)
    return teacher, metrics


# -- feature bank ---------------------------------------------------------------


@dataclass
class FeatureBank:
    """Frozen-teacher activations for every frame of every video."""

    a: list[torch.Tensor]  # per video: [T, C_a, h, w]
    f: list[torch.Tensor]  # per video: [T, C_f, h, w]
    o: list[torch.Tensor]  # per video: [T, 3, H, W]
    l_e: str
    l_d: str

    @property
    def num_videos(self) -> int:
        return len(self.a)

    def frames_in(self, video: int) -> int:
        return self.a[video].shape[0]


def prepare_feature_bank(
    teacher: ToyTranslator, videos: list[torch.Tensor], dependence: str
) -> FeatureBank:
    """Run the frozen teacher over all frames once, keeping split activations."""
    l_e, l_d = split_for(dependence)
    bank = FeatureBank(a=[], f=[], o=[], l_e=l_e, l_d=l_d)
    with torch.no_grad():
        for frames in videos:
            a_list, f_list, o_list = [], [], []
            for t in range(frames.shape[0]):
                a = teacher.encode_to(frames[t : t + 1], l_e)
                f = teacher.middle_to(a, l_e, l_d)
                o = teacher.decode_from(f, l_d)
                a_list.append(a)
                f_list.append(f)
                o_list.append(o)
            bank.a.append(torch.cat(a_list))
            bank.f.append(torch.cat(f_list))
            bank.o.append(torch.cat(o_list))
    return bank


def sample_pair(rng: random.Random, bank: FeatureBank, alpha: int) -> tuple[int, int, int]:
    """Pick (video, reference index, current index) with 1 <= gap <= alpha."""
    candidates = [v for v in range(bank.num_videos) if bank.frames_in(v) >= 2]
    if not candidates:
        raise ValueError("dataset has no video with at least 2 frames")
    v = candidates[rng.randrange(len(candidates))]
    n = bank.frames_in(v)
    dt = rng.randint(1, min(alpha, n - 1))
    r = rng.randrange(n - dt)
    return v, r, r + dt


def make_block_for(
    teacher: ToyTranslator, dependence: str, channel_variant: str = "full",
    mask_override: float | None = None,
) -> ShortcutBlock:
    """Build a shortcut block sized for the teacher's split at this level."""
    l_e, l_d = split_for(dependence)
    config = ShortcutConfig(
        channels_a=teacher.channels_at(l_e),
        channels_f=teacher.channels_at(l_d),
        channel_variant=channel_variant,
    )
    return ShortcutBlock(config, mask_override=mask_override)


# -- shortcut training ----------------------------------------------------------


def train_shortcut(
    teacher: ToyTranslator,
    bank: FeatureBank,
    block: ShortcutBlock,
    config: ShortcutTrainConfig,
    log_path: str | Path | None = None,
) -> list[dict]:
    """Optimize the shortcut block against the frozen teacher; returns metrics."""
    if config.alpha < 1:
        raise ValueError("alpha must be >= 1")
    if all(bank.frames_in(v) < 2 for v in range(bank.num_videos)):
        raise ValueError("dataset must contain a video with at least 2 frames")
    freeze(teacher)
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)

    pyramid = FeaturePyramid(seed=config.seed)
    disc = PatchDiscriminator()
    disc_t = TemporalDiscriminator()
    opt_g = torch.optim.Adam(block.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(
        list(disc.parameters()) + list(disc_t.parameters()),
        lr=config.disc_lr,
        betas=(config.beta1, config.beta2),
    )

    if config.batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    metrics = []
    for step in range(config.steps):
        picks = [sample_pair(rng, bank, config.alpha) for _ in range(config.batch_size)]
        a_ref = torch.cat([bank.a[v][r : r + 1] for v, r, _ in picks])
        f_ref = torch.cat([bank.f[v][r : r + 1] for v, r, _ in picks])
        o_ref = torch.cat([bank.o[v][r : r + 1] for v, r, _ in picks])
        a_t = torch.cat([bank.a[v][t : t + 1] for v, _, t in picks])
        f_t = torch.cat([bank.f[v][t : t + 1] for v, _, t in picks])
        o_t = torch.cat([bank.o[v][t : t + 1] for v, _, t in picks])

        f_hat, f_star = block(f_ref, a_ref, a_t, return_aligned=True)
        o_hat = teacher.decode_from(f_hat, bank.l_d)

        # The alignment target lives in the block's reduced-channel space;
        # detached so the reduction cannot shrink its own target.
        f_t_reduced = block.reduce(f_t, "f").detach()
        l_feat, l_out = loss_distill(f_t, f_hat, o_t, o_hat)
        components = {
            "align": loss_align(f_t_reduced, f_star),
            "feat": l_feat,
            "out": l_out,
            "perc": loss_perceptual(o_t, o_hat, pyramid),
        }
        g_adv, g_adv_t = loss_gan(disc, disc_t, o_ref, o_t, o_hat, "generator", config.gan_mode)
        components["gan"] = g_adv
        components["t_gan"] = g_adv_t
        loss = total_loss(components, config.weights)

        opt_g.zero_grad()
        loss.backward()
        opt_g.step()

        d_adv, d_adv_t = loss_gan(
            disc, disc_t, o_ref, o_t, o_hat.detach(), "discriminator", config.gan_mode
        )
        opt_d.zero_grad()
        (d_adv + d_adv_t).backward()
        opt_d.step()

        metrics.append(
            {
                "step": step,
                "align": components["align"].item(),
                "feat": components["feat"].item(),
                "out": components["out"].item(),
                "perc": components["perc"].item(),
                "gan": components["gan"].item(),
                "t_gan": components["t_gan"].item(),
                "d": d_adv.item(),
                "d_t": d_adv_t.item(),
                "total": loss.item(),
            }
        )

    if log_path is not None:
        _write_csv(log_path, metrics)
    return metrics


def evaluate_shortcut(
    teacher: ToyTranslator,
    bank: FeatureBank,
    block: ShortcutBlock,
    alpha: int,
    max_pairs_per_video: int = 24,
) -> dict:
    """Held-out feature error of the block vs the copy-reference baseline.

    Walks every video with a deterministic grid of (reference, current)
    pairs covering all gaps in [1, alpha].
    """
    l1_block, l1_copy, count = 0.0, 0.0, 0
    with torch.no_grad():
        for v in range(bank.num_videos):
            n = bank.frames_in(v)
            pairs = [
                (r, r + dt)
                for dt in range(1, alpha + 1)
                for r in range(0, max(n - dt, 0), max(1, (n * alpha) // max_pairs_per_video))
            ]
            for r, t in pairs:
                f_hat = block(bank.f[v][r : r + 1], bank.a[v][r : r + 1], bank.a[v][t : t + 1])
                f_t = bank.f[v][t : t + 1]
                l1_block += (f_hat - f_t).abs().mean().item()
                l1_copy += (bank.f[v][r : r + 1] - f_t).abs().mean().item()
                count += 1
    if count == 0:
        raise ValueError("no evaluation pairs available")
    return {
        "l1_shortcut": l1_block / count,
        "l1_copy_reference": l1_copy / count,
        "pairs": count,
    }


def moving_average(values: list[float], window: int) -> tuple[float, float]:
    """Mean of the first and last ``window`` entries."""
    if not values:
        raise ValueError("empty series")
    window = min(window, len(values))
    head = sum(values[:window]) / window
    tail = sum(values[-window:]) / window
    return head, tail


def _write_csv(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
