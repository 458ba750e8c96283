"""Loss stack for shortcut-block training: alignment, feature/output
distillation, perceptual distance, and frame plus temporal adversarial terms.

The teacher's outputs play the real class in both adversarial games. The
default adversarial form is the non-saturating logistic loss; a least-squares
variant is available behind ``gan_mode``. The perceptual term uses a frozen,
seed-initialized convolutional feature pyramid so no pretrained classifier
is required; it remains a fixed-feature L1 distance over four stages.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

GAN_MODES = ("logistic", "least_squares")


@dataclass(frozen=True)
class LossWeights:
    gan: float = 1.0
    t_gan: float = 1.0
    feat: float = 5.0
    align: float = 5.0
    out: float = 10.0
    perc: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")


def loss_align(f_t: torch.Tensor, f_star_ref: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between teacher features and the aligned reference."""
    if f_t.shape != f_star_ref.shape:
        raise ValueError(
            f"shape mismatch: {tuple(f_t.shape)} vs {tuple(f_star_ref.shape)}"
        )
    return (f_t - f_star_ref).abs().mean()


def loss_distill(
    f_t: torch.Tensor, f_hat: torch.Tensor, o_t: torch.Tensor, o_hat: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Feature-level and output-level mean absolute differences."""
    if f_t.shape != f_hat.shape or o_t.shape != o_hat.shape:
        raise ValueError("teacher/student tensors must match in shape")
    return (f_t - f_hat).abs().mean(), (o_t - o_hat).abs().mean()


class FeaturePyramid(nn.Module):
    """Frozen 4-stage stride-2 convolutional feature extractor."""

    def __init__(self, in_channels: int = 3, seed: int = 0):
        super().__init__()
        widths = (16, 32, 64, 64)
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            stages = []
            prev = in_channels
            for width in widths:
                stages.append(nn.Conv2d(prev, width, 3, stride=2, padding=1))
                prev = width
            self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = F.leaky_relu(stage(x), 0.2)
            feats.append(x)
        return feats


def loss_perceptual(
    o_t: torch.Tensor, o_hat: torch.Tensor, extractor: FeaturePyramid
) -> torch.Tensor:
    """Sum over pyramid stages of mean absolute feature differences."""
    if o_t.shape != o_hat.shape:
        raise ValueError("frames must match in shape")
    total = o_t.new_zeros(())
    for ft, fh in zip(extractor(o_t), extractor(o_hat)):
        total = total + (ft - fh).abs().mean()
    return total


class PatchDiscriminator(nn.Module):
    """3-layer patch discriminator emitting a logit map."""

    def __init__(self, in_channels: int = 3, base_width: int = 32):
        super().__init__()
        w = base_width
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * w, 1, 4, stride=1, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TemporalDiscriminator(nn.Module):
    """Patch discriminator over a (reference, current) frame pair.

    The two frames are stacked on a depth axis and processed by three 3-D
    convolutional layers; the first collapses the depth dimension.
    """

    def __init__(self, in_channels: int = 3, base_width: int = 32):
        super().__init__()
        w = base_width
        self.conv1 = nn.Conv3d(in_channels, w, (2, 4, 4), stride=(1, 2, 2), padding=(0, 1, 1))
        self.conv2 = nn.Conv3d(w, 2 * w, (1, 4, 4), stride=(1, 2, 2), padding=(0, 1, 1))
        self.conv3 = nn.Conv3d(2 * w, 1, (1, 4, 4), stride=1, padding=(0, 1, 1))

    def forward(self, o_ref: torch.Tensor, o_cur: torch.Tensor) -> torch.Tensor:
        x = torch.stack([o_ref, o_cur], dim=2)  # [B, C, 2, H, W]
        x = F.leaky_relu(self.conv1(x), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2)
        return self.conv3(x).squeeze(2)


def _adversarial(logits: torch.Tensor, target_real: bool, mode: str) -> torch.Tensor:
    if mode == "logistic":
        return F.softplus(-logits).mean() if target_real else F.softplus(logits).mean()
    if mode == "least_squares":
        target = 1.0 if target_real else 0.0
        return ((logits - target) ** 2).mean()
    raise ValueError(f"unknown gan mode {mode!r}; expected one of {GAN_MODES}")


def loss_gan(
    d: PatchDiscriminator,
    d_t: TemporalDiscriminator,
    o_ref: torch.Tensor,
    o_t: torch.Tensor,
    o_hat: torch.Tensor,
    role: str,
    mode: str = "logistic",
) -> tuple[torch.Tensor, torch.Tensor]:
    """Frame and temporal adversarial losses for one role.

    ``generator`` scores the student output as if it should be real;
    ``discriminator`` scores teacher outputs as real and student outputs as
    fake. The caller detaches ``o_hat`` for discriminator updates.
    """
    if role == "generator":
        l_frame = _adversarial(d(o_hat), True, mode)
        l_temporal = _adversarial(d_t(o_ref, o_hat), True, mode)
        return l_frame, l_temporal
    if role == "discriminator":
        l_frame = _adversarial(d(o_t), True, mode) + _adversarial(d(o_hat), False, mode)
        l_temporal = _adversarial(d_t(o_ref, o_t), True, mode) + _adversarial(
            d_t(o_ref, o_hat), False, mode
        )
        return l_frame, l_temporal
    raise ValueError(f"role must be 'generator' or 'discriminator', got {role!r}")


def total_loss(components: dict, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the six loss components.

    ``components`` must provide align, feat, out, perc, gan, and t_gan.
    """
    for f in fields(weights):
        if getattr(weights, f.name) < 0:
            raise ValueError(f"loss weight {f.name} must be non-negative")
    return (
        weights.align * components["align"]
        + weights.feat * components["feat"]
        + weights.out * components["out"]
        + weights.perc * components["perc"]
        + weights.gan * components["gan"]
        + weights.t_gan * components["t_gan"]
    )
