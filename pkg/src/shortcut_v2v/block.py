"""The shortcut block: estimates current decoder-layer features from cached
reference features and current encoder-layer features.

Pipeline: 1x1 channel reduction of all inputs, a global offset generator fed
with the half-resolution encoder features of both frames, coarse alignment of
the reduced reference features, a local offset/mask generator fed with the
coarsely aligned reference and the current encoder features, fused adaptive
blending and deformation, and a 1x1 channel reconstruction back to the
decoder-layer width.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import ops
from .ckpt import load_checkpoint, save_checkpoint

CHANNEL_VARIANTS = ("full", "half", "quarter")
_VARIANT_DIVISOR = {"full": 2, "half": 4, "quarter": 8}


@dataclass(frozen=True)
class ShortcutConfig:
    """Static shape configuration of a shortcut block.

    ``channels_a`` / ``channels_f`` are the encoder- and decoder-layer widths
    of the wrapped generator at the chosen split. ``reduced_channels`` is the
    internal working width; the default is half the decoder width, scaled
    further by ``channel_variant`` (full / half / quarter).
    """

    channels_a: int
    channels_f: int
    reduced_channels: int = 0
    kernel_size: int = 3
    channel_variant: str = "full"

    def __post_init__(self):
        if self.channel_variant not in CHANNEL_VARIANTS:
            raise ValueError(f"unknown channel variant: {self.channel_variant!r}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and positive")
        if self.reduced_channels == 0:
            object.__setattr__(
                self,
                "reduced_channels",
                max(1, self.channels_f // _VARIANT_DIVISOR[self.channel_variant]),
            )
        if self.reduced_channels > min(self.channels_a, self.channels_f):
            raise ValueError("reduced_channels must not exceed the input widths")

    @property
    def n_points(self) -> int:
        return self.kernel_size * self.kernel_size


class ShortcutBlock(nn.Module):
    """Lightweight replacement for a contiguous generator segment.

    Forward contract: ``forward(f_ref, a_ref, a_t)`` returns the estimated
    decoder-layer features with ``f_ref``'s channel count and spatial size.
    At construction the offset heads and the pre-squash mask head are
    zero-initialized, so a fresh block predicts zero global offsets, zero
    local offsets, and a blending mask of exactly 0.5 everywhere.
    """

    def __init__(self, config: ShortcutConfig, mask_override: float | None = None):
        super().__init__()
        self.config = config
        # Ablation hook: when set, the predicted blending mask is replaced by
        # this constant (0 = reference branch only, 1 = current branch only,
        # 0.5 = fixed even blend) and the mask head receives no gradient.
        self.mask_override = mask_override
        c_a, c_f, c_r = config.channels_a, config.channels_f, config.reduced_channels
        k = config.kernel_size
        n_p = config.n_points
        pad = (k - 1) // 2

        self.reduce_a = nn.Conv2d(c_a, c_r, 1, bias=False)
        self.reduce_f = nn.Conv2d(c_f, c_r, 1, bias=False)

        # Global generator: 2 conv layers on the concatenated half-resolution
        # encoder features; the offset head starts at zero.
        self.global_trunk = nn.Conv2d(2 * c_r, c_r, k, padding=pad)
        self.global_head = nn.Conv2d(c_r, 2, k, padding=pad)

        # Local generator: 3 conv layers; the last one emits offsets and the
        # pre-squash mask together and starts at zero so the initial mask is
        # exactly sigmoid(0) = 0.5.
        self.local_trunk1 = nn.Conv2d(2 * c_r, c_r, k, padding=pad)
        self.local_trunk2 = nn.Conv2d(c_r, c_r, k, padding=pad)
        self.local_head = nn.Conv2d(c_r, 3 * n_p, k, padding=pad)

        self.w_global = nn.Parameter(torch.empty(c_r, c_r, k, k))
        self.w_local = nn.Parameter(torch.empty(c_r, c_r, k, k))
        nn.init.kaiming_uniform_(self.w_global, a=5 ** 0.5)
        nn.init.kaiming_uniform_(self.w_local, a=5 ** 0.5)

        self.reconstruct = nn.Conv2d(c_r, c_f, 1, bias=False)

        nn.init.zeros_(self.global_head.weight)
        nn.init.zeros_(self.global_head.bias)
        nn.init.zeros_(self.local_head.weight)
        nn.init.zeros_(self.local_head.bias)

    def reduce(self, x: torch.Tensor, which: str) -> torch.Tensor:
        """1x1 reduction to the working width; separate weights per space."""
        if which == "a":
            if x.shape[1] != self.config.channels_a:
                raise ValueError(
                    f"encoder-space input has {x.shape[1]} channels, "
                    f"expected {self.config.channels_a}"
                )
            return self.reduce_a(x)
        if which == "f":
            if x.shape[1] != self.config.channels_f:
                raise ValueError(
                    f"decoder-space input has {x.shape[1]} channels, "
                    f"expected {self.config.channels_f}"
                )
            return self.reduce_f(x)
        raise ValueError(f"which must be 'a' or 'f', got {which!r}")

    def global_offsets(self, a_ref_red: torch.Tensor, a_t_red: torch.Tensor) -> torch.Tensor:
        """Predict one (dy, dx) per kernel at half resolution."""
        if a_ref_red.shape != a_t_red.shape:
            raise ValueError("reference/current encoder features must match in shape")
        merged = torch.cat(
            [ops.halve_resolution(a_ref_red), ops.halve_resolution(a_t_red)], dim=1
        )
        hidden = F.leaky_relu(self.global_trunk(merged), 0.1)
        return self.global_head(hidden)

    def local_offsets_and_mask(
        self, a_ref_aligned: torch.Tensor, a_t_red: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Predict per-kernel-point offsets and the [0,1] blending mask."""
        if a_ref_aligned.shape != a_t_red.shape:
            raise ValueError("aligned-reference/current features must match in shape")
        n_p = self.config.n_points
        hidden = F.leaky_relu(self.local_trunk1(torch.cat([a_ref_aligned, a_t_red], dim=1)), 0.1)
        hidden = F.leaky_relu(self.local_trunk2(hidden), 0.1)
        out = self.local_head(hidden)
        offsets = out[:, : 2 * n_p]
        mask = torch.sigmoid(out[:, 2 * n_p :])
        return offsets, mask

    def forward(
        self,
        f_ref: torch.Tensor,
        a_ref: torch.Tensor,
        a_t: torch.Tensor,
        return_aligned: bool = False,
        return_internals: bool = False,
    ):
        """Estimate the current decoder-layer features.

        Args:
            f_ref: cached decoder-layer features of the reference frame.
            a_ref: cached encoder-layer features of the reference frame.
            a_t: encoder-layer features of the current frame.
            return_aligned: also return the fully aligned reference features
                (reduced-channel space, no blending) for the alignment loss.
            return_internals: also return a dict with the predicted offset
                fields and blending mask, for inspection and visualization.
        """
        if a_ref.shape != a_t.shape:
            raise ValueError(
                f"a_ref {tuple(a_ref.shape)} and a_t {tuple(a_t.shape)} must match"
            )
        if f_ref.shape[2:] != a_t.shape[2:] or f_ref.shape[0] != a_t.shape[0]:
            raise ValueError(
                f"f_ref {tuple(f_ref.shape)} must match a_t spatially and in batch"
            )

        a_t_red = self.reduce(a_t, "a")
        a_ref_red = self.reduce(a_ref, "a")
        f_ref_red = self.reduce(f_ref, "f")

        goff = self.global_offsets(a_ref_red, a_t_red)
        f_ref_coarse = ops.global_align(self.w_global, f_ref_red, goff)
        a_ref_coarse = ops.global_align(self.w_global, a_ref_red, goff)

        loff, mask = self.local_offsets_and_mask(a_ref_coarse, a_t_red)
        if self.mask_override is not None:
            mask = torch.full_like(mask.detach(), float(self.mask_override))
        fused = ops.adabd(self.w_local, a_t_red, f_ref_coarse, loff, mask)
        f_hat = self.reconstruct(fused)

        extras = []
        if return_aligned:
            ones = torch.ones_like(mask)
            extras.append(ops.deformable_conv(self.w_local, f_ref_coarse, loff, ones))
        if return_internals:
            extras.append(
                {"global_offsets": goff, "local_offsets": loff, "mask": mask}
            )
        if extras:
            return (f_hat, *extras)
        return f_hat

    # -- serialization ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        manifest = {
            "kind": "shortcut_block",
            "channels_a": self.config.channels_a,
            "channels_f": self.config.channels_f,
            "reduced_channels": self.config.reduced_channels,
            "kernel_size": self.config.kernel_size,
            "channel_variant": self.config.channel_variant,
        }
        save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path: str | Path) -> "ShortcutBlock":
        arrays, manifest = load_checkpoint(path)
        if manifest.get("kind") != "shortcut_block":
            raise IOError(f"{path} is not a shortcut-block checkpoint")
        config = ShortcutConfig(
            channels_a=manifest["channels_a"],
            channels_f=manifest["channels_f"],
            reduced_channels=manifest["reduced_channels"],
            kernel_size=manifest["kernel_size"],
            channel_variant=manifest["channel_variant"],
        )
        block = cls(config)
        block.load_state_dict(
            {k: torch.from_numpy(v) for k, v in arrays.items()}
        )
        return block
