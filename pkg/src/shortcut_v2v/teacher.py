"""Toy video-to-video translation generator with named split points.

The generator follows the classic residual encoder-decoder layout: a stem
convolution, two stride-2 downsampling stages, six residual blocks, two
stride-2 transposed-convolution upsampling stages, and a tanh-bounded output
head. The model is frame-independent; video behavior comes entirely from the
surrounding scheduler.

Split points are named after the layer whose output they expose. Encoder- and
decoder-side features at a split always share the same spatial size, so the
shortcut block can consume them directly. Dependence levels:

* ``low``    - split at ``stem`` / ``up2``: the block replaces everything
               between them (both downsampling stages, the residual stack,
               and both upsampling stages).
* ``medium`` - split at ``down1`` / ``up1`` (default).
* ``high``   - split at ``down2`` / ``res6``: only the residual stack is
               replaced.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .ckpt import load_checkpoint, save_checkpoint

DEPENDENCE_LEVELS = ("low", "medium", "high")

# dependence level -> (encoder split l_e, decoder split l_d)
SPLIT_POINTS = {
    "low": ("stem", "up2"),
    "medium": ("down1", "up1"),
    "high": ("down2", "res6"),
}


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


def _conv_in_relu(c_in, c_out, stride=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(),
    )


def _deconv_in_relu(c_in, c_out):
    return nn.Sequential(
        nn.ConvTranspose2d(c_in, c_out, 3, stride=2, padding=1, output_padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(),
    )


class ToyTranslator(nn.Module):
    """Frame-to-frame translator exposing named intermediate activations."""

    def __init__(self, base_width: int = 32, in_channels: int = 3, out_channels: int = 3):
        super().__init__()
        w = base_width
        self.base_width = w
        self.in_channels = in_channels
        self.out_channels = out_channels
        stages: list[tuple[str, nn.Module]] = [
            ("stem", _conv_in_relu(in_channels, w)),
            ("down1", _conv_in_relu(w, 2 * w, stride=2)),
            ("down2", _conv_in_relu(2 * w, 4 * w, stride=2)),
        ]
        for i in range(1, 7):
            stages.append((f"res{i}", ResBlock(4 * w)))
        stages += [
            ("up1", _deconv_in_relu(4 * w, 2 * w)),
            ("up2", _deconv_in_relu(2 * w, w)),
            ("head", nn.Sequential(nn.Conv2d(w, out_channels, 3, padding=1), nn.Tanh())),
        ]
        self.layer_names = [name for name, _ in stages]
        self.stages = nn.ModuleDict(dict(stages))

    def _index(self, name: str) -> int:
        try:
            return self.layer_names.index(name)
        except ValueError:
            raise ValueError(
                f"unknown layer {name!r}; expected one of {self.layer_names}"
            ) from None

    def _run(self, x: torch.Tensor, start: int, stop: int) -> torch.Tensor:
        """Apply stages [start, stop) in order."""
        for name in self.layer_names[start:stop]:
            x = self.stages[name](x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x, 0, len(self.layer_names))

    def encode_to(self, x: torch.Tensor, l_e: str) -> torch.Tensor:
        """Activations at the end of layer ``l_e`` for an input frame."""
        return self._run(x, 0, self._index(l_e) + 1)

    def middle_to(self, a: torch.Tensor, l_e: str, l_d: str) -> torch.Tensor:
        """The segment the shortcut block replaces: after ``l_e`` through ``l_d``."""
        i, j = self._index(l_e), self._index(l_d)
        if j <= i:
            raise ValueError(f"decoder split {l_d!r} must come after encoder split {l_e!r}")
        expected = self.channels_at(l_e)
        if a.shape[1] != expected:
            raise ValueError(f"features have {a.shape[1]} channels, layer {l_e!r} outputs {expected}")
        return self._run(a, i + 1, j + 1)

    def decode_from(self, f: torch.Tensor, l_d: str) -> torch.Tensor:
        """Remaining layers after ``l_d``; output is a tanh-bounded frame."""
        expected = self.channels_at(l_d)
        if f.shape[1] != expected:
            raise ValueError(f"features have {f.shape[1]} channels, layer {l_d!r} outputs {expected}")
        return self._run(f, self._index(l_d) + 1, len(self.layer_names))

    def channels_at(self, name: str) -> int:
        self._index(name)
        w = self.base_width
        if name == "stem" or name == "up2":
            return w
        if name in ("down1", "up1"):
            return 2 * w
        if name == "head":
            return self.out_channels
        return 4 * w  # down2 and the residual stack

    def spatial_factor(self, name: str) -> int:
        """Spatial downsampling factor of the named layer's output."""
        self._index(name)
        if name in ("stem", "up2", "head"):
            return 1
        if name in ("down1", "up1"):
            return 2
        return 4

    def parameter_checksum(self) -> str:
        """SHA-256 over all parameters; used to assert teacher immutability."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().astype("<f4").tobytes())
        return digest.hexdigest()

    # -- serialization ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        manifest = {
            "kind": "teacher",
            "base_width": self.base_width,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }
        save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path: str | Path) -> "ToyTranslator":
        arrays, manifest = load_checkpoint(path)
        if manifest.get("kind") != "teacher":
            raise IOError(f"{path} is not a teacher checkpoint")
        model = cls(
            base_width=manifest["base_width"],
            in_channels=manifest["in_channels"],
            out_channels=manifest["out_channels"],
        )
        model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
        model.eval()
        return model


def split_for(level: str) -> tuple[str, str]:
    """Map a dependence level to its (encoder, decoder) split names."""
    if level not in SPLIT_POINTS:
        raise ValueError(f"unknown dependence level {level!r}; expected one of {DEPENDENCE_LEVELS}")
    return SPLIT_POINTS[level]
