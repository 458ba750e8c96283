"""Offset overlays and blending-mask heatmaps.

Overlays draw, over a dimmed grayscale copy of the frame, green dots at a
stride-subsampled set of output points and red dots at each output point's
kernel sampling positions after applying the predicted offsets. Offsets are
scaled by the ratio of frame resolution to feature-map resolution; the
coarse field (predicted at half feature resolution) is first expanded to the
feature grid with its values doubled. Two variants are produced: coarse
offsets alone, and coarse plus per-kernel-point offsets.

Heatmaps average the blending mask over the kernel axis and render it as an
8-bit grayscale image, brighter where the current frame dominates.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GREEN = np.array([0, 255, 0], dtype=np.uint8)
RED = np.array([255, 0, 0], dtype=np.uint8)


def _as_numpy(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def _backdrop(frame: np.ndarray, h: int, w: int) -> np.ndarray:
    """Dimmed grayscale canvas from a [-1, 1] frame."""
    gray = (frame.mean(axis=0) + 1.0) * 0.5 * 180.0
    img = np.repeat(gray[:, :, None], 3, axis=2)
    return np.clip(img, 0, 255).astype(np.uint8)


def _put(img: np.ndarray, r: float, c: float, color: np.ndarray) -> None:
    ri, ci = int(round(r)), int(round(c))
    if 0 <= ri < img.shape[0] and 0 <= ci < img.shape[1]:
        img[ri, ci] = color


def _kernel_taps(n_points: int) -> np.ndarray:
    k = int(round(n_points ** 0.5))
    if k * k != n_points:
        raise ValueError(f"n_points={n_points} is not a square kernel")
    half = (k - 1) / 2
    taps = [(u - half, v - half) for u in range(k) for v in range(k)]
    return np.array(taps, dtype=np.float64)


def offset_overlay(
    frame,
    global_offsets,
    local_offsets,
    stride: int = 8,
) -> dict[str, np.ndarray]:
    """Render overlay images; returns {'global': HxWx3, 'global_plus_local': HxWx3}.

    Args:
        frame: source frame [3, H, W] in [-1, 1].
        global_offsets: [2, h2, w2] or [1, 2, h2, w2] coarse field at half
            feature resolution, in half-resolution pixel units.
        local_offsets: [2*Np, h, w] or [1, 2*Np, h, w] field on the feature grid.
        stride: subsampling of output points, in feature-grid units.
    """
    frame = _as_numpy(frame)
    goff = _as_numpy(global_offsets)
    loff = _as_numpy(local_offsets)
    if goff.ndim == 4:
        goff = goff[0]
    if loff.ndim == 4:
        loff = loff[0]
    if stride < 1:
        raise ValueError("stride must be >= 1")

    fh, fw = frame.shape[1], frame.shape[2]
    n_points = loff.shape[0] // 2
    h, w = loff.shape[1], loff.shape[2]
    scale = fh / h
    taps = _kernel_taps(n_points)

    # Coarse offsets live on the half-resolution grid: index with the halved
    # position and double the displacement to express it in feature pixels.
    def coarse_at(i: int, j: int) -> tuple[float, float]:
        hi = min(i // 2, goff.shape[1] - 1)
        hj = min(j // 2, goff.shape[2] - 1)
        return 2.0 * goff[0, hi, hj], 2.0 * goff[1, hi, hj]

    images = {
        "global": _backdrop(frame, fh, fw),
        "global_plus_local": _backdrop(frame, fh, fw),
    }
    for i in range(0, h, stride):
        for j in range(0, w, stride):
            gy, gx = coarse_at(i, j)
            for variant, img in images.items():
                for k in range(n_points):
                    dy, dx = taps[k]
                    oy, ox = gy, gx
                    if variant == "global_plus_local":
                        oy = gy + loff[2 * k, i, j]
                        ox = gx + loff[2 * k + 1, i, j]
                    _put(img, (i + dy + oy) * scale, (j + dx + ox) * scale, RED)
                _put(img, i * scale, j * scale, GREEN)
    return images


def export_offset_overlay(
    frame, global_offsets, local_offsets, stride: int, out_prefix: str | Path
) -> list[Path]:
    """Save both overlay variants as PNG; returns the written paths."""
    images = offset_overlay(frame, global_offsets, local_offsets, stride)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for variant, img in images.items():
        path = out_prefix.parent / f"{out_prefix.name}_{variant}.png"
        Image.fromarray(img, mode="RGB").save(path)
        paths.append(path)
    return paths


def mask_heatmap(mask) -> np.ndarray:
    """Kernel-averaged blending mask as an 8-bit grayscale image."""
    m = _as_numpy(mask)
    if m.ndim == 4:
        m = m[0]
    mean = m.mean(axis=0)
    return np.clip(np.round(mean * 255.0), 0, 255).astype(np.uint8)


def export_mask_heatmap(mask, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask_heatmap(mask), mode="L").save(out_path)
    return out_path
