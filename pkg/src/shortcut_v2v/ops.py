"""Sampling and deformable-convolution primitives.

All operations are pure functions of their tensor inputs, differentiable
end-to-end through autograd, and dtype-agnostic (tests run them in float64,
the rest of the package in float32).

Conventions, fixed package-wide:

* Feature maps are ``[B, C, H, W]`` tensors.
* Sampling coordinates are ``(row, col)`` in pixel units with the origin at
  the top-left pixel center, so integer coordinates hit stored values.
* Points outside ``[0, H-1] x [0, W-1]`` contribute zero (zero padding),
  matching a zero-padded convolution.
* Offset fields come in two layouts: ``global`` with shape ``[B, 2, H, W]``
  (one ``(dy, dx)`` broadcast to every kernel point) and ``local`` with shape
  ``[B, 2*Np, H, W]`` (``Np`` consecutive ``(dy, dx)`` pairs, one per kernel
  point). Offsets are displacements in feature-grid pixels.
* Blending/modulation masks have shape ``[B, Np, H, W]`` with entries in
  ``[0, 1]``, shared across input channels.

Only stride 1, dilation 1, odd kernel sizes, and same-size zero padding are
supported; that is all the surrounding architecture uses.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

__all__ = [
    "bilinear_sample",
    "deformable_conv",
    "global_align",
    "adabd",
    "halve_resolution",
    "resize_to",
]


def bilinear_sample(x: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``x`` at fractional positions with bilinear interpolation.

    Args:
        x: input features ``[B, C, H, W]``.
        coords: sampling positions ``[B, 2, Hs, Ws]``; ``coords[:, 0]`` are
            rows, ``coords[:, 1]`` are columns, in pixel units.

    Returns:
        Sampled values ``[B, C, Hs, Ws]``. Each value interpolates the four
        surrounding grid points; grid points outside the input contribute 0.
    """
    if x.dim() != 4 or coords.dim() != 4 or coords.shape[1] != 2:
        raise ValueError(
            f"expected x [B,C,H,W] and coords [B,2,Hs,Ws], got {tuple(x.shape)} "
            f"and {tuple(coords.shape)}"
        )
    if x.shape[0] != coords.shape[0]:
        raise ValueError(
            f"batch mismatch: x has {x.shape[0]}, coords has {coords.shape[0]}"
        )

    b, c, h, w = x.shape
    hs, ws = coords.shape[2], coords.shape[3]
    rows = coords[:, 0].reshape(b, -1)
    cols = coords[:, 1].reshape(b, -1)

    r0 = torch.floor(rows)
    c0 = torch.floor(cols)
    fr = rows - r0
    fc = cols - c0

    flat = x.reshape(b, c, h * w)
    out = torch.zeros(b, c, hs * ws, dtype=x.dtype, device=x.device)
    for dr, dc, wt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        ri = r0 + dr
        ci = c0 + dc
        inside = (ri >= 0) & (ri <= h - 1) & (ci >= 0) & (ci <= w - 1)
        idx = (ri.clamp(0, h - 1) * w + ci.clamp(0, w - 1)).long()
        vals = flat.gather(2, idx.unsqueeze(1).expand(b, c, -1))
        out = out + vals * (wt * inside.to(x.dtype)).unsqueeze(1)
    return out.reshape(b, c, hs, ws)


def _check_kernel(w: torch.Tensor) -> tuple[int, int, int, int, int]:
    if w.dim() != 4:
        raise ValueError(f"kernel must be [C_out, C_in, kh, kw], got {tuple(w.shape)}")
    c_out, c_in, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"only odd kernel sizes are supported, got {kh}x{kw}")
    return c_out, c_in, kh, kw, kh * kw


def _kernel_taps(kh: int, kw: int, dtype, device) -> torch.Tensor:
    """Relative sampling positions of an odd kernel, ``[Np, 2]`` as (dy, dx)."""
    dy = torch.arange(kh, dtype=dtype, device=device) - (kh - 1) // 2
    dx = torch.arange(kw, dtype=dtype, device=device) - (kw - 1) // 2
    gy, gx = torch.meshgrid(dy, dx, indexing="ij")
    return torch.stack([gy.reshape(-1), gx.reshape(-1)], dim=1)


def _sampling_coords(
    offsets: torch.Tensor, n_points: int, kh: int, kw: int
) -> torch.Tensor:
    """Absolute sampling positions ``[B, Np, 2, H, W]`` for every kernel point.

    ``offsets`` is either a global field ``[B, 2, H, W]`` broadcast to all
    kernel points or a local field ``[B, 2*Np, H, W]``.
    """
    b = offsets.shape[0]
    h, w = offsets.shape[2], offsets.shape[3]
    if offsets.shape[1] == 2:
        off = offsets.unsqueeze(1).expand(b, n_points, 2, h, w)
    elif offsets.shape[1] == 2 * n_points:
        off = offsets.reshape(b, n_points, 2, h, w)
    else:
        raise ValueError(
            f"offset field has {offsets.shape[1]} channels; expected 2 (global) "
            f"or {2 * n_points} (local) for a {kh}x{kw} kernel"
        )

    ii = torch.arange(h, dtype=offsets.dtype, device=offsets.device)
    jj = torch.arange(w, dtype=offsets.dtype, device=offsets.device)
    gy, gx = torch.meshgrid(ii, jj, indexing="ij")
    base = torch.stack([gy, gx], dim=0)  # [2, H, W]
    taps = _kernel_taps(kh, kw, offsets.dtype, offsets.device)  # [Np, 2]
    return base + taps.reshape(1, n_points, 2, 1, 1) + off


def _gather_samples(x: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``x`` at ``coords [B, Np, 2, H, W]`` -> ``[B, Np, C, H, W]``."""
    b, n_points, _, h, w = coords.shape
    stacked = coords.permute(0, 2, 1, 3, 4).reshape(b, 2, n_points * h, w)
    samples = bilinear_sample(x, stacked)
    c = x.shape[1]
    return samples.reshape(b, c, n_points, h, w).permute(0, 2, 1, 3, 4)


def deformable_conv(
    w: torch.Tensor,
    x: torch.Tensor,
    offsets: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Modulated deformable convolution.

    Each output point accumulates, over the kernel points, the kernel weight
    times the input sampled at the offset-displaced position times the
    modulation scalar. With zero offsets and an all-ones mask this reduces to
    a standard zero-padded convolution.

    Args:
        w: kernel weights ``[C_out, C_in, kh, kw]``.
        x: input features ``[B, C_in, H, W]``.
        offsets: global ``[B, 2, H, W]`` or local ``[B, 2*Np, H, W]`` field.
        mask: modulation scalars ``[B, Np, H, W]``; pass all-ones for the
            unmodulated case.

    Returns:
        Output features ``[B, C_out, H, W]``.
    """
    c_out, c_in, kh, kw, n_points = _check_kernel(w)
    if x.dim() != 4 or x.shape[1] != c_in:
        raise ValueError(
            f"input shape {tuple(x.shape)} does not match kernel C_in={c_in}"
        )
    if mask.dim() != 4 or mask.shape[1] != n_points:
        raise ValueError(
            f"mask has {mask.shape[1]} channels; kernel {kh}x{kw} needs {n_points}"
        )
    if offsets.shape[0] != x.shape[0] or mask.shape[0] != x.shape[0]:
        raise ValueError("batch size mismatch between x, offsets, and mask")
    if offsets.shape[2:] != x.shape[2:] or mask.shape[2:] != x.shape[2:]:
        raise ValueError(
            f"offsets {tuple(offsets.shape)} / mask {tuple(mask.shape)} spatial "
            f"size must match input {tuple(x.shape)} (stride-1, same-size output)"
        )

    coords = _sampling_coords(offsets, n_points, kh, kw)
    samples = _gather_samples(x, coords)  # [B, Np, C_in, H, W]
    modulated = samples * mask.unsqueeze(2)
    return torch.einsum("ock,bkchw->bohw", w.reshape(c_out, c_in, n_points), modulated)


def halve_resolution(x: torch.Tensor) -> torch.Tensor:
    """Bilinear downsampling by a factor of 2, ceiling division on odd sizes."""
    h, w = x.shape[2], x.shape[3]
    return F.interpolate(
        x, size=((h + 1) // 2, (w + 1) // 2), mode="bilinear", align_corners=False
    )


def resize_to(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resampling to an exact spatial size."""
    if x.shape[2:] == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def global_align(
    w_g: torch.Tensor, f: torch.Tensor, global_offsets: torch.Tensor
) -> torch.Tensor:
    """Coarse alignment: deform at half resolution, restore the original size.

    ``f`` is downsampled by 2, deformed with one shared ``(dy, dx)`` offset
    per kernel (no modulation), and upsampled back, so the output spatial
    size equals the input's.

    Args:
        w_g: deformable kernel ``[C_out, C_in, kh, kw]``.
        f: features to align ``[B, C_in, H, W]``.
        global_offsets: ``[B, 2, ceil(H/2), ceil(W/2)]`` field in
            half-resolution pixel units.
    """
    f_half = halve_resolution(f)
    if global_offsets.shape[1] != 2:
        raise ValueError(
            f"global offsets need 2 channels, got {global_offsets.shape[1]}"
        )
    if global_offsets.shape[2:] != f_half.shape[2:]:
        raise ValueError(
            f"global offsets spatial size {tuple(global_offsets.shape[2:])} must "
            f"equal the half-resolution size {tuple(f_half.shape[2:])}"
        )
    ones = torch.ones(
        f_half.shape[0], w_g.shape[2] * w_g.shape[3], *f_half.shape[2:],
        dtype=f.dtype, device=f.device,
    )
    deformed = deformable_conv(w_g, f_half, global_offsets, ones)
    return resize_to(deformed, (f.shape[2], f.shape[3]))


def adabd(
    w_l: torch.Tensor,
    a_t: torch.Tensor,
    f_ref_coarse: torch.Tensor,
    local_offsets: torch.Tensor,
    blend_mask: torch.Tensor,
) -> torch.Tensor:
    """Fused adaptive blending and deformation.

    One shared kernel is applied to a per-kernel-point mixture: the current
    features sampled at the rigid grid positions, weighted by the blending
    mask, plus the coarsely aligned reference features sampled at
    offset-displaced positions, weighted by its complement. Equivalent to the
    sum of a standard (mask-modulated) convolution of ``a_t`` and a
    deformable convolution of ``f_ref_coarse`` with the complementary mask;
    the fused form applies the kernel once over blended samples.

    Args:
        w_l: shared kernel ``[C_out, C, kh, kw]``.
        a_t: current features ``[B, C, H, W]``.
        f_ref_coarse: coarsely aligned reference features, same shape.
        local_offsets: ``[B, 2*Np, H, W]`` per-kernel-point displacements
            applied to the reference branch only.
        blend_mask: ``[B, Np, H, W]`` in ``[0, 1]``; 1 selects the current
            branch, 0 the reference branch.
    """
    c_out, c_in, kh, kw, n_points = _check_kernel(w_l)
    if a_t.shape != f_ref_coarse.shape:
        raise ValueError(
            f"current/reference feature shapes differ: {tuple(a_t.shape)} vs "
            f"{tuple(f_ref_coarse.shape)}"
        )
    if a_t.shape[1] != c_in:
        raise ValueError(
            f"input shape {tuple(a_t.shape)} does not match kernel C_in={c_in}"
        )
    if blend_mask.shape[1] != n_points or blend_mask.shape[2:] != a_t.shape[2:]:
        raise ValueError(
            f"blend mask {tuple(blend_mask.shape)} does not match kernel "
            f"{kh}x{kw} and spatial size {tuple(a_t.shape[2:])}"
        )

    # Rigid branch via im2col: integer positions need no interpolation.
    pad = ((kh - 1) // 2, (kw - 1) // 2)
    b, c, h, w = a_t.shape
    rigid = F.unfold(a_t, kernel_size=(kh, kw), padding=pad)
    rigid = rigid.reshape(b, c, n_points, h, w).transpose(1, 2)  # [B, Np, C, H, W]

    coords = _sampling_coords(local_offsets, n_points, kh, kw)
    deformed = _gather_samples(f_ref_coarse, coords)

    m = blend_mask.unsqueeze(2)
    blended = rigid * m + deformed * (1 - m)
    return torch.einsum("ock,bkchw->bohw", w_l.reshape(c_out, c_in, n_points), blended)
