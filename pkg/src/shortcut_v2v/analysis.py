"""Temporal-redundancy statistics and compute/parameter accounting.

The multiply-accumulate counter works on explicit layer descriptions (lists
of dicts) so costs stay auditable. Convolutions count
``C_out * C_in * kh * kw`` per output position; transposed convolutions count
per input position. Deformable layers are described as a convolution entry
plus a ``deform_sampling`` entry: bilinear sampling is charged 4
multiply-adds per sampled point per channel, and mask blending 2 per sample.
Offset/mask generator convolutions and sampling/blend arithmetic are flagged
``overhead`` so totals are available both including and excluding them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .block import ShortcutBlock
from .teacher import ToyTranslator, split_for

# -- temporal redundancy ------------------------------------------------------


def pearson_cc(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation coefficient over flattened arrays."""
    xf = np.asarray(x, dtype=np.float64).ravel()
    yf = np.asarray(y, dtype=np.float64).ravel()
    if xf.shape != yf.shape:
        raise ValueError("correlated arrays must have the same size")
    xc = xf - xf.mean()
    yc = yf - yf.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise ValueError("correlation undefined for constant input")
    return float((xc * yc).sum() / denom)


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance normalization of one feature map."""
    xf = np.asarray(x, dtype=np.float64)
    std = xf.std()
    if std == 0.0:
        raise ValueError("cannot standardize a constant feature map")
    return (xf - xf.mean()) / std


def redundancy_stats(feature_pairs) -> dict:
    """Correlation and normalized RMSE over feature pairs from one layer.

    Constant (zero-variance) features make both statistics undefined; such
    pairs are skipped with a warning and counted in ``skipped``.
    """
    pairs = list(feature_pairs)
    if len(pairs) < 2:
        raise ValueError("need at least 2 feature pairs")
    ccs, rmses, skipped = [], [], 0
    for a, b in pairs:
        try:
            za, zb = standardize(a), standardize(b)
            ccs.append(pearson_cc(a, b))
        except ValueError:
            skipped += 1
            continue
        rmses.append(float(np.sqrt(np.mean((za - zb) ** 2))))
    if skipped:
        warnings.warn(f"skipped {skipped} constant feature pair(s)")
    if not ccs:
        raise ValueError("all feature pairs were constant")
    return {
        "cc": float(np.mean(ccs)),
        "norm_rmse": float(np.mean(rmses)),
        "pair_count": len(ccs),
        "skipped": skipped,
    }


DEFAULT_REDUNDANCY_LAYERS = ("down2", "res3", "res6", "up1", "up2")


def extract_layer_features(
    teacher: ToyTranslator, frames: torch.Tensor, layer: str
) -> list[np.ndarray]:
    """Per-frame activations at a named teacher layer, as numpy arrays."""
    feats = []
    with torch.no_grad():
        for t in range(frames.shape[0]):
            a = teacher.encode_to(frames[t : t + 1], layer)
            feats.append(a.squeeze(0).numpy())
    return feats


def layer_redundancy_report(
    teacher: ToyTranslator,
    videos: list[torch.Tensor],
    layers=DEFAULT_REDUNDANCY_LAYERS,
    random_seed: int = 0,
) -> dict:
    """Adjacent-frame vs random-pair redundancy per teacher layer.

    Adjacent pairs are (t, t+1) within each video; random pairs re-pair the
    same frames after a seeded shuffle across the whole corpus, rejecting
    pairings that happen to be adjacent in a source video.
    """
    report = {"layers": {}, "num_videos": len(videos)}
    rng = np.random.default_rng(random_seed)
    for layer in layers:
        per_video = [extract_layer_features(teacher, v, layer) for v in videos]
        flat = [(vi, t) for vi, fs in enumerate(per_video) for t in range(len(fs))]

        adjacent = [
            (fs[t], fs[t + 1]) for fs in per_video for t in range(len(fs) - 1)
        ]

        order = rng.permutation(len(flat))
        random_pairs = []
        for i in range(0, len(order) - 1, 2):
            (va, ta), (vb, tb) = flat[order[i]], flat[order[i + 1]]
            if va == vb and abs(ta - tb) <= 1:
                continue
            random_pairs.append((per_video[va][ta], per_video[vb][tb]))

        adj = redundancy_stats(adjacent)
        rnd = redundancy_stats(random_pairs)
        report["layers"][layer] = {
            "adjacent": adj,
            "random": rnd,
            "cc_margin": adj["cc"] - rnd["cc"],
        }
    return report


# -- MACs / parameter counting ------------------------------------------------


@dataclass
class _Shape:
    c: int
    h: int
    w: int


def _conv_out(h, w, kernel, stride, padding):
    kh, kw = kernel
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _walk_layer(layer: dict, s: _Shape) -> tuple[int, int, _Shape]:
    """Returns (macs, params, output shape) of one described layer.

    Entries with ``shared_params`` reuse weights counted by an earlier entry
    (the arithmetic repeats, the storage does not).
    """
    kind = layer["kind"]
    if kind == "conv":
        if layer["in_ch"] != s.c:
            raise ValueError(
                f"layer {layer.get('name')}: expects {layer['in_ch']} channels, got {s.c}"
            )
        kh, kw = layer["kernel"]
        oh, ow = _conv_out(s.h, s.w, layer["kernel"], layer.get("stride", 1), layer.get("padding", 0))
        macs = layer["out_ch"] * s.c * kh * kw * oh * ow
        params = layer["out_ch"] * s.c * kh * kw + (layer["out_ch"] if layer.get("bias", True) else 0)
        if layer.get("shared_params", False):
            params = 0
        return macs, params, _Shape(layer["out_ch"], oh, ow)
    if kind == "conv_transpose":
        if layer["in_ch"] != s.c:
            raise ValueError(
                f"layer {layer.get('name')}: expects {layer['in_ch']} channels, got {s.c}"
            )
        kh, kw = layer["kernel"]
        stride = layer.get("stride", 1)
        padding = layer.get("padding", 0)
        op = layer.get("output_padding", 0)
        oh = (s.h - 1) * stride - 2 * padding + kh + op
        ow = (s.w - 1) * stride - 2 * padding + kw + op
        macs = s.c * layer["out_ch"] * kh * kw * s.h * s.w
        params = layer["out_ch"] * s.c * kh * kw + (layer["out_ch"] if layer.get("bias", True) else 0)
        if layer.get("shared_params", False):
            params = 0
        return macs, params, _Shape(layer["out_ch"], oh, ow)
    if kind == "deform_sampling":
        macs = 4 * layer["n_points"] * s.c * s.h * s.w
        return macs, 0, s
    if kind == "blend":
        macs = 2 * layer["n_points"] * s.c * s.h * s.w
        return macs, 0, s
    if kind == "resize":
        oh, ow = layer["size"]
        macs = 4 * s.c * oh * ow
        return macs, 0, _Shape(s.c, oh, ow)
    if kind == "norm":
        return 0, 2 * s.c, s
    if kind == "act":
        return 0, 0, s
    if kind == "set_channels":
        # Bookkeeping for concatenations and branch switches.
        return 0, 0, _Shape(layer["channels"], s.h, s.w)
    raise ValueError(f"unknown layer kind {kind!r} in {layer.get('name')}")


def analyze_network(layers: list[dict], input_shape: tuple[int, int, int]) -> dict:
    """Walk a layer description; returns totals and a per-layer breakdown."""
    s = _Shape(*input_shape)
    total = core = overhead = params = 0
    rows = []
    for layer in layers:
        macs, p, s = _walk_layer(layer, s)
        total += macs
        params += p
        if layer.get("overhead", False):
            overhead += macs
        else:
            core += macs
        rows.append({"name": layer.get("name", layer["kind"]), "macs": macs, "params": p})
    return {
        "macs_total": total,
        "macs_core": core,
        "macs_overhead": overhead,
        "params": params,
        "per_layer": rows,
        "output_shape": (s.c, s.h, s.w),
    }


def count_macs(layers: list[dict], input_shape: tuple[int, int, int]) -> int:
    """Total multiply-accumulates of a described network on the given input."""
    return analyze_network(layers, input_shape)["macs_total"]


def count_params(layers: list[dict], input_shape: tuple[int, int, int]) -> int:
    return analyze_network(layers, input_shape)["params"]


# -- description builders -----------------------------------------------------


def _describe_module(name: str, mod: nn.Module) -> list[dict]:
    if isinstance(mod, nn.Conv2d):
        return [{
            "name": name, "kind": "conv",
            "in_ch": mod.in_channels, "out_ch": mod.out_channels,
            "kernel": list(mod.kernel_size), "stride": mod.stride[0],
            "padding": mod.padding[0], "bias": mod.bias is not None,
        }]
    if isinstance(mod, nn.ConvTranspose2d):
        return [{
            "name": name, "kind": "conv_transpose",
            "in_ch": mod.in_channels, "out_ch": mod.out_channels,
            "kernel": list(mod.kernel_size), "stride": mod.stride[0],
            "padding": mod.padding[0], "output_padding": mod.output_padding[0],
            "bias": mod.bias is not None,
        }]
    if isinstance(mod, nn.InstanceNorm2d):
        return [{"name": name, "kind": "norm"}]
    if isinstance(mod, (nn.ReLU, nn.Tanh, nn.LeakyReLU)):
        return [{"name": name, "kind": "act"}]
    if isinstance(mod, nn.Sequential):
        out = []
        for i, sub in enumerate(mod):
            out.extend(_describe_module(f"{name}.{i}", sub))
        return out
    from .teacher import ResBlock

    if isinstance(mod, ResBlock):
        return (
            _describe_module(f"{name}.conv1", mod.conv1)
            + _describe_module(f"{name}.norm1", mod.norm1)
            + [{"name": f"{name}.relu", "kind": "act"}]
            + _describe_module(f"{name}.conv2", mod.conv2)
            + _describe_module(f"{name}.norm2", mod.norm2)
        )
    raise ValueError(f"cannot describe module {name} of type {type(mod).__name__}")


def describe_teacher_range(teacher: ToyTranslator, start: int, stop: int) -> list[dict]:
    layers = []
    for lname in teacher.layer_names[start:stop]:
        layers.extend(_describe_module(lname, teacher.stages[lname]))
    return layers


def describe_teacher(teacher: ToyTranslator) -> list[dict]:
    return describe_teacher_range(teacher, 0, len(teacher.layer_names))


def describe_teacher_segment(teacher: ToyTranslator, l_e: str, l_d: str) -> list[dict]:
    """The middle segment the shortcut block replaces: after l_e through l_d."""
    i, j = teacher._index(l_e), teacher._index(l_d)
    return describe_teacher_range(teacher, i + 1, j + 1)


def describe_encoder(teacher: ToyTranslator, l_e: str) -> list[dict]:
    return describe_teacher_range(teacher, 0, teacher._index(l_e) + 1)


def describe_decoder(teacher: ToyTranslator, l_d: str) -> list[dict]:
    return describe_teacher_range(teacher, teacher._index(l_d) + 1, len(teacher.layer_names))


def describe_block(block: ShortcutBlock, feature_hw: tuple[int, int]) -> list[dict]:
    """Per-frame cost of one shortcut forward at the given feature size.

    Reference-side reductions and resizes are recomputed every call (the
    forward pass is pure), so they are included here.
    """
    cfg = block.config
    c_a, c_f, c_r, k, n_p = (
        cfg.channels_a, cfg.channels_f, cfg.reduced_channels, cfg.kernel_size, cfg.n_points,
    )
    h, w = feature_hw
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    pad = (k - 1) // 2

    def conv(name, cin, cout, kk, overhead=False, bias=True):
        return {
            "name": name, "kind": "conv", "in_ch": cin, "out_ch": cout,
            "kernel": [kk, kk], "stride": 1, "padding": (kk - 1) // 2,
            "bias": bias, "overhead": overhead,
        }

    layers: list[dict] = [
        conv("reduce_a(a_t)", c_a, c_r, 1, bias=False),
        {"name": "a_ref:set", "kind": "set_channels", "channels": c_a},
        {**conv("reduce_a(a_ref)", c_a, c_r, 1, bias=False), "shared_params": True},
        {"name": "f_ref:set", "kind": "set_channels", "channels": c_f},
        conv("reduce_f(f_ref)", c_f, c_r, 1, bias=False),
        # Global offset generator on the concatenated half-res encoder features.
        {"name": "halve(a_ref)", "kind": "resize", "size": [h2, w2], "overhead": True},
        {"name": "halve(a_t)", "kind": "resize", "size": [h2, w2], "overhead": True},
        {"name": "gg:cat", "kind": "set_channels", "channels": 2 * c_r},
        conv("global_trunk", 2 * c_r, c_r, k, overhead=True),
        conv("global_head", c_r, 2, k, overhead=True),
        # Global alignment of the reduced reference decoder features.
        {"name": "ga_f:set", "kind": "set_channels", "channels": c_r},
        {"name": "ga_f:halve", "kind": "resize", "size": [h2, w2]},
        {"name": "ga_f:sampling", "kind": "deform_sampling", "n_points": n_p, "overhead": True},
        conv("ga_f:deform_conv", c_r, c_r, k, bias=False),
        {"name": "ga_f:restore", "kind": "resize", "size": [h, w]},
        # Same weights applied to the reduced reference encoder features.
        {"name": "ga_a:halve", "kind": "resize", "size": [h2, w2]},
        {"name": "ga_a:sampling", "kind": "deform_sampling", "n_points": n_p, "overhead": True},
        {**conv("ga_a:deform_conv", c_r, c_r, k, bias=False), "shared_params": True},
        {"name": "ga_a:restore", "kind": "resize", "size": [h, w]},
        # Local offset/mask generator.
        {"name": "lg:cat", "kind": "set_channels", "channels": 2 * c_r},
        conv("local_trunk1", 2 * c_r, c_r, k, overhead=True),
        conv("local_trunk2", c_r, c_r, k, overhead=True),
        conv("local_head", c_r, 3 * n_p, k, overhead=True),
        # Fused blend-and-deform plus channel reconstruction.
        {"name": "adabd:set", "kind": "set_channels", "channels": c_r},
        {"name": "adabd:sampling", "kind": "deform_sampling", "n_points": n_p, "overhead": True},
        {"name": "adabd:blend", "kind": "blend", "n_points": n_p, "overhead": True},
        conv("adabd:conv", c_r, c_r, k, bias=False),
        conv("reconstruct", c_r, c_f, 1, bias=False),
    ]
    return layers


# -- cost reports -------------------------------------------------------------


def build_cost_report(
    teacher: ToyTranslator,
    block: ShortcutBlock,
    dependence: str,
    frame_hw: tuple[int, int],
    alphas=(1, 2, 3, 6),
) -> dict:
    """MACs/parameter comparison of the full and shortcut per-frame paths."""
    l_e, l_d = split_for(dependence)
    c_in = teacher.in_channels
    h, w = frame_hw
    factor = teacher.spatial_factor(l_e)
    feat_hw = (h // factor, w // factor)

    full = analyze_network(describe_teacher(teacher), (c_in, h, w))
    seg_in = (teacher.channels_at(l_e), *feat_hw)
    segment = analyze_network(describe_teacher_segment(teacher, l_e, l_d), seg_in)
    block_cost = analyze_network(describe_block(block, feat_hw), seg_in)

    macs_full = full["macs_total"]
    macs_segment = segment["macs_total"]
    macs_shortcut = macs_full - macs_segment + block_cost["macs_total"]
    macs_shortcut_core = macs_full - macs_segment + block_cost["macs_core"]

    def mean_per_frame(alpha: int) -> float:
        return (macs_full + (alpha - 1) * macs_shortcut) / alpha

    report = {
        "dependence": dependence,
        "frame_hw": list(frame_hw),
        "split": [l_e, l_d],
        "macs_full_frame": macs_full,
        "macs_shortcut_frame": macs_shortcut,
        "macs_shortcut_frame_core_only": macs_shortcut_core,
        "macs_replaced_segment": macs_segment,
        "macs_block": block_cost["macs_total"],
        "macs_block_core_only": block_cost["macs_core"],
        "params_teacher": full["params"],
        "params_shortcut": block_cost["params"],
        "per_alpha": {},
    }
    for alpha in alphas:
        mean = mean_per_frame(alpha)
        report["per_alpha"][str(alpha)] = {
            "mean_macs_per_frame": mean,
            "cost_fraction": mean / macs_full,
            "savings_ratio": macs_full / mean,
        }
    return report
