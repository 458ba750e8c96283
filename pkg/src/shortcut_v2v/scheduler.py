"""Keyframe-interval inference: full teacher passes every ``alpha`` frames,
shortcut passes in between, with cached reference features.

Frame ``t`` takes the full path iff ``t % alpha == 0``; the full pass
refreshes the (encoder, decoder) reference cache. In the default variant the
keyframe emits the teacher's output. The alternative variant still runs the
full teacher at keyframes to refresh the cache but emits the block's estimate
from the previous cache (the first frame has no previous cache and always
emits the teacher output). No future frames are ever consulted, so the same
state machine serves both offline and streaming use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .analysis import build_cost_report
from .block import ShortcutBlock
from .teacher import ToyTranslator, split_for

KEYFRAME_VARIANTS = ("teacher", "shortcut")


@dataclass
class ScheduleConfig:
    alpha: int = 3
    keyframe_variant: str = "teacher"

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.keyframe_variant not in KEYFRAME_VARIANTS:
            raise ValueError(
                f"keyframe_variant must be one of {KEYFRAME_VARIANTS}, "
                f"got {self.keyframe_variant!r}"
            )


@dataclass
class ReferenceCache:
    a_ref: torch.Tensor
    f_ref: torch.Tensor
    ref_timestep: int


class VideoSchedule:
    """Single-owner streaming state for one video."""

    def __init__(
        self,
        teacher: ToyTranslator,
        block: ShortcutBlock | None,
        config: ScheduleConfig,
        dependence: str = "medium",
        frame_hw: tuple[int, int] | None = None,
    ):
        if block is None and config.alpha > 1:
            raise ValueError("a shortcut block is required when alpha > 1")
        self.teacher = teacher
        self.block = block
        self.config = config
        self.l_e, self.l_d = split_for(dependence)
        self.dependence = dependence
        self.cache: ReferenceCache | None = None
        self._next_t = 0
        self._frame_hw = frame_hw
        self._costs: dict[str, int] | None = None
        self._macs_seen = 0
        self.trace: list[dict] = []

    def _frame_costs(self, frame: torch.Tensor) -> dict[str, int]:
        if self._costs is None:
            from .analysis import analyze_network, describe_decoder, describe_teacher

            hw = self._frame_hw or (frame.shape[-2], frame.shape[-1])
            full = analyze_network(
                describe_teacher(self.teacher), (self.teacher.in_channels, *hw)
            )["macs_total"]
            if self.block is not None:
                report = build_cost_report(self.teacher, self.block, self.dependence, hw)
                shortcut = report["macs_shortcut_frame"]
                factor = self.teacher.spatial_factor(self.l_d)
                dec_in = (self.teacher.channels_at(self.l_d), hw[0] // factor, hw[1] // factor)
                decoder = analyze_network(describe_decoder(self.teacher, self.l_d), dec_in)[
                    "macs_total"
                ]
                # Variant keyframe: full refresh plus one block estimate and
                # one extra decode of the estimate.
                variant = full + report["macs_block"] + decoder
            else:
                shortcut, variant = full, full
            self._costs = {"full": full, "shortcut": shortcut, "full_variant": variant}
        return self._costs

    def step(self, frame: torch.Tensor, t: int) -> torch.Tensor:
        """Process one frame online; ``t`` must equal frames already processed."""
        if t != self._next_t:
            raise RuntimeError(
                f"out-of-order step: expected t={self._next_t}, got t={t}"
            )
        if frame.dim() == 3:
            frame = frame.unsqueeze(0)
        costs = self._frame_costs(frame)

        with torch.no_grad():
            a_t = self.teacher.encode_to(frame, self.l_e)
            if t % self.config.alpha == 0:
                f_t = self.teacher.middle_to(a_t, self.l_e, self.l_d)
                if self.config.keyframe_variant == "shortcut" and self.cache is not None:
                    f_emit = self.block(self.cache.f_ref, self.cache.a_ref, a_t)
                    macs = costs["full_variant"]
                else:
                    f_emit = f_t
                    macs = costs["full"]
                self.cache = ReferenceCache(a_ref=a_t, f_ref=f_t, ref_timestep=t)
                path = "full"
            else:
                if self.cache is None:
                    raise RuntimeError("no reference cache; schedule must start at t=0")
                f_emit = self.block(self.cache.f_ref, self.cache.a_ref, a_t)
                path = "shortcut"
                macs = costs["shortcut"]
            output = self.teacher.decode_from(f_emit, self.l_d)

        self._macs_seen += macs
        full_equivalent = (t + 1) * costs["full"]
        self.trace.append(
            {
                "t": t,
                "path": path,
                "macs": macs,
                "cumulative_savings_ratio": full_equivalent / self._macs_seen
                if self._macs_seen
                else 1.0,
            }
        )
        self._next_t += 1
        return output.squeeze(0)


def run_video(
    frames: torch.Tensor,
    teacher: ToyTranslator,
    block: ShortcutBlock | None,
    config: ScheduleConfig,
    dependence: str = "medium",
) -> tuple[torch.Tensor, list[dict]]:
    """Batch inference over a whole clip; returns (outputs, per-frame trace)."""
    if frames.dim() != 4 or frames.shape[0] == 0:
        raise ValueError("frames must be a non-empty [T, C, H, W] sequence")
    schedule = VideoSchedule(teacher, block, config, dependence)
    outputs = [schedule.step(frames[t], t) for t in range(frames.shape[0])]
    return torch.stack(outputs), schedule.trace


def teacher_only_video(frames: torch.Tensor, teacher: ToyTranslator) -> torch.Tensor:
    """Monolithic per-frame teacher inference, for comparison."""
    if frames.dim() != 4 or frames.shape[0] == 0:
        raise ValueError("frames must be a non-empty [T, C, H, W] sequence")
    with torch.no_grad():
        return torch.cat([teacher(frames[t : t + 1]) for t in range(frames.shape[0])])


def write_trace(trace: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {
        "num_frames": len(trace),
        "full_frames": sum(1 for e in trace if e["path"] == "full"),
        "shortcut_frames": sum(1 for e in trace if e["path"] == "shortcut"),
        "total_macs": sum(e["macs"] for e in trace),
        "final_savings_ratio": trace[-1]["cumulative_savings_ratio"] if trace else None,
        "frames": trace,
    }
    path.write_text(json.dumps(summary, indent=2))
