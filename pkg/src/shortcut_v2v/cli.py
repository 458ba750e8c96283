"""Command-line driver for the whole pipeline.

Subcommands: gen-data, train-teacher, train-shortcut, infer, analyze,
benchmark, visualize. A YAML config is the single source of truth; flags and
``--set section.key=value`` overrides are applied on top and validated before
any work starts. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, dataio, scheduler, training, visualize
from .block import ShortcutBlock
from .config import RunConfig, apply_overrides, load_config, save_config
from .scheduler import ScheduleConfig
from .teacher import DEPENDENCE_LEVELS, ToyTranslator, split_for


def _apply_thread_cap() -> None:
    cap = os.environ.get("SHORTCUT_V2V_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override all seeds")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="config override, e.g. shortcut.alpha=6",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortcut-v2v",
        description="Temporal-redundancy compression for video-to-video translation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired-video dataset")
    _add_common(p)

    p = sub.add_parser("train-teacher", help="train the toy translator")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")

    p = sub.add_parser("train-shortcut", help="train the shortcut block against a frozen teacher")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint")
    p.add_argument("--alpha", type=int, default=None)
    p.add_argument("--dependence", choices=DEPENDENCE_LEVELS, default=None)
    p.add_argument("--channel-variant", choices=("full", "half", "quarter"), default=None)

    p = sub.add_parser("infer", help="run scheduled inference over a video")
    _add_common(p)
    p.add_argument("--video", type=Path, required=True, help="saved video directory")
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--shortcut", type=Path, default=None, help="shortcut checkpoint")
    p.add_argument("--alpha", type=int, default=None)
    p.add_argument("--dependence", choices=DEPENDENCE_LEVELS, default=None)
    p.add_argument("--keyframe-variant", choices=("teacher", "shortcut"), default=None)
    p.add_argument(
        "--teacher-only", action="store_true",
        help="bypass the schedule and run the full teacher on every frame",
    )

    p = sub.add_parser("analyze", help="temporal-redundancy statistics of teacher features")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--teacher", type=Path, required=True)

    p = sub.add_parser("benchmark", help="MACs/parameter cost report")
    _add_common(p)
    p.add_argument("--teacher", type=Path, default=None, help="teacher checkpoint (optional)")
    p.add_argument("--dependence", choices=DEPENDENCE_LEVELS + ("all",), default="all")
    p.add_argument("--channel-variant", choices=("full", "half", "quarter"), default="full")
    p.add_argument("--alpha", type=int, default=None)

    p = sub.add_parser("visualize", help="offset overlays and mask heatmaps")
    _add_common(p)
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--shortcut", type=Path, required=True)
    p.add_argument("--frame", type=int, default=1, help="current-frame index")
    p.add_argument("--reference", type=int, default=0, help="reference-frame index")
    p.add_argument("--stride", type=int, default=8)
    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    apply_overrides(config, args.overrides)
    if args.seed is not None:
        config.seed = args.seed
        config.data.seed = args.seed
        config.teacher.seed = args.seed
        config.shortcut.seed = args.seed
    for name, path in (("alpha", "shortcut.alpha"), ("dependence", "shortcut.dependence"),
                       ("channel_variant", "shortcut.channel_variant"),
                       ("keyframe_variant", "keyframe_variant")):
        value = getattr(args, name, None)
        if value is not None:
            apply_overrides(config, [f"{path}={value}"])
    return config


def _dataset_tensors(data_dir: Path) -> list[tuple[torch.Tensor, torch.Tensor]]:
    pairs = dataio.load_dataset(data_dir)
    return [
        (training.frames_to_tensor(s.frames), training.frames_to_tensor(t.frames))
        for s, t in pairs
    ]


def _split_train_holdout(videos, holdout: int):
    holdout = min(holdout, max(0, len(videos) - 1))
    if holdout == 0:
        return videos, videos[-1:]
    return videos[:-holdout], videos[-holdout:]


# -- subcommands ----------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    config = _load_run_config(args)
    d = config.data
    spec = dataio.SyntheticVideoSpec(
        num_frames=d.num_frames, height=d.height, width=d.width,
        motion_px_per_frame=d.motion_px_per_frame, num_shapes=d.num_shapes,
        seed=d.seed, task=d.task,
    )
    paths = dataio.generate_dataset(args.out, d.num_videos, spec)
    save_config(config, args.out / "config.yaml")
    print(f"wrote {len(paths)} video pairs under {args.out}")
    return 0


def _cmd_train_teacher(args) -> int:
    config = _load_run_config(args)
    videos = _dataset_tensors(args.data)
    train, _ = _split_train_holdout(videos, config.data.holdout_videos)
    teacher, metrics = training.train_teacher(
        train, config.teacher_train_config(), log_path=args.out / "teacher_train_log.csv"
    )
    args.out.mkdir(parents=True, exist_ok=True)
    teacher.save(args.out / "teacher.ckpt")
    save_config(config, args.out / "config.yaml")
    print(
        f"teacher trained for {len(metrics)} steps; final L1 "
        f"{metrics[-1]['l1']:.4f}; checkpoint at {args.out / 'teacher.ckpt'}"
    )
    return 0


def _cmd_train_shortcut(args) -> int:
    config = _load_run_config(args)
    videos = _dataset_tensors(args.data)
    train, holdout = _split_train_holdout(videos, config.data.holdout_videos)
    teacher = ToyTranslator.load(args.teacher)
    train_cfg = config.shortcut_train_config()

    bank = training.prepare_feature_bank(teacher, [s for s, _ in train], train_cfg.dependence)
    block = training.make_block_for(teacher, train_cfg.dependence, train_cfg.channel_variant)
    torch.manual_seed(train_cfg.seed)
    metrics = training.train_shortcut(
        teacher, bank, block, train_cfg, log_path=args.out / "shortcut_train_log.csv"
    )

    holdout_bank = training.prepare_feature_bank(
        teacher, [s for s, _ in holdout], train_cfg.dependence
    )
    report = training.evaluate_shortcut(teacher, holdout_bank, block, train_cfg.alpha)
    args.out.mkdir(parents=True, exist_ok=True)
    block.save(args.out / "shortcut.ckpt")
    (args.out / "heldout_eval.json").write_text(json.dumps(report, indent=2))
    save_config(config, args.out / "config.yaml")
    print(
        f"shortcut trained for {len(metrics)} steps; held-out feature L1 "
        f"{report['l1_shortcut']:.4f} (copy baseline {report['l1_copy_reference']:.4f})"
    )
    return 0


def _cmd_infer(args) -> int:
    config = _load_run_config(args)
    record = dataio.load_video(args.video)
    frames = training.frames_to_tensor(record.frames)
    teacher = ToyTranslator.load(args.teacher)

    if args.teacher_only:
        outputs = scheduler.teacher_only_video(frames, teacher)
        full_macs = analysis.analyze_network(
            analysis.describe_teacher(teacher),
            (teacher.in_channels, frames.shape[2], frames.shape[3]),
        )["macs_total"]
        trace = [
            {"t": t, "path": "full", "macs": full_macs, "cumulative_savings_ratio": 1.0}
            for t in range(frames.shape[0])
        ]
    else:
        block = ShortcutBlock.load(args.shortcut) if args.shortcut else None
        sched_cfg = ScheduleConfig(
            alpha=config.shortcut.alpha, keyframe_variant=config.keyframe_variant
        )
        outputs, trace = scheduler.run_video(
            frames, teacher, block, sched_cfg, config.shortcut.dependence
        )

    out_record = dataio.VideoRecord(
        frames=outputs.numpy().astype(np.float32),
        manifest={"role": "output", "source": str(args.video),
                  "num_frames": int(outputs.shape[0]),
                  "height": int(outputs.shape[2]), "width": int(outputs.shape[3]),
                  "checksum": ""},
    )
    out_record.manifest["checksum"] = dataio._checksum(
        out_record.frames.astype("<f4").tobytes()
    )
    dataio.save_video(out_record, args.out / "output", image_format="png")
    scheduler.write_trace(trace, args.out / "trace.json")
    full = sum(1 for e in trace if e["path"] == "full")
    print(f"processed {len(trace)} frames ({full} full, {len(trace) - full} shortcut)")
    return 0


def _cmd_analyze(args) -> int:
    config = _load_run_config(args)
    videos = _dataset_tensors(args.data)
    teacher = ToyTranslator.load(args.teacher)
    report = analysis.layer_redundancy_report(
        teacher, [s for s, _ in videos], random_seed=config.seed
    )
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "redundancy_report.json"
    path.write_text(json.dumps(report, indent=2))
    for layer, stats in report["layers"].items():
        print(
            f"{layer}: adjacent cc {stats['adjacent']['cc']:.3f}, "
            f"random cc {stats['random']['cc']:.3f}"
        )
    return 0


def _cmd_benchmark(args) -> int:
    config = _load_run_config(args)
    if args.teacher:
        teacher = ToyTranslator.load(args.teacher)
    else:
        teacher = ToyTranslator(base_width=config.teacher.base_width)
    levels = DEPENDENCE_LEVELS if args.dependence == "all" else (args.dependence,)
    frame_hw = (config.data.height, config.data.width)
    alphas = (1, 2, 3, 6)
    if config.shortcut.alpha not in alphas:
        alphas = tuple(sorted({*alphas, config.shortcut.alpha}))

    report = {"frame_hw": list(frame_hw), "levels": {}}
    for level in levels:
        block = training.make_block_for(teacher, level, args.channel_variant)
        report["levels"][level] = analysis.build_cost_report(
            teacher, block, level, frame_hw, alphas=alphas
        )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "cost_report.json").write_text(json.dumps(report, indent=2))
    for level, rep in report["levels"].items():
        ratio = rep["per_alpha"][str(config.shortcut.alpha)]["savings_ratio"]
        print(
            f"{level}: full {rep['macs_full_frame'] / 1e6:.1f}M MACs, shortcut "
            f"{rep['macs_shortcut_frame'] / 1e6:.1f}M, savings x{ratio:.2f} "
            f"at alpha={config.shortcut.alpha}"
        )
    return 0


def _cmd_visualize(args) -> int:
    config = _load_run_config(args)
    record = dataio.load_video(args.video)
    frames = training.frames_to_tensor(record.frames)
    if not (0 <= args.reference < frames.shape[0] and 0 <= args.frame < frames.shape[0]):
        raise ValueError("frame indices out of range")
    teacher = ToyTranslator.load(args.teacher)
    block = ShortcutBlock.load(args.shortcut)
    l_e, l_d = split_for(config.shortcut.dependence)

    with torch.no_grad():
        a_ref = teacher.encode_to(frames[args.reference : args.reference + 1], l_e)
        f_ref = teacher.middle_to(a_ref, l_e, l_d)
        a_t = teacher.encode_to(frames[args.frame : args.frame + 1], l_e)
        _, internals = block(f_ref, a_ref, a_t, return_internals=True)

    args.out.mkdir(parents=True, exist_ok=True)
    paths = visualize.export_offset_overlay(
        frames[args.frame], internals["global_offsets"], internals["local_offsets"],
        args.stride, args.out / "offsets",
    )
    paths.append(visualize.export_mask_heatmap(internals["mask"], args.out / "mask.png"))
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-teacher": _cmd_train_teacher,
    "train-shortcut": _cmd_train_shortcut,
    "infer": _cmd_infer,
    "analyze": _cmd_analyze,
    "benchmark": _cmd_benchmark,
    "visualize": _cmd_visualize,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    _apply_thread_cap()
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
