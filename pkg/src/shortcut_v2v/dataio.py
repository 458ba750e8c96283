"""Synthetic paired-video generation and frame/feature serialization.

Videos are moving colored shapes over a smoothly textured background. The
whole scene pans along a seed-chosen cardinal direction at exactly the
requested motion magnitude, so adjacent frames have one dominant displacement;
each shape additionally drifts relative to the scene in its own random
direction at a fraction of that speed and wraps around the canvas, so content
keeps entering, leaving, and occluding. The paired target is a deterministic
per-frame translation of the source.

Frames are float32 in [-1, 1], stored as [T, 3, H, W] arrays. On disk a video
is a directory holding ``manifest.json`` plus either numbered 8-bit PNG
frames or a single raw float32 container for exact round-trips.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

TASKS = ("color_invert", "edge_to_fill")

_RAW_MAGIC = b"SV2VVID0"
_DTYPE_TAGS = {0: "<f4"}


@dataclass(frozen=True)
class SyntheticVideoSpec:
    num_frames: int = 24
    height: int = 64
    width: int = 128
    motion_px_per_frame: float = 1.5
    num_shapes: int = 6
    seed: int = 0
    task: str = "color_invert"

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas must have positive area")
        if self.num_frames < 1:
            raise ValueError("need at least one frame")
        if self.motion_px_per_frame < 0:
            raise ValueError("motion magnitude must be non-negative")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")


@dataclass
class VideoRecord:
    frames: np.ndarray  # [T, 3, H, W] float32 in [-1, 1]
    manifest: dict

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _noise_octave(rng: np.random.Generator, h: int, w: int, grid: int) -> np.ndarray:
    """One octave of band-limited RGB noise: coarse noise upsampled bilinearly."""
    ch, cw = max(2, h // grid), max(2, w // grid)
    coarse = rng.uniform(-1.0, 1.0, size=(3, ch, cw)).astype(np.float32)
    out = np.empty((3, h, w), dtype=np.float32)
    ys = np.linspace(0, ch - 1, h, dtype=np.float32)
    xs = np.linspace(0, cw - 1, w, dtype=np.float32)
    y0 = np.minimum(ys.astype(np.int64), ch - 2)
    x0 = np.minimum(xs.astype(np.int64), cw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    for c in range(3):
        g = coarse[c]
        out[c] = (
            g[y0][:, x0] * (1 - fy) * (1 - fx)
            + g[y0][:, x0 + 1] * (1 - fy) * fx
            + g[y0 + 1][:, x0] * fy * (1 - fx)
            + g[y0 + 1][:, x0 + 1] * fy * fx
        )
    return out


def _smooth_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Two-octave background texture in roughly [-0.8, 0.8].

    The fine octave keeps the autocorrelation sharply peaked so the scene pan
    is recoverable from adjacent frames.
    """
    return 0.4 * _noise_octave(rng, h, w, 8) + 0.4 * _noise_octave(rng, h, w, 2)


def _shape_stencil(kind: str, sh: int, sw: int) -> np.ndarray:
    """Boolean footprint of a shape inside an (sh, sw) box."""
    yy, xx = np.mgrid[0:sh, 0:sw]
    if kind == "rect":
        return np.ones((sh, sw), dtype=bool)
    if kind == "ellipse":
        cy, cx = (sh - 1) / 2, (sw - 1) / 2
        return ((yy - cy) / max(cy, 1)) ** 2 + ((xx - cx) / max(cx, 1)) ** 2 <= 1.0
    if kind == "triangle":
        return xx * sh >= yy * sw / 2  # wedge
    raise ValueError(kind)


def _render_frame(spec: SyntheticVideoSpec, texture, bg_vel, shapes, t: int) -> np.ndarray:
    h, w = spec.height, spec.width
    th, tw = texture.shape[1], texture.shape[2]
    oy = int(round(bg_vel[0] * t)) % th
    ox = int(round(bg_vel[1] * t)) % tw
    rolled = np.roll(texture, shift=(-oy, -ox), axis=(1, 2))
    frame = rolled[:, :h, :w].copy()

    for shape in shapes:
        sy = int(round(shape["pos"][0] + shape["vel"][0] * t)) % h
        sx = int(round(shape["pos"][1] + shape["vel"][1] * t)) % w
        stencil = shape["stencil"]
        sh, sw = stencil.shape
        ys = (np.arange(sh) + sy) % h
        xs = (np.arange(sw) + sx) % w
        region = frame[:, ys[:, None], xs[None, :]]
        color = shape["color"][:, None, None]
        frame[:, ys[:, None], xs[None, :]] = np.where(stencil, color, region)
    return frame


def _edge_map(frame: np.ndarray) -> np.ndarray:
    """Gradient-magnitude rendering in [-1, 1]; bright lines on dark ground."""
    gray = frame.mean(axis=0)
    gy = np.zeros_like(gray)
    gx = np.zeros_like(gray)
    gy[1:-1, :] = gray[2:, :] - gray[:-2, :]
    gx[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    mag = np.sqrt(gy**2 + gx**2)
    mag = np.clip(mag / 1.5, 0.0, 1.0)
    edges = mag * 2.0 - 1.0
    return np.repeat(edges[None], 3, axis=0).astype(np.float32)


def _translate(frame: np.ndarray, task: str) -> np.ndarray:
    if task == "color_invert":
        return -frame
    return frame  # edge_to_fill: target is the filled render itself


def generate_video(spec: SyntheticVideoSpec) -> tuple[VideoRecord, VideoRecord]:
    """Generate a (source, target) video pair, pixel-exact reproducible from the seed."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width

    # Texture larger than the canvas so the pan can wrap without seams.
    texture = _smooth_texture(rng, max(2 * h, h + 8), max(2 * w, w + 8))

    cardinal = rng.integers(0, 4)
    angle = cardinal * math.pi / 2
    bg_vel = (
        spec.motion_px_per_frame * math.sin(angle),
        spec.motion_px_per_frame * math.cos(angle),
    )

    kinds = ("rect", "ellipse", "triangle")
    shapes = []
    for _ in range(spec.num_shapes):
        sh = int(rng.integers(max(4, h // 6), max(6, h // 3)))
        sw = int(rng.integers(max(4, w // 10), max(6, w // 4)))
        theta = rng.uniform(0, 2 * math.pi)
        # Shapes ride the scene pan plus a slower relative drift, so the pan
        # stays the dominant inter-frame displacement while occlusions and
        # disocclusions still accumulate over the clip.
        drift = spec.motion_px_per_frame * rng.uniform(0.05, 0.2)
        shapes.append(
            {
                "stencil": _shape_stencil(kinds[int(rng.integers(0, 3))], sh, sw),
                "pos": (float(rng.integers(0, h)), float(rng.integers(0, w))),
                "vel": (
                    bg_vel[0] + drift * math.sin(theta),
                    bg_vel[1] + drift * math.cos(theta),
                ),
                "color": rng.uniform(-1.0, 1.0, size=3).astype(np.float32),
            }
        )

    rendered = np.stack(
        [_render_frame(spec, texture, bg_vel, shapes, t) for t in range(spec.num_frames)]
    ).astype(np.float32)

    if spec.task == "edge_to_fill":
        source = np.stack([_edge_map(f) for f in rendered])
        target = rendered
    else:
        source = rendered
        target = np.stack([_translate(f, spec.task) for f in rendered])

    def record(frames: np.ndarray, role: str) -> VideoRecord:
        manifest = {
            "spec": asdict(spec),
            "role": role,
            "num_frames": spec.num_frames,
            "height": h,
            "width": w,
            "checksum": _checksum(frames.astype("<f4").tobytes()),
        }
        return VideoRecord(frames=frames, manifest=manifest)

    return record(source, "source"), record(target, "target")


# -- quantization -----------------------------------------------------------


def frames_to_uint8(frames: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint8, per 8-bit PNG storage."""
    q = np.round((np.clip(frames, -1.0, 1.0) + 1.0) * 0.5 * 255.0)
    return q.astype(np.uint8)


def uint8_to_frames(q: np.ndarray) -> np.ndarray:
    return (q.astype(np.float32) / 255.0) * 2.0 - 1.0


# -- on-disk formats --------------------------------------------------------


def _write_raw(path: Path, frames: np.ndarray) -> None:
    data = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_RAW_MAGIC)
        fh.write(struct.pack("<II", 0, data.ndim))  # dtype tag, ndim
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(data.tobytes())


def _read_raw(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[: len(_RAW_MAGIC)] != _RAW_MAGIC:
        raise IOError(f"not a raw video container: {path}")
    tag, ndim = struct.unpack_from("<II", raw, len(_RAW_MAGIC))
    if tag not in _DTYPE_TAGS:
        raise IOError(f"unknown dtype tag {tag} in {path}")
    shape = struct.unpack_from(f"<{ndim}I", raw, len(_RAW_MAGIC) + 8)
    offset = len(_RAW_MAGIC) + 8 + 4 * ndim
    count = int(np.prod(shape))
    payload = np.frombuffer(raw, dtype=_DTYPE_TAGS[tag], count=count, offset=offset)
    return payload.reshape(shape).copy()


def save_video(record: VideoRecord, path: str | Path, image_format: str = "png") -> Path:
    """Write a video directory: manifest plus PNG frames or a raw container.

    ``png`` quantizes to 8 bits per channel (lossless files, lossy in value);
    ``raw`` keeps exact float32 for bitwise round-trips.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = dict(record.manifest)
    manifest["format"] = image_format

    if image_format == "png":
        q = frames_to_uint8(record.frames)
        names = []
        for t in range(q.shape[0]):
            name = f"frame_{t:05d}.png"
            Image.fromarray(q[t].transpose(1, 2, 0), mode="RGB").save(path / name)
            names.append(name)
        manifest["frame_files"] = names
        manifest["stored_checksum"] = _checksum(q.tobytes())
    elif image_format == "raw":
        _write_raw(path / "frames.raw", record.frames)
        manifest["frame_files"] = ["frames.raw"]
        manifest["stored_checksum"] = _checksum(record.frames.astype("<f4").tobytes())
    else:
        raise ValueError(f"unknown format {image_format!r}; expected 'png' or 'raw'")

    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_video(path: str | Path) -> VideoRecord:
    """Read a video directory written by :func:`save_video`, validating checksums."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise IOError(f"missing manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise IOError(f"corrupt manifest under {path}: {exc}") from exc

    fmt = manifest.get("format")
    if fmt == "png":
        frames_u8 = []
        for name in manifest["frame_files"]:
            file = path / name
            if not file.is_file():
                raise IOError(f"missing frame file {file}")
            frames_u8.append(np.asarray(Image.open(file).convert("RGB")).transpose(2, 0, 1))
        q = np.stack(frames_u8)
        if _checksum(q.tobytes()) != manifest["stored_checksum"]:
            raise IOError(f"frame content does not match manifest checksum under {path}")
        frames = uint8_to_frames(q)
    elif fmt == "raw":
        frames = _read_raw(path / manifest["frame_files"][0])
        if _checksum(frames.astype("<f4").tobytes()) != manifest["stored_checksum"]:
            raise IOError(f"frame content does not match manifest checksum under {path}")
    else:
        raise IOError(f"manifest under {path} has unknown format {fmt!r}")

    return VideoRecord(frames=np.ascontiguousarray(frames, dtype=np.float32), manifest=manifest)


def generate_dataset(
    out_dir: str | Path,
    num_videos: int,
    spec: SyntheticVideoSpec,
    image_format: str = "png",
) -> list[Path]:
    """Generate ``num_videos`` source/target pairs with derived seeds."""
    out_dir = Path(out_dir)
    paths = []
    for i in range(num_videos):
        vid_spec = SyntheticVideoSpec(**{**asdict(spec), "seed": spec.seed + 1000 * i})
        source, target = generate_video(vid_spec)
        base = out_dir / f"video_{i:03d}"
        save_video(source, base / "source", image_format)
        save_video(target, base / "target", image_format)
        paths.append(base)
    return paths


def load_dataset(root: str | Path) -> list[tuple[VideoRecord, VideoRecord]]:
    """Load every video_*/ pair under ``root``, sorted by index."""
    root = Path(root)
    pairs = []
    for base in sorted(root.glob("video_*")):
        pairs.append((load_video(base / "source"), load_video(base / "target")))
    if not pairs:
        raise IOError(f"no video_* directories under {root}")
    return pairs
