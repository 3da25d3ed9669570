"""Synthetic factorized videos, frame export and external-frame ingest."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

SHAPES = ("square", "circle", "cross")
PALETTE = (
    (0.9, -0.8, -0.8),
    (-0.8, 0.9, -0.8),
    (-0.8, -0.8, 0.9),
    (0.9, 0.9, -0.8),
)
# compass headings, counter-clockwise from east; image y grows downward
HEADINGS = ("E", "NE", "N", "NW", "W", "SW", "S", "SE")
BACKGROUND = -1.0
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class SyntheticSpec:
    n_videos: int = 1024
    n_frames: int = 8
    height: int = 32
    width: int = 32
    shapes: tuple[str, ...] = SHAPES
    palette: tuple[tuple[float, float, float], ...] = PALETTE
    n_directions: int = 8
    speeds: tuple[float, ...] = (1.0, 2.0)
    background: str = "solid"
    radius: float = 5.0
    seed: int = 0

    @property
    def n_appearance(self) -> int:
        return len(self.shapes) * len(self.palette)

    @property
    def n_motion(self) -> int:
        return self.n_directions * len(self.speeds)


@dataclass
class SyntheticDataset:
    videos: np.ndarray  # [n, 3, T, H, W] float32 in [-1, 1]
    appearance: np.ndarray
    motion: np.ndarray
    spec: SyntheticSpec = field(repr=False)

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def labels(self) -> np.ndarray:
        """Joint (appearance x motion) grid label."""
        return self.appearance * self.spec.n_motion + self.motion

    def split(self, fraction: float = 0.5) -> tuple["SyntheticDataset", "SyntheticDataset"]:
        k = int(round(len(self) * fraction))
        a = SyntheticDataset(self.videos[:k], self.appearance[:k], self.motion[:k], self.spec)
        b = SyntheticDataset(self.videos[k:], self.appearance[k:], self.motion[k:], self.spec)
        return a, b


def heading_vector(index: int, n_directions: int = 8) -> np.ndarray:
    angle = 2 * np.pi * index / n_directions
    return np.array([np.cos(angle), -np.sin(angle)])


def _coverage(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    if shape == "square":
        sdf = np.maximum(np.abs(dx), np.abs(dy)) - r
    elif shape == "circle":
        sdf = np.hypot(dx, dy) - r
    elif shape == "cross":
        arm = r / 3.0
        bar_h = np.maximum(np.abs(dx) - r, np.abs(dy) - arm)
        bar_v = np.maximum(np.abs(dx) - arm, np.abs(dy) - r)
        sdf = np.minimum(bar_h, bar_v)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    # one-pixel antialiased edge keeps sub-pixel motion visible
    return np.clip(0.5 - sdf, 0.0, 1.0)


def _background(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    t, h, w = spec.n_frames, spec.height, spec.width
    if spec.background == "solid":
        return np.full((t, h, w), BACKGROUND)
    if spec.background == "drift":
        phase = rng.uniform(0, 2 * np.pi)
        xs = np.arange(w)[None, None, :] + 0.25 * np.arange(t)[:, None, None]
        ramp = 0.15 * np.sin(2 * np.pi * xs / w + phase)
        return np.broadcast_to(BACKGROUND + 0.2 + ramp, (t, h, w)).copy()
    raise ValueError(f"unknown background mode {spec.background!r}")


def render_video(
    spec: SyntheticSpec, shape: str, color, direction: int, speed: float, start: tuple[float, float],
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One ``[3, T, H, W]`` clip of a shape translating at constant velocity."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    vel = heading_vector(direction, spec.n_directions) * speed
    bg = _background(spec, rng or np.random.default_rng(0))
    color = np.asarray(color, dtype=np.float64)[:, None, None]
    frames = np.empty((3, spec.n_frames, spec.height, spec.width))
    for t in range(spec.n_frames):
        cx, cy = start[0] + vel[0] * t, start[1] + vel[1] * t
        a = _coverage(shape, xx - cx, yy - cy, spec.radius)
        frames[:, t] = a * color + (1 - a) * bg[t]
    return frames.astype(np.float32)


def _start_range(spec: SyntheticSpec, disp: float, size: int) -> tuple[float, float]:
    margin = spec.radius + 1.0
    lo = margin + max(0.0, -disp)
    hi = size - 1 - margin - max(0.0, disp)
    return lo, hi


def make_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic dataset whose appearance and motion labels form a balanced product.

    Labels are drawn by cycling through shuffled copies of the full
    (appearance, motion) grid, so both marginals are uniform and
    independent. Start positions keep the object inside the frame for
    every time step.
    """
    span = spec.radius * 2 + 2 + max(spec.speeds) * (spec.n_frames - 1)
    if span > min(spec.height, spec.width):
        raise ValueError(
            f"{spec.height}x{spec.width} frames cannot hold a radius-{spec.radius} object moving "
            f"{max(spec.speeds)} px/frame for {spec.n_frames} frames"
        )
    rng = np.random.default_rng([spec.seed, 7])
    n_motion = spec.n_motion
    grid = spec.n_appearance * n_motion
    cells = np.concatenate([rng.permutation(grid) for _ in range(-(-spec.n_videos // grid))])[: spec.n_videos]
    appearance, motion = np.divmod(cells, n_motion)
    videos = np.empty((spec.n_videos, 3, spec.n_frames, spec.height, spec.width), dtype=np.float32)
    for i, (a, m) in enumerate(zip(appearance, motion)):
        shape_i, color_i = divmod(int(a), len(spec.palette))
        direction, speed_i = divmod(int(m), len(spec.speeds))
        speed = spec.speeds[speed_i]
        disp = heading_vector(direction, spec.n_directions) * speed * (spec.n_frames - 1)
        x_lo, x_hi = _start_range(spec, disp[0], spec.width)
        y_lo, y_hi = _start_range(spec, disp[1], spec.height)
        start = (rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi))
        videos[i] = render_video(spec, spec.shapes[shape_i], spec.palette[color_i], direction, speed, start, rng)
    return SyntheticDataset(videos, appearance.astype(np.int64), motion.astype(np.int64), spec)


def noise_videos(n: int, n_frames: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 11])
    return rng.uniform(-1, 1, size=(n, 3, n_frames, height, width)).astype(np.float32)


# ------------------------------------------------------------ frame images
def to_uint8(video: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255] with ``round((v + 1) * 127.5)``."""
    v = np.clip(np.asarray(video, dtype=np.float64), -1.0, 1.0)
    # floor(x + 0.5): half-way values round up, so 0 -> 128
    return np.floor((v + 1.0) * 127.5 + 0.5).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def export_frames(video: np.ndarray, directory, prefix: str = "frame") -> list[Path]:
    """Write each frame of a ``[3, T, H, W]`` video as a lossless PNG."""
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] != 3:
        raise ValueError(f"expected [3, T, H, W], got {video.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(video).transpose(1, 2, 3, 0)
    paths = []
    for t, frame in enumerate(pixels):
        path = directory / f"{prefix}_{t:04d}.png"
        Image.fromarray(frame, mode="RGB").save(path)
        paths.append(path)
    return paths


def export_grid(videos: np.ndarray, path, columns: int | None = None) -> Path:
    """One PNG per batch: rows are videos, columns are frames."""
    videos = np.asarray(videos)
    n, _, t, h, w = videos.shape
    pixels = to_uint8(videos).transpose(0, 3, 2, 4, 1)  # n, H, T, W, 3
    grid = pixels.reshape(n * h, t * w, 3)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid, mode="RGB").save(path)
    return path


def _resize_center_crop(img: Image.Image, resize: tuple[int, int] | None, crop: tuple[int, int]) -> np.ndarray:
    if resize is not None:
        img = img.resize(resize, Image.BILINEAR)
    w, h = img.size
    cw, ch = crop
    if cw > w or ch > h:
        raise ValueError(f"crop {crop} larger than frame {img.size}")
    left, top = (w - cw) // 2, (h - ch) // 2
    return np.asarray(img.crop((left, top, left + cw, top + ch)).convert("RGB"))


def ingest_external(
    root,
    n_frames: int,
    height: int,
    width: int,
    resize: tuple[int, int] | None = None,
    seed: int = 0,
    hflip: bool = False,
) -> tuple[np.ndarray, dict]:
    """Load ``root/<video>/<frame>.png`` folders as ``[n, 3, T, H, W]`` in [-1, 1].

    Frames are resized to ``resize`` (width, height) when given, then
    center-cropped to ``width x height``. A fixed window of ``n_frames``
    starting at a seeded random offset is taken per video; shorter videos
    are skipped and counted. ``hflip`` appends mirrored copies.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    rng = np.random.default_rng([seed, 13])
    videos, skipped = [], []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if len(frames) < n_frames:
            skipped.append(folder.name)
            continue
        offset = int(rng.integers(0, len(frames) - n_frames + 1))
        clip = []
        for path in frames[offset : offset + n_frames]:
            with Image.open(path) as img:
                clip.append(_resize_center_crop(img, resize, (width, height)))
        arr = from_uint8(np.stack(clip)).transpose(3, 0, 1, 2)
        videos.append(arr)
        if hflip:
            videos.append(arr[..., ::-1].copy())
    if skipped:
        logger.warning("skipped %d videos shorter than %d frames", len(skipped), n_frames)
    out = np.stack(videos) if videos else np.empty((0, 3, n_frames, height, width), np.float32)
    return out, {"loaded": len(videos), "skipped": len(skipped), "skipped_names": skipped}
