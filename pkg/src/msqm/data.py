"""Synthetic moving-shape clips and the on-disk PPM/PGM clip layout.

Dataset layout::

    <root>/<clip_id>/frames/00000.ppm   (P6, maxval 255)
    <root>/<clip_id>/masks/00000.pgm    (P5, values 0 or 255)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .features import ClipSample

SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
BACKGROUNDS = ("static", "drift")


class DatasetError(ValueError):
    pass


# --------------------------------------------------------------------------- synthetic clips


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_frames: int = 5
    height: int = 64
    width: int = 64
    n_objects: int = 2
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    speed_range: tuple[float, float] = (1.0, 3.0)  # px / frame
    size_range: tuple[float, float] = (5.0, 12.0)  # half extent, px
    background: str = "static"
    n_static: int = 0  # distractor shapes that never move and are not in the mask

    def __post_init__(self):
        if not 0 <= self.n_objects <= 4:
            raise ValueError(f"n_objects must be in 0..4, got {self.n_objects}")
        if self.speed_range[0] < 1.0 or self.speed_range[1] < self.speed_range[0]:
            raise ValueError(f"speed range {self.speed_range} must start at >= 1 px/frame")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if unknown := set(self.shape_kinds) - set(SHAPE_KINDS):
            raise ValueError(f"unknown shape kinds {sorted(unknown)}")
        if 2 * self.size_range[1] >= min(self.height, self.width):
            raise ValueError("objects must fit inside the frame")
        if self.n_frames < 2:
            raise ValueError("clips need at least 2 frames")


@dataclass(frozen=True)
class ShapeTrack:
    """An analytic shape translating at constant velocity, reflected at the frame border."""

    kind: str
    half: tuple[float, float]  # ellipse semi-axes / rectangle half sizes
    vertices: tuple[tuple[float, float], ...]  # triangle vertex offsets from the centre
    start: tuple[float, float]  # (x, y) centre at t = 0
    velocity: tuple[float, float]
    color: tuple[float, float, float]
    stripe: float  # stripe period (px) of the texture carried by the object
    bounds: tuple[float, float, float, float]  # x_lo, x_hi, y_lo, y_hi for the centre

    def center(self, t: int) -> tuple[float, float]:
        x = _reflect(self.start[0] + self.velocity[0] * t, self.bounds[0], self.bounds[1])
        y = _reflect(self.start[1] + self.velocity[1] * t, self.bounds[2], self.bounds[3])
        return x, y

    def inside(self, px: np.ndarray, py: np.ndarray, t: int) -> np.ndarray:
        """Which points (pixel centres) the shape covers at frame ``t``."""
        cx, cy = self.center(t)
        dx, dy = px - cx, py - cy
        if self.kind == "ellipse":
            return (dx / self.half[0]) ** 2 + (dy / self.half[1]) ** 2 <= 1.0
        if self.kind == "rectangle":
            return (np.abs(dx) <= self.half[0]) & (np.abs(dy) <= self.half[1])
        edges = []
        for (ax, ay), (bx, by) in zip(self.vertices, self.vertices[1:] + self.vertices[:1]):
            edges.append((bx - ax) * (dy - ay) - (by - ay) * (dx - ax))
        e0, e1, e2 = edges
        return ((e0 >= 0) & (e1 >= 0) & (e2 >= 0)) | ((e0 <= 0) & (e1 <= 0) & (e2 <= 0))


def _reflect(p: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    u = (p - lo) % (2 * span)
    return lo + (u if u <= span else 2 * span - u)


def _make_track(rng: np.random.Generator, cfg: SynthConfig, moving: bool) -> ShapeTrack:
    kind = str(rng.choice(cfg.shape_kinds))
    a, b = rng.uniform(*cfg.size_range, size=2)
    if kind == "triangle":
        angles = np.sort(rng.uniform(0, 2 * math.pi, 3))
        radii = rng.uniform(cfg.size_range[0], cfg.size_range[1], 3)
        verts = tuple((float(r * math.cos(t)), float(r * math.sin(t))) for r, t in zip(radii, angles))
        xs, ys = [v[0] for v in verts], [v[1] for v in verts]
        ext = (min(xs), max(xs), min(ys), max(ys))
    else:
        verts = ()
        ext = (-a, a, -b, b)
    bounds = (-ext[0], cfg.width - ext[1], -ext[2], cfg.height - ext[3])
    start = (float(rng.uniform(bounds[0], bounds[1])), float(rng.uniform(bounds[2], bounds[3])))
    if moving:
        speed = rng.uniform(*cfg.speed_range)
        theta = rng.uniform(0, 2 * math.pi)
        velocity = (float(speed * math.cos(theta)), float(speed * math.sin(theta)))
    else:
        velocity = (0.0, 0.0)
    color = tuple(float(c) for c in rng.uniform(0.0, 1.0, 3))
    return ShapeTrack(kind, (float(a), float(b)), verts, start, velocity, color, float(rng.uniform(3, 8)), bounds)


def object_tracks(cfg: SynthConfig) -> tuple[list[ShapeTrack], list[ShapeTrack]]:
    """(moving, static) shape tracks drawn from the clip's seed."""
    rng = np.random.default_rng(cfg.seed)
    moving = [_make_track(rng, cfg, True) for _ in range(cfg.n_objects)]
    static = [_make_track(rng, cfg, False) for _ in range(cfg.n_static)]
    return moving, static


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    pad = cfg.n_frames if cfg.background == "drift" else 0
    h, w = cfg.height + pad, cfg.width + pad
    coarse = rng.uniform(0.25, 0.65, size=(h // 8 + 1, w // 8 + 1, 3))
    smooth = np.kron(coarse, np.ones((8, 8, 1)))[:h, :w]
    return np.clip(smooth + rng.normal(0.0, 0.04, size=(h, w, 3)), 0.0, 1.0)


def generate_clip(cfg: SynthConfig, clip_id: Optional[str] = None) -> ClipSample:
    """Render a clip; the mask of each frame is the union of the moving silhouettes."""
    moving, static = object_tracks(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    canvas = _background(rng, cfg)
    py, px = np.mgrid[0 : cfg.height, 0 : cfg.width] + 0.5
    frames = np.empty((cfg.n_frames, cfg.height, cfg.width, 3))
    masks = np.zeros((cfg.n_frames, cfg.height, cfg.width), dtype=np.uint8)
    for t in range(cfg.n_frames):
        off = t if cfg.background == "drift" else 0
        img = canvas[off : off + cfg.height, off : off + cfg.width].copy()
        for track in static + moving:
            cover = track.inside(px, py, t)
            cx, _ = track.center(t)
            shade = 0.85 + 0.15 * np.sin(2 * math.pi * (px - cx) / track.stripe)
            img[cover] = (np.asarray(track.color) * shade[..., None])[cover]
        for track in moving:
            masks[t] |= track.inside(px, py, t)
        frames[t] = img
    frames8 = np.round(np.clip(frames, 0.0, 1.0) * 255).astype(np.uint8)
    return ClipSample(
        frames=(frames8.transpose(0, 3, 1, 2).astype(np.float32) / 255.0),
        masks=masks,
        clip_id=clip_id or f"synth{cfg.seed:06d}",
    )


def synthetic_split(
    n_clips: int,
    seed: int,
    base: Optional[SynthConfig] = None,
    max_objects: int = 3,
    prefix: str = "clip",
) -> list[ClipSample]:
    """Independent clips with per-clip seeds and 1..max_objects moving shapes."""
    base = base or SynthConfig()
    clips = []
    for i in range(n_clips):
        ss = np.random.SeedSequence([seed, i])
        clip_seed = int(ss.generate_state(1)[0])
        n_obj = 1 + int(np.random.default_rng(ss).integers(max_objects))
        cfg = replace(base, seed=clip_seed, n_objects=n_obj)
        clips.append(generate_clip(cfg, clip_id=f"{prefix}{i:04d}"))
    return clips


# --------------------------------------------------------------------------- PPM / PGM


def write_pnm(path, image: np.ndarray) -> None:
    """Binary P6 for ``H x W x 3`` uint8 images, P5 for ``H x W``."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    magic = b"P6" if image.ndim == 3 else b"P5"
    h, w = image.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pnm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DatasetError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: malformed header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise DatasetError(f"{path}: malformed header")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise DatasetError(f"{path}: maxval {maxval} unsupported (need 255)")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    if len(buf) - pos != n:
        raise DatasetError(f"{path}: expected {n} pixel bytes, found {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    return arr.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def write_mask_frames(directory, binary: np.ndarray) -> None:
    """One P5 file per frame, values {0, 255}, named ``%05d.pgm``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, mask in enumerate(binary):
        write_pnm(directory / f"{t:05d}.pgm", (np.asarray(mask) > 0).astype(np.uint8) * 255)


def write_clip(root, clip: ClipSample) -> Path:
    clip_dir = Path(root) / clip.clip_id
    frames_dir = clip_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    frames8 = np.round(clip.frames * 255).astype(np.uint8).transpose(0, 2, 3, 1)
    for t, frame in enumerate(frames8):
        write_pnm(frames_dir / f"{t:05d}.ppm", frame)
    write_mask_frames(clip_dir / "masks", clip.masks)
    return clip_dir


@dataclass
class DatasetIndex:
    root: Path
    clip_dirs: list[Path] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.clip_dirs)

    def __iter__(self) -> Iterator[ClipSample]:
        for i in range(len(self)):
            yield self.load(i)

    def load(self, i: int) -> ClipSample:
        clip_dir = self.clip_dirs[i]
        name = clip_dir.name
        frame_files = sorted((clip_dir / "frames").glob("*.ppm"))
        mask_files = sorted((clip_dir / "masks").glob("*.pgm"))
        if len(frame_files) != len(mask_files):
            raise DatasetError(f"clip {name}: {len(frame_files)} frames but {len(mask_files)} masks")
        if not frame_files:
            raise DatasetError(f"clip {name}: no frames")
        frames = [read_pnm(f) for f in frame_files]
        masks = [read_pnm(f) for f in mask_files]
        size = frames[0].shape[:2]
        for f, img in zip(frame_files + mask_files, frames + masks):
            if img.shape[:2] != size:
                raise DatasetError(f"clip {name}: {f.name} is {img.shape[1]}x{img.shape[0]}, expected {size[1]}x{size[0]}")
            if (img.ndim == 3) != (f.suffix == ".ppm"):
                raise DatasetError(f"clip {name}: {f.name} has the wrong channel count")
        frames_arr = np.stack(frames).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
        masks_arr = (np.stack(masks) > 127).astype(np.uint8)
        return ClipSample(frames_arr, masks_arr, name)


def load_dataset(root) -> DatasetIndex:
    """Index clip directories under ``root`` in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "frames").is_dir())
    return DatasetIndex(root, dirs)


def write_dataset(root, clips) -> DatasetIndex:
    for clip in clips:
        write_clip(root, clip)
    return load_dataset(root)
