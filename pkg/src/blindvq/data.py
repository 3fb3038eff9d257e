"""Clip storage and synthetic corpus generation.

Clips live on disk as directories of binary P6 PPM frames
(``frame_000001.ppm``, maxval 255) next to a CSV manifest with header
``id,path,frames,width,height,mos``.  The synthetic corpus renders
procedural moving patterns, applies one sharpness-related distortion per
clip (blur, noise, or contrast reduction at a random level), and labels
each clip with pseudo-MOS = 5 - 4 * level.  Everything is driven by one
seed and regenerates byte-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor

__all__ = [
    "ManifestError",
    "FrameFormatError",
    "ManifestRecord",
    "VideoClip",
    "DistortionSpec",
    "DISTORTION_KINDS",
    "MANIFEST_HEADER",
    "load_manifest",
    "write_manifest",
    "read_frames",
    "write_clip_frames",
    "read_ppm",
    "write_ppm",
    "split",
    "distort_image",
    "synth_corpus",
    "synth_stills",
]

MANIFEST_HEADER = "id,path,frames,width,height,mos"
DISTORTION_KINDS = ("gaussian_blur", "gaussian_noise", "contrast_reduction")


class ManifestError(ValueError):
    """Malformed manifest file."""


class FrameFormatError(ValueError):
    """Frame file missing or not plain binary P6 with maxval 255."""


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str  # frame directory, relative to the corpus root
    frames: int
    width: int
    height: int
    mos: float


@dataclass
class VideoClip:
    """Frame sequence (T, 3, H, W) with values in [0, 1] plus its label."""

    id: str
    frames: Tensor
    mos: float | None = None

    def __post_init__(self):
        t = self.frames.shape[0]
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"clip frames must be (T, 3, H, W), got {self.frames.shape}")
        if t < 2 or t % 2 != 0:
            raise ValueError(f"clip length must be even and >= 2, got {t}")
        if self.mos is not None and not 1.0 <= self.mos <= 5.0:
            raise ValueError(f"mos must lie in [1, 5], got {self.mos}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion: kind, severity level in [0, 1] (0 = identity), seed."""

    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"distortion level must lie in [0, 1], got {self.level}")


# -- PPM frames ---------------------------------------------------------------


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary P6 with maxval 255."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise FrameFormatError(f"write_ppm wants (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 file with maxval 255 into an (H, W, 3) uint8 array."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise FrameFormatError(f"frame file missing: {path}") from None
    if raw[:2] != b"P6":
        raise FrameFormatError(f"{path}: bad magic bytes {raw[:2]!r}, expected P6")
    # header: magic, width, height, maxval as whitespace-separated tokens
    pos, tokens = 2, []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameFormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FrameFormatError(f"{path}: non-numeric header fields {tokens}") from None
    if maxval != 255:
        raise FrameFormatError(f"{path}: unsupported maxval {maxval}, only 255 is handled")
    need = w * h * 3
    body = raw[pos : pos + need]
    if len(body) != need:
        raise FrameFormatError(f"{path}: short pixel data, wanted {need} bytes got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def _frame_name(index: int) -> str:
    return f"frame_{index:06d}.ppm"


def read_frames(root: str | Path, record: ManifestRecord) -> VideoClip:
    """Load a clip's frames, scale to [0, 1], and order by frame index."""
    clip_dir = Path(root) / record.path
    frames = np.empty((record.frames, 3, record.height, record.width), dtype=np.float64)
    for i in range(record.frames):
        img = read_ppm(clip_dir / _frame_name(i + 1))
        if img.shape[:2] != (record.height, record.width):
            raise FrameFormatError(
                f"{clip_dir / _frame_name(i + 1)}: frame is {img.shape[1]}x{img.shape[0]}, "
                f"manifest says {record.width}x{record.height}"
            )
        frames[i] = np.moveaxis(img, 2, 0) / 255.0
    return VideoClip(id=record.id, frames=Tensor(frames), mos=record.mos)


def write_clip_frames(clip_dir: str | Path, frames: np.ndarray) -> None:
    """Quantize (T, 3, H, W) floats in [0, 1] to uint8 PPM frame files."""
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        img = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
        write_ppm(clip_dir / _frame_name(i + 1), np.moveaxis(img, 0, 2))


# -- manifest -----------------------------------------------------------------


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> None:
    lines = [MANIFEST_HEADER]
    for r in records:
        lines.append(f"{r.id},{r.path},{r.frames},{r.width},{r.height},{r.mos:.10g}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse and validate the corpus manifest; errors name the row."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    lines = [ln for ln in text.split("\n") if ln.strip() != ""]
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(
            f"manifest header must be {MANIFEST_HEADER!r}, got {lines[0].strip() if lines else ''!r}"
        )
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for row_no, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != 6:
            raise ManifestError(f"row {row_no}: expected 6 columns, got {len(parts)}")
        cid, cpath, s_frames, s_w, s_h, s_mos = (p.strip() for p in parts)
        if cid == "":
            raise ManifestError(f"row {row_no}: empty id")
        if cid in seen:
            raise ManifestError(f"row {row_no}: duplicate id {cid!r}")
        seen.add(cid)
        try:
            frames, width, height = int(s_frames), int(s_w), int(s_h)
            mos = float(s_mos)
        except ValueError:
            raise ManifestError(f"row {row_no}: non-numeric field in {line!r}") from None
        if frames < 2 or frames % 2 != 0:
            raise ManifestError(f"row {row_no}: frame count must be even and >= 2, got {frames}")
        if width < 1 or height < 1:
            raise ManifestError(f"row {row_no}: bad frame size {width}x{height}")
        if not 1.0 <= mos <= 5.0:
            raise ManifestError(f"row {row_no}: mos {mos} outside [1, 5]")
        records.append(ManifestRecord(cid, cpath, frames, width, height, mos))
    return records


# -- split --------------------------------------------------------------------


def split(
    records: Sequence[ManifestRecord],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> dict[str, str]:
    """Deterministic seeded shuffle into train/val/test.

    train = round(r0*n), val = round(r1*n) (half-up), test takes the rest;
    every id lands in exactly one part.
    """
    n = len(records)
    if n < 3:
        raise ValueError(f"need at least 3 records to split, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    ids = [r.id for r in records]
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratios[0] * n + 0.5))
    n_val = int(math.floor(ratios[1] * n + 0.5))
    assignment: dict[str, str] = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            part = "train"
        elif pos < n_train + n_val:
            part = "val"
        else:
            part = "test"
        assignment[ids[idx]] = part
    return assignment


# -- distortions --------------------------------------------------------------


def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _blur_axis(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = len(taps) // 2
    pads = [(0, 0)] * img.ndim
    pads[axis] = (radius, radius)
    padded = np.pad(img, pads, mode="edge")
    out = np.zeros_like(img)
    for offset, w in enumerate(taps):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(offset, offset + img.shape[axis])
        out += w * padded[tuple(sl)]
    return out


def distort_image(image: np.ndarray | Tensor, spec: DistortionSpec) -> np.ndarray:
    """Apply one distortion to a (3, H, W) image in [0, 1].

    gaussian_blur: separable kernel, sigma = 3 * level, edge-replicate
    padding.  gaussian_noise: seeded additive N(0, (0.2*level)^2), clamped.
    contrast_reduction: 0.5 + (1 - level) * (x - 0.5).  Level 0 returns a
    bit-identical copy for every kind.
    """
    x = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"distort_image wants (3, H, W), got {x.shape}")
    if spec.level == 0.0:
        return x.copy()
    if spec.kind == "gaussian_blur":
        taps = _gaussian_taps(3.0 * spec.level)
        return _blur_axis(_blur_axis(x, taps, axis=1), taps, axis=2)
    if spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        noisy = x + rng.normal(0.0, 0.2 * spec.level, size=x.shape)
        return np.clip(noisy, 0.0, 1.0)
    # contrast_reduction
    return 0.5 + (1.0 - spec.level) * (x - 0.5)


# -- synthetic corpus ---------------------------------------------------------


def _render_pattern(rng: np.random.Generator, t_frames: int, size: int) -> np.ndarray:
    """Procedural moving pattern (T, 3, size, size) in [0, 1]: drifting
    sinusoid gratings plus a moving bright rectangle for sharp edges."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    out = np.empty((t_frames, 3, size, size), dtype=np.float64)
    n_waves = 3
    freq = rng.uniform(2.0, max(3.0, size / 6.0), size=n_waves)
    theta = rng.uniform(0.0, math.pi, size=n_waves)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(n_waves, 3))
    speed = rng.uniform(-0.6, 0.6, size=n_waves)
    amp = rng.uniform(0.08, 0.16, size=n_waves)
    rect_w = max(2, size // 5)
    rect_x0 = rng.uniform(0.1, 0.6)
    rect_y0 = rng.uniform(0.1, 0.6)
    rect_vx = rng.uniform(-0.04, 0.04)
    rect_vy = rng.uniform(-0.04, 0.04)
    for t in range(t_frames):
        frame = np.full((3, size, size), 0.5)
        for w in range(n_waves):
            carrier = 2.0 * math.pi * freq[w] * (
                xx * math.cos(theta[w]) + yy * math.sin(theta[w])
            )
            for c in range(3):
                frame[c] += amp[w] * np.sin(carrier + phase[w, c] + speed[w] * t)
        cx = (rect_x0 + rect_vx * t) % 0.8
        cy = (rect_y0 + rect_vy * t) % 0.8
        x0, y0 = int(cx * size), int(cy * size)
        frame[:, y0 : y0 + rect_w, x0 : x0 + rect_w] += 0.25
        out[t] = np.clip(frame, 0.0, 1.0)
    return out


def synth_corpus(
    out_dir: str | Path,
    n_clips: int = 54,
    frames_per_clip: int = 8,
    size: int = 32,
    seed: int = 0,
) -> Path:
    """Generate a distorted synthetic corpus; returns the manifest path.

    One distortion kind per clip (cycling blur / noise / contrast), level
    drawn uniformly from [0, 1], pseudo-MOS = 5 - 4 * level.
    """
    if frames_per_clip < 2 or frames_per_clip % 2 != 0:
        raise ValueError(f"frames_per_clip must be even and >= 2, got {frames_per_clip}")
    if n_clips < 1:
        raise ValueError(f"n_clips must be >= 1, got {n_clips}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_clips)
    records = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        cid = f"clip_{i:03d}"
        base = _render_pattern(rng, frames_per_clip, size)
        kind = DISTORTION_KINDS[i % len(DISTORTION_KINDS)]
        level = float(rng.uniform(0.0, 1.0))
        frame_seeds = rng.integers(0, 2**31 - 1, size=frames_per_clip)
        distorted = np.stack(
            [
                distort_image(base[t], DistortionSpec(kind, level, seed=int(frame_seeds[t])))
                for t in range(frames_per_clip)
            ]
        )
        write_clip_frames(out_dir / cid, distorted)
        records.append(
            ManifestRecord(
                id=cid,
                path=cid,
                frames=frames_per_clip,
                width=size,
                height=size,
                mos=5.0 - 4.0 * level,
            )
        )
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, records)
    return manifest


def synth_stills(
    n_images: int = 48, size: int = 32, seed: int = 0
) -> list[tuple[np.ndarray, float]]:
    """Distorted still images with pseudo-MOS labels, for pretraining the
    sharpness stream.  Returns (image (3, size, size), label) pairs."""
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    children = np.random.SeedSequence(seed).spawn(n_images)
    stills = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        base = _render_pattern(rng, 1, size)[0]
        kind = DISTORTION_KINDS[i % len(DISTORTION_KINDS)]
        level = float(rng.uniform(0.0, 1.0))
        img = distort_image(base, DistortionSpec(kind, level, seed=int(rng.integers(0, 2**31))))
        stills.append((img, 5.0 - 4.0 * level))
    return stills
