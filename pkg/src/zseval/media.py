"""Media preparation: uniform video frame sampling and multi-view depth rendering.

Videos become T frames picked at the centers of T equal temporal segments.
Point clouds become view_count orthographic depth maps from cameras stepping
around the vertical axis (azimuth_step_deg apart, fixed elevation), after the
cloud is centered on its centroid and scaled to the unit bounding sphere.
Each point splats to a single pixel through a nearest-wins z-buffer; depth is
mapped per view to [0, 255] (nearest point brightest) and empty pixels are 0.
"""

from __future__ import annotations

import io
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .manifest import SampleRecord

FRAME_SUFFIXES = {".png", ".jpg", ".jpeg"}

DEFAULT_DECODER = ("ffmpeg", "-v", "error", "-i", "{input}", "{outdir}/%06d.png")


class MediaError(Exception):
    """Undecodable or empty media source."""


class DegenerateCloud(MediaError):
    """All points coincide; the bounding sphere has zero radius."""


@dataclass(frozen=True)
class FrameSamplerConfig:
    frame_count: int = 8

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


@dataclass(frozen=True)
class RenderConfig:
    view_count: int = 6
    azimuth_step_deg: float = 30.0
    elevation_deg: float = 30.0
    image_size: int = 224
    projection: str = "orthographic"

    def __post_init__(self):
        if self.view_count < 1:
            raise ValueError("view_count must be >= 1")
        if self.view_count * self.azimuth_step_deg > 360.0:
            raise ValueError("view_count * azimuth_step_deg must not exceed 360")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if not -90.0 < self.elevation_deg < 90.0:
            raise ValueError("elevation_deg must lie strictly between -90 and 90")
        if self.projection != "orthographic":
            raise ValueError("only orthographic projection is implemented")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3) float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (N, 3) array")
        if not np.isfinite(pts).all():
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)


def sample_frame_indices(total_frames: int, frame_count: int) -> list[int]:
    """Center-of-segment indices: floor((2i+1)*N / (2T)) for i in 0..T-1.

    Non-decreasing, within [0, N); repeats when N < T.
    """
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    return [
        ((2 * i + 1) * total_frames) // (2 * frame_count) for i in range(frame_count)
    ]


def _camera_basis(azimuth_deg: float, elevation_deg: float):
    """Right/up/forward unit vectors for a camera orbiting the origin (y up)."""
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    direction = np.array(
        [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
    )
    forward = -direction
    right = np.array([math.cos(az), 0.0, -math.sin(az)])
    up = np.cross(right, forward)
    return right, up, forward


def render_depth_views(cloud: PointCloud, cfg: RenderConfig) -> list[np.ndarray]:
    """Render view_count orthographic depth maps of a unit-normalized cloud.

    View k places the camera at azimuth k*azimuth_step_deg and the configured
    elevation. Returns uint8 arrays of shape (image_size, image_size).
    """
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius < 1e-12:
        raise DegenerateCloud("all points coincide; cannot scale to unit sphere")
    unit = centered / radius

    size = cfg.image_size
    views: list[np.ndarray] = []
    for k in range(cfg.view_count):
        right, up, forward = _camera_basis(k * cfg.azimuth_step_deg, cfg.elevation_deg)
        cols = np.clip(
            np.floor((unit @ right + 1.0) * 0.5 * size).astype(np.int64), 0, size - 1
        )
        rows = np.clip(
            np.floor((1.0 - unit @ up) * 0.5 * size).astype(np.int64), 0, size - 1
        )
        depth = unit @ forward
        zbuf = np.full((size, size), np.inf)
        np.minimum.at(zbuf, (rows, cols), depth)
        occupied = np.isfinite(zbuf)
        img = np.zeros((size, size), dtype=np.uint8)
        near = zbuf[occupied].min()
        far = zbuf[occupied].max()
        if far - near < 1e-12:
            img[occupied] = 255
        else:
            img[occupied] = np.rint(
                255.0 * (far - zbuf[occupied]) / (far - near)
            ).astype(np.uint8)
        views.append(img)
    return views


def load_off(path: str | Path) -> PointCloud:
    """Read the vertices of an OFF file (faces ignored).

    Accepts both the standard two-line header and the common quirk of counts
    glued onto the OFF line.
    """
    tokens: list[str] = []
    for raw in Path(path).read_text(encoding="utf-8", errors="replace").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or not tokens[0].upper().startswith("OFF"):
        raise MediaError(f"{path}: missing OFF header")
    rest = tokens[0][3:]
    tokens = ([rest] if rest else []) + tokens[1:]
    if len(tokens) < 3:
        raise MediaError(f"{path}: missing counts line")
    try:
        n_vertices = int(tokens[0])
    except ValueError:
        raise MediaError(f"{path}: bad vertex count {tokens[0]!r}") from None
    coords = tokens[3 : 3 + 3 * n_vertices]
    if n_vertices < 1 or len(coords) < 3 * n_vertices:
        raise MediaError(f"{path}: truncated vertex list")
    try:
        pts = np.array([float(v) for v in coords], dtype=np.float64).reshape(-1, 3)
    except ValueError:
        raise MediaError(f"{path}: non-numeric vertex data") from None
    return PointCloud(pts)


def _decode_video(src: Path, outdir: Path, decoder_cmd: Sequence[str]) -> None:
    cmd = [
        part.replace("{input}", str(src)).replace("{outdir}", str(outdir))
        for part in decoder_cmd
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except OSError as exc:
        raise MediaError(f"decoder {cmd[0]!r} failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise MediaError(f"decoder failed on {src}: {proc.stderr.strip()[:500]}")


def _frame_files(directory: Path) -> list[Path]:
    return sorted(
        p
        for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES
    )


def load_frames(
    sample: SampleRecord,
    cfg: FrameSamplerConfig,
    decoder_cmd: Sequence[str] = DEFAULT_DECODER,
) -> list[Image.Image]:
    """Load T uniformly sampled frames from a frame directory or a video file."""
    src = Path(sample.source_path)
    if src.is_dir():
        return _frames_from_dir(src, cfg)
    if src.is_file():
        with tempfile.TemporaryDirectory(prefix="zseval-frames-") as tmp:
            _decode_video(src, Path(tmp), decoder_cmd)
            return _frames_from_dir(Path(tmp), cfg)
    raise MediaError(f"media source {src} does not exist")


def _frames_from_dir(directory: Path, cfg: FrameSamplerConfig) -> list[Image.Image]:
    files = _frame_files(directory)
    if not files:
        raise MediaError(f"no frames found in {directory}")
    indices = sample_frame_indices(len(files), cfg.frame_count)
    frames = []
    for i in indices:
        with Image.open(files[i]) as im:
            frames.append(im.convert("RGB"))
    return frames


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def save_grayscale_png(array: np.ndarray, path: str | Path) -> None:
    Image.fromarray(array.astype(np.uint8), mode="L").save(path)
