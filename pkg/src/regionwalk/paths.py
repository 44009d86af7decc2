"""Construction of measurement paths in input space.

Image paths follow a circular trajectory: the image is shifted to A
points on a circle of radius r (in pixels) and consecutive shifts are
joined by straight segments, closing back to the first anchor. Shifts
are sub-pixel: the image is reflection-padded, translated bilinearly,
and cropped back, so every anchor keeps the original geometry. Noise
paths run the same construction on a synthetic uniform image; open paths
chain equally spaced shifts along one axis without closing.

Point loops are the low-dimensional counterpart used by the toy
experiments: a circle of anchors around a base point.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, FormatError
from . import modelio

log = logging.getLogger("regionwalk.paths")

RADIUS_DEFAULT = 4.0
ANCHORS_DEFAULT = 8


@dataclass
class PathSpec:
    """A polyline of anchors in input space; closed paths wrap around."""

    path_id: str
    anchors: list[np.ndarray]
    closed: bool = True
    radius: float | None = None
    anchor_count: int | None = None
    base_label: int | None = None

    def __post_init__(self):
        if len(self.anchors) < 2:
            raise InputError(f"path {self.path_id}: needs at least 2 anchors")
        if self.anchor_count is None:
            self.anchor_count = len(self.anchors)

    @property
    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        pairs = list(zip(self.anchors[:-1], self.anchors[1:]))
        if self.closed:
            pairs.append((self.anchors[-1], self.anchors[0]))
        return pairs


def _circle_shift(r: float, a: int, count: int) -> tuple[float, float]:
    """Shift vector r * (cos, sin) at angle 2 pi a / count.

    Quadrant angles come out exact ((r, 0), (0, r), ...) so axis-aligned
    anchors take the integer translation path.
    """
    if (4 * a) % count == 0:
        quadrant = (4 * a) // count % 4
        return [(r, 0.0), (0.0, r), (-r, 0.0), (0.0, -r)][quadrant]
    angle = 2.0 * math.pi * a / count
    return (r * math.cos(angle), r * math.sin(angle))


def translate_image(img: np.ndarray, shift: tuple[float, float], pad: int) -> np.ndarray:
    """Sub-pixel translation of a CHW image by (dx, dy) pixels.

    The image is reflection-padded by pad on each side, resampled
    bilinearly at the shifted grid, and cropped to the original size.
    Integer shifts reduce to exact copies of the padded grid (no
    arithmetic on pixel values), so a zero shift is the identity
    bit-for-bit. |dx|, |dy| must not exceed pad.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise InputError(f"image must be CHW, got shape {img.shape}")
    dx, dy = float(shift[0]), float(shift[1])
    if pad < 0:
        raise InputError(f"pad must be non-negative, got {pad}")
    if max(abs(dx), abs(dy)) > pad:
        raise InputError(f"shift {shift} exceeds pad {pad}")
    if not (math.isfinite(dx) and math.isfinite(dy)):
        raise InputError(f"shift {shift} is not finite")
    _, h, w = img.shape
    if pad == 0:
        padded = img
    else:
        if h < 2 or w < 2:
            raise InputError("image too small to reflection-pad")
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")

    # sampling grid: output pixel (y, x) reads padded position (y + pad - dy, x + pad - dx)
    if dx == int(dx) and dy == int(dy):
        y0 = pad - int(dy)
        x0 = pad - int(dx)
        return padded[:, y0:y0 + h, x0:x0 + w].copy()

    sy = np.arange(h, dtype=np.float64) + (pad - dy)
    sx = np.arange(w, dtype=np.float64) + (pad - dx)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy = sy - y0
    fx = sx - x0
    hi_y = padded.shape[1] - 1
    hi_x = padded.shape[2] - 1
    y0 = np.clip(y0, 0, hi_y)
    x0 = np.clip(x0, 0, hi_x)
    y1 = np.minimum(y0 + 1, hi_y)
    x1 = np.minimum(x0 + 1, hi_x)

    rows0 = padded[:, y0, :]
    rows1 = padded[:, y1, :]
    top = rows0[:, :, x0] * (1.0 - fx) + rows0[:, :, x1] * fx
    bot = rows1[:, :, x0] * (1.0 - fx) + rows1[:, :, x1] * fx
    return top * (1.0 - fy)[None, :, None] + bot * fy[None, :, None]


def _circular_anchors(img: np.ndarray, r: float, count: int, pad: int,
                      normalize: tuple[np.ndarray, np.ndarray] | None) -> list[np.ndarray] | None:
    anchors = []
    for a in range(count):
        dx, dy = _circle_shift(r, a, count)
        t = translate_image(img, (dx, dy), pad)
        if normalize is not None:
            mean, std = normalize
            t = (t - mean) / std
        anchors.append(t)
    for a in range(count):
        if np.array_equal(anchors[a], anchors[(a + 1) % count]):
            return None  # degenerate image, consecutive anchors coincide
    return anchors


def _default_pad(r: float, pad: int | None) -> int:
    return int(math.ceil(r)) if pad is None else int(pad)


def _as_norm(normalize):
    if normalize is None:
        return None
    mean = np.asarray(normalize[0], dtype=np.float64)
    std = np.asarray(normalize[1], dtype=np.float64)
    if np.any(std <= 0):
        raise InputError("normalization std must be positive")
    return mean, std


def build_circular_paths(images, r: float = RADIUS_DEFAULT, count: int = ANCHORS_DEFAULT,
                         pad: int | None = None, normalize=None, labels=None,
                         ids=None) -> list[PathSpec]:
    """One closed circular path per image.

    Anchor a is the image shifted by r * (cos, sin) of angle 2 pi a / A;
    the path starts at the a = 0 shift (r, 0), not at the raw image.
    Normalization statistics, when given, apply after translation.
    Degenerate images (consecutive anchors equal) are dropped with a
    warning.
    """
    if r <= 0:
        raise InputError(f"radius must be positive, got {r}")
    if count < 2:
        raise InputError(f"need at least 2 anchors, got {count}")
    pad = _default_pad(r, pad)
    norm = _as_norm(normalize)
    out = []
    for i, img in enumerate(images):
        pid = ids[i] if ids is not None else f"p{i:04d}"
        anchors = _circular_anchors(np.asarray(img, dtype=np.float64), r, count, pad, norm)
        if anchors is None:
            log.warning("dropping degenerate path %s (consecutive anchors equal)", pid)
            continue
        out.append(PathSpec(path_id=pid, anchors=anchors, closed=True, radius=r,
                            anchor_count=count,
                            base_label=None if labels is None else int(labels[i])))
    return out


def build_noise_paths(mean: np.ndarray, std: np.ndarray, r: float = RADIUS_DEFAULT,
                      count: int = ANCHORS_DEFAULT, seed: int = 0, n_paths: int = 1,
                      pad: int | None = None) -> list[PathSpec]:
    """Circular paths around synthetic uniform-noise images.

    Each base image is drawn i.i.d. per pixel from the uniform
    distribution with the given per-pixel mean and standard deviation
    (support mean +- sqrt(3) std). Deterministic in seed.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.ndim != 3 or mean.shape != std.shape:
        raise InputError(f"per-pixel stats must be matching CHW tensors, got {mean.shape} and {std.shape}")
    if np.any(std < 0):
        raise InputError("std must be non-negative")
    rng = np.random.default_rng(seed)
    half = math.sqrt(3.0) * std
    images = [mean + half * rng.uniform(-1.0, 1.0, size=mean.shape) for _ in range(n_paths)]
    paths = build_circular_paths(images, r=r, count=count, pad=pad,
                                 ids=[f"noise{i:04d}" for i in range(n_paths)])
    return paths


def build_open_paths(images, shift_px: float = 1.0, steps: int = 3,
                     pad: int | None = None, labels=None, ids=None) -> list[PathSpec]:
    """Open paths chaining steps+1 shifts of shift_px pixels along x."""
    if steps < 1:
        raise InputError(f"need at least 1 step, got {steps}")
    if shift_px == 0:
        raise InputError("shift_px must be non-zero")
    pad = _default_pad(abs(shift_px) * steps, pad)
    out = []
    for i, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        pid = ids[i] if ids is not None else f"open{i:04d}"
        anchors = [translate_image(img, (k * shift_px, 0.0), pad) for k in range(steps + 1)]
        if any(np.array_equal(a, b) for a, b in zip(anchors[:-1], anchors[1:])):
            log.warning("dropping degenerate path %s (consecutive anchors equal)", pid)
            continue
        out.append(PathSpec(path_id=pid, anchors=anchors, closed=False,
                            radius=None, anchor_count=steps + 1,
                            base_label=None if labels is None else int(labels[i])))
    return out


def build_point_loops(points, radius: float, count: int = 6, labels=None,
                      ids=None) -> list[PathSpec]:
    """Closed loops of anchors on a circle around each low-dimensional point."""
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    if count < 2:
        raise InputError(f"need at least 2 anchors, got {count}")
    out = []
    for i, p in enumerate(points):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (2,):
            raise InputError(f"point loops need 2-d points, got shape {p.shape}")
        pid = ids[i] if ids is not None else f"loop{i:04d}"
        anchors = []
        for a in range(count):
            dx, dy = _circle_shift(radius, a, count)
            anchors.append(p + np.array([dx, dy]))
        out.append(PathSpec(path_id=pid, anchors=anchors, closed=True, radius=radius,
                            anchor_count=count,
                            base_label=None if labels is None else int(labels[i])))
    return out


def save_paths(paths: list[PathSpec], out_dir) -> Path:
    """Write anchors as tensor files plus a JSON index; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for p in paths:
        files = []
        for a, anchor in enumerate(p.anchors):
            name = f"{p.path_id}_a{a:03d}.rten"
            modelio.write_tensor(out_dir / name, anchor)
            files.append(name)
        index.append({
            "path_id": p.path_id,
            "anchors": files,
            "r": p.radius,
            "A": p.anchor_count,
            "closed": p.closed,
            "base_label": p.base_label,
        })
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps({"paths": index}, indent=1) + "\n")
    return index_path


def load_paths(index_path) -> list[PathSpec]:
    """Read a path index and its anchor tensors back."""
    index_path = Path(index_path)
    try:
        index = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read path index: {e}") from e
    if "paths" not in index:
        raise FormatError(f"{index_path}: not a path index")
    out = []
    for entry in index["paths"]:
        anchors = [modelio.read_tensor(index_path.parent / f) for f in entry["anchors"]]
        out.append(PathSpec(path_id=entry["path_id"], anchors=anchors,
                            closed=bool(entry["closed"]), radius=entry.get("r"),
                            anchor_count=entry.get("A"),
                            base_label=entry.get("base_label")))
    return out
