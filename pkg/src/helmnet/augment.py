"""Crop, rotation and brightness transforms and the dataset-expansion pipeline."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CLASSES, Sample, resize_bilinear, write_ppm


def crop(image: np.ndarray, fraction: float, rng: np.random.Generator | None = None,
         offset: tuple[int, int] | None = None) -> np.ndarray:
    """Cut a window ``ceil((1-fraction)*side)`` per dimension, resize it back.

    ``offset`` is (x, y) of the window's top-left corner; drawn from ``rng``
    when not given.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"crop fraction must lie in [0, 1), got {fraction}")
    h, w, _ = image.shape
    cw, ch = math.ceil((1 - fraction) * w), math.ceil((1 - fraction) * h)
    if cw < 1 or ch < 1:
        raise ValueError(f"crop window {cw}x{ch} is degenerate")
    if offset is None:
        if rng is None:
            raise ValueError("crop needs either an rng or an explicit offset")
        offset = (int(rng.integers(0, w - cw + 1)), int(rng.integers(0, h - ch + 1)))
    x0, y0 = offset
    if not (0 <= x0 <= w - cw and 0 <= y0 <= h - ch):
        raise ValueError(f"crop offset {offset} outside the image")
    return resize_bilinear(image[y0:y0 + ch, x0:x0 + cw], w, h)


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) about the centre.

    Nearest-neighbour inverse mapping; pixels mapping outside the source are
    black.
    """
    if abs(degrees) > 180:
        raise ValueError(f"|degrees| must be <= 180, got {degrees}")
    if degrees == 0:
        return image.copy()
    h, w, _ = image.shape
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    sx = np.floor(cx + dx * cos - dy * sin + 0.5).astype(np.int64)
    sy = np.floor(cy + dx * sin + dy * cos + 0.5).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(image)
    out[inside] = image[sy[inside], sx[inside]]
    return out


def brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise ValueError(f"brightness factor must be positive, got {factor}")
    if factor == 1.0:
        return image.copy()
    return np.clip(np.rint(image.astype(np.float64) * factor), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class AugmentOp:
    """One transform. ``random_sign`` flips the parameter's sign (rotate) or
    its offset from 1 (brightness) with probability 1/2 per image."""

    kind: str
    parameter: float
    random_sign: bool = False

    def __post_init__(self):
        if self.kind not in ("crop", "rotate", "brightness"):
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.kind == "crop" and not 0 < self.parameter < 1:
            raise ValueError("crop fraction must lie in (0, 1)")
        if self.kind == "rotate" and abs(self.parameter) > 180:
            raise ValueError("rotation must be within +-180 degrees")
        if self.kind == "brightness" and not self.random_sign and self.parameter <= 0:
            raise ValueError("brightness factor must be positive")
        if self.kind == "brightness" and self.random_sign and not 0 < self.parameter < 1:
            raise ValueError("random-sign brightness takes a delta in (0, 1)")

    def resolve(self, rng: np.random.Generator) -> float:
        """The concrete parameter for one image."""
        if not self.random_sign:
            return self.parameter
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if self.kind == "brightness":
            return 1.0 + sign * self.parameter
        return sign * self.parameter

    def apply(self, image, value: float, rng):
        if self.kind == "crop":
            return crop(image, value, rng)
        if self.kind == "rotate":
            return rotate(image, value)
        return brightness(image, value)


@dataclass
class AugmentPlan:
    ops: list = field(default_factory=list)
    include_original: bool = True
    seed: int = 0


def default_plan(seed: int = 0) -> AugmentPlan:
    return AugmentPlan([
        AugmentOp("crop", 0.35),
        AugmentOp("rotate", 30, random_sign=True),
        AugmentOp("rotate", 20, random_sign=True),
        AugmentOp("brightness", 0.35, random_sign=True),
        AugmentOp("brightness", 0.28, random_sign=True),
    ], include_original=True, seed=seed)


def parse_plan(text: str, seed: int = 0) -> AugmentPlan:
    """Parse a plan file.

    One op per line: ``crop 0.35``, ``rotate -30``, ``brightness 1.28``.
    A ``+-`` or ``±`` prefix draws the sign per image (``rotate +-30``,
    ``brightness +-0.35`` for a factor of 1 +- 0.35). A line ``original``
    keeps the untransformed image. ``#`` starts a comment.
    """
    ops, include_original = [], False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts == ["original"]:
            include_original = True
            continue
        if len(parts) != 2:
            raise ValueError(f"plan line {lineno}: expected '<op> <value>', got {raw!r}")
        kind, value = parts
        random_sign = value.startswith(("+-", "±"))
        value = value.lstrip("+-±") if random_sign else value
        try:
            ops.append(AugmentOp(kind, float(value), random_sign))
        except ValueError as exc:
            raise ValueError(f"plan line {lineno}: {exc}") from None
    return AugmentPlan(ops, include_original, seed)


def _is_degenerate(image: np.ndarray) -> bool:
    return bool((image == image.reshape(-1, 3)[0]).all())


def _format_value(v: float) -> str:
    return f"{v:g}"


def expand_dataset(samples: list, plan: AugmentPlan, threads: int = 1) -> list:
    """Apply every op of ``plan`` to every sample.

    Output order is (source index, op index) with the original first. Each
    output's ``tag`` records the op, e.g. ``rotate--30``; originals have an
    empty tag. Constant-colour results are dropped as degenerate.
    """
    if not samples:
        raise ValueError("expand_dataset needs at least one sample")

    def task(k):
        src = samples[k]
        rng = np.random.default_rng([plan.seed, k])
        out = [Sample(src.image, src.label, src.source_path, "")] if plan.include_original else []
        for op in plan.ops:
            value = op.resolve(rng)
            img = op.apply(src.image, value, rng)
            if _is_degenerate(img) and not _is_degenerate(src.image):
                continue
            out.append(Sample(img, src.label, src.source_path, f"{op.kind}-{_format_value(value)}"))
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        chunks = list(pool.map(task, range(len(samples))))
    return [s for chunk in chunks for s in chunk]


def write_corpus(samples: list, out_dir) -> list[Path]:
    """Mirror the class tree; files named ``<source-stem>__<tag>.ppm``."""
    out_dir = Path(out_dir)
    written = []
    for cls in CLASSES:
        (out_dir / cls).mkdir(parents=True, exist_ok=True)
    for s in samples:
        stem = Path(s.source_path).stem
        name = f"{stem}__{s.tag}.ppm" if s.tag else f"{stem}.ppm"
        path = out_dir / CLASSES[s.label] / name
        write_ppm(path, s.image)
        written.append(path)
    return written
