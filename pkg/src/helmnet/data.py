"""Image I/O, corpus loading, stratified splitting, batching, synthetic data.

Images are ``uint8`` arrays of shape (H, W, 3), row-major RGB.
"""

from __future__ import annotations

import csv
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CLASSES = ("no_helmet", "helmet")  # label index == position
DEFAULT_RATIOS = (0.70, 0.20, 0.10)
SUBSETS = ("train", "val", "test")


class PPMError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedFormat(PPMError):
    pass


class CorpusError(ValueError):
    pass


# -- PPM ---------------------------------------------------------------------

_WS = b" \t\n\r\v\f"


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    while True:
        while pos < len(buf) and buf[pos] in _WS:
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and buf[pos] not in _WS and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMError("truncated header", start)
    return buf[start:pos], start, pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode a binary (P6) PPM with maxval 255."""
    if buf[:2] != b"P6":
        raise PPMError(f"bad magic {buf[:2]!r}, expected b'P6'", 0)
    pos = 2
    if pos >= len(buf) or (buf[pos] not in _WS and buf[pos:pos + 1] != b"#"):
        raise PPMError("missing whitespace after magic", pos)
    values = []
    for what in ("width", "height", "maxval"):
        tok, tok_start, pos = _header_token(buf, pos)
        if not tok.isdigit():
            raise PPMError(f"{what} is not a decimal integer: {tok!r}", tok_start)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PPMError(f"non-positive dimensions {width}x{height}", pos)
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} unsupported; only 8-bit (255) images", pos)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise PPMError("missing single whitespace before raster", pos)
    pos += 1
    need = width * height * 3
    if len(buf) - pos < need:
        raise PPMError(f"truncated raster: need {need} bytes, have {len(buf) - pos}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    image = check_image(image)
    h, w, _ = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + image.tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, image: np.ndarray):
    Path(path).write_bytes(encode_ppm(image))


def check_image(image: np.ndarray) -> np.ndarray:
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {image.dtype} {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image dimensions must be positive")
    return image


# -- resizing ----------------------------------------------------------------


def _axis_weights(src: int, dst: int):
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize, half-pixel centres, edge-clamped sampling."""
    if width < 1 or height < 1:
        raise ValueError("target dimensions must be >= 1")
    h, w, _ = image.shape
    if (h, w) == (height, width):
        return image.copy()
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# -- corpus ------------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray
    label: int
    source_path: str
    tag: str = ""


def _load_one(path: Path, size):
    img = read_ppm(path)
    if size is not None:
        img = resize_bilinear(img, size, size)
    return img


def load_corpus(root, size: int | None = 224, threads: int = 1, errors: list | None = None):
    """Load ``root/helmet/*.ppm`` and ``root/no_helmet/*.ppm``.

    Files that fail to decode are skipped and appended to ``errors`` as
    (path, reason); without an ``errors`` list they are logged instead.
    Order is byte-wise sorted by path within each class, no_helmet first.
    """
    root = Path(root)
    paths: list[tuple[Path, int]] = []
    for label, cls in enumerate(CLASSES):
        d = root / cls
        if not d.is_dir():
            raise CorpusError(f"missing class directory {d}")
        files = sorted((p for p in d.iterdir() if p.suffix.lower() == ".ppm" and p.is_file()),
                       key=lambda p: os.fsencode(p.name))
        if not files:
            raise CorpusError(f"class {cls!r} has no images in {d}")
        paths.extend((p, label) for p in files)

    def task(item):
        path, _ = item
        try:
            return _load_one(path, size), None
        except (OSError, ValueError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(task, paths))
    samples = []
    for (path, label), (img, err) in zip(paths, results):
        if err is not None:
            if errors is not None:
                errors.append((str(path), err))
            else:
                log.warning("skipping %s: %s", path, err)
            continue
        samples.append(Sample(img, label, str(path)))
    if not samples:
        raise CorpusError(f"no decodable images under {root}")
    for label, cls in enumerate(CLASSES):
        if not any(s.label == label for s in samples):
            raise CorpusError(f"class {cls!r} has no decodable images")
    return samples


# -- splitting ---------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int
    ratios: tuple = DEFAULT_RATIOS

    def subset(self, name: str) -> list:
        return {"train": self.train, "val": self.validation, "validation": self.validation,
                "test": self.test}[name]


def apportion(total: int, ratios) -> list[int]:
    """Largest-remainder rounding of ``total * ratios``; ties go to the earlier subset."""
    exact = [total * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[: total - sum(counts)]:
        counts[k] += 1
    return counts


def _class_table(class_sizes: list[int], totals: list[int], ratios) -> list[list[int]]:
    """Per-class subset counts: each within 1 of size*ratio, rows and columns exact."""
    table = [[int(np.floor(n * r)) for r in ratios] for n in class_sizes]
    row_need = [n - sum(row) for n, row in zip(class_sizes, table)]
    col_need = [t - sum(table[c][s] for c in range(len(class_sizes))) for s, t in enumerate(totals)]
    # Greedy degree-sequence fill: largest column demand first, rows with
    # the largest remaining demand (then largest fractional part) first.
    for s in sorted(range(len(ratios)), key=lambda s: -col_need[s]):
        rows = sorted(range(len(class_sizes)),
                      key=lambda c: (-row_need[c], -(class_sizes[c] * ratios[s] - table[c][s]), c))
        for c in rows[: col_need[s]]:
            if row_need[c] <= 0:
                raise CorpusError("cannot stratify split with these class sizes")
            table[c][s] += 1
            row_need[c] -= 1
        col_need[s] = 0
    if any(row_need):
        raise CorpusError("cannot stratify split with these class sizes")
    return table


def validate_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError(f"need 3 ratios (train, val, test), got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    return ratios


def stratified_split(samples: list, ratios=DEFAULT_RATIOS, seed: int = 0) -> DatasetSplit:
    ratios = validate_ratios(ratios)
    labels = sorted({s.label for s in samples})
    by_class = {lab: [i for i, s in enumerate(samples) if s.label == lab] for lab in labels}
    totals = apportion(len(samples), ratios)
    if any(t == 0 for t, r in zip(totals, ratios) if r > 0):
        raise CorpusError(f"{len(samples)} samples too few for ratios {ratios}: subset sizes {totals}")
    table = _class_table([len(by_class[lab]) for lab in labels], totals, ratios)
    parts: list[list[int]] = [[], [], []]
    for lab, row in zip(labels, table):
        idx = np.asarray(by_class[lab])
        np.random.default_rng([seed, lab]).shuffle(idx)
        start = 0
        for s, k in enumerate(row):
            parts[s].extend(idx[start:start + k].tolist())
            start += k
    train, val, test = ([samples[i] for i in sorted(p)] for p in parts)
    return DatasetSplit(train, val, test, seed, ratios)


def write_manifest(split: DatasetSplit, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "subset", "seed"])
        for name, subset in zip(SUBSETS, (split.train, split.validation, split.test)):
            for s in subset:
                w.writerow([s.source_path, s.label, name, split.seed])


def read_manifest(path, size: int | None = 224) -> DatasetSplit:
    parts = {name: [] for name in SUBSETS}
    seed = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label", "subset", "seed"]:
            raise CorpusError(f"{path}: bad manifest header {reader.fieldnames}")
        for row in reader:
            if row["subset"] not in parts:
                raise CorpusError(f"{path}: unknown subset {row['subset']!r}")
            img = _load_one(Path(row["path"]), size)
            parts[row["subset"]].append(Sample(img, int(row["label"]), row["path"]))
            seed = int(row["seed"])
    n = sum(map(len, parts.values()))
    ratios = tuple(len(parts[k]) / n for k in SUBSETS) if n else DEFAULT_RATIOS
    return DatasetSplit(parts["train"], parts["val"], parts["test"], seed, ratios)


# -- batching ----------------------------------------------------------------


@dataclass
class Batch:
    inputs: np.ndarray  # [N, 3, H, W] float32 in [0, 1]
    labels: np.ndarray


def to_input(images) -> np.ndarray:
    arr = np.stack(images).astype(np.float32) / np.float32(255.0)
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def batches(samples: list, batch_size: int, seed: int | None = None, epoch: int = 0):
    """Yield batches; shuffled by (seed, epoch) unless ``seed`` is None."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if seed is not None:
        np.random.default_rng([seed, epoch]).shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield Batch(to_input([s.image for s in chunk]),
                    np.array([s.label for s in chunk], dtype=np.int64))


# -- synthetic corpus --------------------------------------------------------

_HELMET_COLOURS = np.array([[250, 215, 30], [255, 140, 10], [245, 245, 240], [230, 40, 30],
                            [40, 170, 60], [30, 110, 230]], dtype=np.float64)
_SKIN = np.array([[240, 200, 170], [200, 150, 110], [150, 100, 70], [100, 65, 45]], dtype=np.float64)
_HAIR = np.array([[30, 25, 20], [90, 60, 30], [160, 130, 80], [60, 60, 60]], dtype=np.float64)


def synth_image(size: int, helmet: bool, rng: np.random.Generator) -> np.ndarray:
    """A stylised worker figure; helmets are a saturated dome over the head."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    bg = rng.uniform(60, 190, size=3)
    img = bg + 25 * (yy[..., None] - 0.5) * rng.uniform(-1, 1, size=3)
    # background clutter shared by both classes
    for _ in range(rng.integers(1, 4)):
        cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.03, 0.12)
        m = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        img[m] = rng.uniform(0, 255, size=3)
    scale = rng.uniform(0.8, 1.15)
    cx = rng.uniform(0.38, 0.62)
    head_r = 0.11 * scale
    head_y = rng.uniform(0.28, 0.38)
    # torso
    torso = (np.abs(xx - cx) < 0.2 * scale) & (yy > head_y + head_r * 0.9) & (yy < head_y + 0.6 * scale)
    img[torso] = rng.uniform(20, 235, size=3)
    head = (xx - cx) ** 2 + (yy - head_y) ** 2 < head_r ** 2
    img[head] = _SKIN[rng.integers(len(_SKIN))] + rng.normal(0, 8, size=3)
    cap_colour = _HELMET_COLOURS[rng.integers(len(_HELMET_COLOURS))] if helmet else \
        _HAIR[rng.integers(len(_HAIR))]
    if helmet:
        # dome wider than the head plus a brim
        dome = (((xx - cx) / (head_r * 1.25)) ** 2 + ((yy - head_y + 0.2 * head_r) / (head_r * 1.05)) ** 2 < 1) \
            & (yy < head_y + 0.05 * head_r)
        brim = (np.abs(xx - cx) < head_r * 1.45) & (np.abs(yy - head_y - 0.05 * head_r) < 0.14 * head_r)
        cap = dome | brim
    else:
        cap = head & (yy < head_y - 0.35 * head_r)
    img[cap] = cap_colour + rng.normal(0, 6, size=3)
    img += rng.normal(0, 10, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic_corpus(n_per_class: int, image_size: int, seed: int, out_dir, threads: int = 1):
    """Write ``out_dir/{helmet,no_helmet}/<class>_<i>.ppm``; returns the file list."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    jobs = []
    for label, cls in enumerate(CLASSES):
        (out_dir / cls).mkdir(parents=True, exist_ok=True)
        jobs.extend((label, cls, i) for i in range(n_per_class))

    def task(job):
        label, cls, i = job
        rng = np.random.default_rng([seed, label, i])
        path = out_dir / cls / f"{cls}_{i:05d}.ppm"
        write_ppm(path, synth_image(image_size, bool(label), rng))
        return path

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(task, jobs))


_SAFE = re.compile(r"[^A-Za-z0-9_.+-]")


def safe_stem(text: str) -> str:
    return _SAFE.sub("_", text)
