"""Deterministic synthetic aerial-like scenes.

Six classes: background plus five foreground categories laid out as a
paved strip, large rectangles (building), irregular blobs (low
vegetation, tree), and small bright rectangles on the strip (car).

Two properties make the scenes more than colored shapes. Built
structures snap to the 8-pixel grid of the segmentation output stride,
so their supervision is exact at feature resolution. The two green
classes share one scene-wide color shift that is larger than their
separation and live in opposite halves of the tile: a local window
containing a single green class cannot tell which one it is, while the
scene as a whole always orders vegetation brighter than tree. Global
context is therefore required exactly where per-pixel evidence runs
out. A per-scene tint and background hue jitter keep absolute color
unreliable across scenes.

Generation and augmentation are pure functions of (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hmat
from .tensor import Tensor

NUM_CLASSES = 6

# class id -> (name, nominal RGB center before scene shifts)
PALETTE = (
    (0, "background", (0.62, 0.55, 0.46)),
    (1, "paved_surface", (0.50, 0.50, 0.52)),
    (2, "building", (0.55, 0.45, 0.42)),
    (3, "low_vegetation", (0.36, 0.61, 0.30)),
    (4, "tree", (0.36, 0.51, 0.30)),
    (5, "car", (0.80, 0.15, 0.15)),
)

CAR_COLORS = ((0.82, 0.12, 0.12), (0.15, 0.25, 0.80), (0.88, 0.88, 0.90))
GREEN_BASE = (0.36, 0.56, 0.30)
GREEN_SEP = 0.05          # vegetation is +sep, tree is -sep on the green channel
GREEN_SHIFT = 0.12        # shared per-scene shift, uniform in [-shift, +shift]
BLOB_RADIUS_FRAC = 5      # nominal blob radius = extent // this
GRAY_BUILDING_P = 0.35    # chance a building shares the paving gray
NOISE_SIGMA = 0.025
TINT_RANGE = (0.82, 1.18)
BG_JITTER = 0.04
GRID = 8                  # built structures align to the output stride
MIN_EXTENT = 32


@dataclass
class Scene:
    """One synthetic tile: image [3,H,W] in [0,1] and uint8 labels [H,W]."""
    image: Tensor
    labels: np.ndarray
    seed: int

    def __post_init__(self):
        if self.image.dims[1:] != self.labels.shape:
            raise ValueError(f"image {self.image.dims} and labels {self.labels.shape} disagree")
        if self.labels.max(initial=0) >= NUM_CLASSES:
            raise ValueError("labels contain ids outside the palette")


def _rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _paint(img, labels, mask, color, cls, rng, jitter=0.02):
    c = np.clip(np.asarray(color) + rng.normal(0, jitter, 3), 0.02, 0.98)
    img[:, mask] = c[:, None]
    labels[mask] = cls


def _blob_mask(rng, h, w, cy, cx, radius):
    ry = max(5, int(radius * rng.uniform(0.75, 1.25)))
    rx = max(5, int(radius * rng.uniform(0.75, 1.25)))
    yy, xx = np.ogrid[:h, :w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _snap(v: int) -> int:
    return v // GRID * GRID


def generate_scene(seed: int, h: int, w: int) -> Scene:
    """Layered placement of the five foreground classes over textured ground."""
    if h < MIN_EXTENT or w < MIN_EXTENT or h % 8 or w % 8:
        raise ValueError(f"scene extent must be >= {MIN_EXTENT} and divisible by 8, got {h}x{w}")
    rng = _rng_for(seed, 1)
    labels = np.zeros((h, w), dtype=np.uint8)
    img = np.empty((3, h, w), dtype=np.float64)

    ground = np.asarray(PALETTE[0][2]) + rng.normal(0, BG_JITTER, 3)
    img[:] = ground[:, None, None]
    img += rng.normal(0, 0.02, (1, h, w))

    # green pair: same shapes, opposite halves, one shared shift
    shift = rng.uniform(-GREEN_SHIFT, GREEN_SHIFT)
    base = np.asarray(GREEN_BASE)
    veg_color = base + np.array([0.0, GREEN_SEP + shift, 0.0])
    tree_color = base + np.array([0.0, -GREEN_SEP + shift, 0.0])
    radius = max(9, min(h, w) // BLOB_RADIUS_FRAC)
    split_vertical = rng.random() < 0.5
    veg_first = rng.random() < 0.5
    for cls, color, first in ((3, veg_color, veg_first), (4, tree_color, not veg_first)):
        for _ in range(rng.integers(2, 4)):
            lo, hi = (1, 3) if first else (5, 7)
            if split_vertical:
                cy = int(rng.integers(lo * h // 8, hi * h // 8))
                cx = int(rng.integers(0, w))
            else:
                cx = int(rng.integers(lo * w // 8, hi * w // 8))
                cy = int(rng.integers(0, h))
            _paint(img, labels, _blob_mask(rng, h, w, cy, cx, radius), color, cls, rng)

    # one grid-aligned paved strip spanning the tile
    gray = np.asarray(PALETTE[1][2])
    width = max(GRID, _snap(int(rng.integers(h // 6, h // 4))))
    pos = _snap(int(rng.integers(0, h - width)))
    horizontal = rng.random() < 0.5
    strip = np.zeros((h, w), dtype=bool)
    if horizontal:
        strip[pos:pos + width, :] = True
    else:
        strip[:, pos:pos + width] = True
    _paint(img, labels, strip, gray, 1, rng, jitter=0.03)

    # buildings: grid-aligned rectangles, sometimes paving-gray
    if rng.random() < GRAY_BUILDING_P:
        btone = gray + rng.uniform(-0.03, 0.03, 3)
    else:
        btone = np.asarray(PALETTE[2][2]) + rng.uniform(-0.08, 0.08, 3)
    for _ in range(rng.integers(1, 4)):
        bh = max(GRID, _snap(int(rng.integers(h // 5, h // 2))))
        bw = max(GRID, _snap(int(rng.integers(w // 5, w // 2))))
        by = _snap(int(rng.integers(0, h - bh)))
        bx = _snap(int(rng.integers(0, w - bw)))
        mask = np.zeros((h, w), dtype=bool)
        mask[by:by + bh, bx:bx + bw] = True
        _paint(img, labels, mask, btone, 2, rng)
        # rooftop fixtures share the car color family but stay class 2
        for _ in range(rng.integers(0, 3)):
            fh, fw = int(rng.integers(3, 6)), int(rng.integers(3, 6))
            fy = int(rng.integers(by, max(by + 1, by + bh - fh)))
            fx = int(rng.integers(bx, max(bx + 1, bx + bw - fw)))
            fixture = np.zeros((h, w), dtype=bool)
            fixture[fy:fy + fh, fx:fx + fw] = True
            fixture &= mask
            _paint(img, labels, fixture, CAR_COLORS[rng.integers(0, len(CAR_COLORS))], 2, rng)

    # cars: grid cells on the remaining paving
    paved = labels == 1
    rows = np.flatnonzero(paved.any(axis=1))
    cols = np.flatnonzero(paved.any(axis=0))
    if rows.size and cols.size:
        for _ in range(rng.integers(1, 4)):
            ch = GRID
            cw = GRID if rng.random() < 0.5 else 2 * GRID
            cy = _snap(int(rng.choice(rows)))
            cx = _snap(int(rng.choice(cols)))
            car = np.zeros((h, w), dtype=bool)
            car[cy:cy + ch, cx:cx + cw] = True
            car &= paved
            _paint(img, labels, car, CAR_COLORS[rng.integers(0, len(CAR_COLORS))], 5, rng)

    tint = rng.uniform(*TINT_RANGE, 3)
    img *= tint[:, None, None]
    img += rng.normal(0, NOISE_SIGMA, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return Scene(image=Tensor(img.astype(np.float32), "f32"), labels=labels, seed=seed)


# ---------------------------------------------------------------------------
# augmentation


def augment(scene: Scene, seed: int, crop_h: int | None = None, crop_w: int | None = None,
            scale_range: tuple[float, float] = (0.5, 2.0),
            force_flip: bool | None = None,
            force_scale: float | None = None) -> Scene:
    """Random horizontal flip, scale, and crop with aligned image/labels.

    Labels are resampled nearest-neighbor; the crop target must fit in
    the scaled scene.
    """
    rng = _rng_for(seed, 2)
    img = scene.image.data
    lab = scene.labels
    h, w = lab.shape
    crop_h = crop_h or h
    crop_w = crop_w or w

    flip = rng.random() < 0.5 if force_flip is None else force_flip
    if flip:
        img = img[:, :, ::-1]
        lab = lab[:, ::-1]

    factor = rng.uniform(*scale_range) if force_scale is None else force_scale
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    ys = np.minimum(np.arange(nh) * h // nh, h - 1)
    xs = np.minimum(np.arange(nw) * w // nw, w - 1)
    img = img[:, ys[:, None], xs[None, :]]
    lab = lab[ys[:, None], xs[None, :]]

    if nh < crop_h or nw < crop_w:
        raise ValueError(f"cannot crop {crop_h}x{crop_w} from scaled scene {nh}x{nw}")
    top = int(rng.integers(0, nh - crop_h + 1))
    left = int(rng.integers(0, nw - crop_w + 1))
    img = img[:, top:top + crop_h, left:left + crop_w]
    lab = lab[top:top + crop_h, left:left + crop_w]
    return Scene(image=Tensor(np.ascontiguousarray(img), "f32"),
                 labels=np.ascontiguousarray(lab), seed=scene.seed)


# ---------------------------------------------------------------------------
# persistence


def save_scene(directory: str | Path, index: int, scene: Scene) -> None:
    directory = Path(directory)
    hmat.save_array(directory / f"scene_{index:05d}.img.hmat", scene.image.data)
    hmat.save_array(directory / f"scene_{index:05d}.lbl.hmat", scene.labels)


def load_scene(directory: str | Path, index: int) -> Scene:
    directory = Path(directory)
    img = hmat.load_array(directory / f"scene_{index:05d}.img.hmat")
    lab = hmat.load_array(directory / f"scene_{index:05d}.lbl.hmat")
    return Scene(image=Tensor(img, "f32"), labels=lab, seed=-1)


def write_dataset(directory: str | Path, count: int, h: int, w: int, base_seed: int) -> None:
    """Generate ``count`` scenes with seeds base_seed..base_seed+count-1."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        save_scene(directory, i, generate_scene(base_seed + i, h, w))
    lines = [f"count = {count}", f"height = {h}", f"width = {w}",
             f"base_seed = {base_seed}", "palette:"]
    for cls, name, rgb in PALETTE:
        lines.append(f"  {cls} {name} {rgb[0]:.2f},{rgb[1]:.2f},{rgb[2]:.2f}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_dataset(directory: str | Path) -> list[Scene]:
    directory = Path(directory)
    meta = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    count = int(meta["count"])
    return [load_scene(directory, i) for i in range(count)]
