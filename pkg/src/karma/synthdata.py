"""Procedural generator of defect-like segmentation data.

Classes render as line, blob, or ring structures (crack / hole / deposit
shapes) over a textured background, with configurable class imbalance. All
randomness comes from an integer hash (splitmix64) of (seed, sample index,
counter), so samples are byte-identical across runs and platforms.

A dataset directory holds images/NNNN.tnsr (float64 [3,H,W] in [0,1]),
masks/NNNN.tnsr (uint8 [H,W]) and a `manifest.txt` of key = value lines.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorfile import read_tensor, write_tensor

KINDS = ("line", "blob", "ring")

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
        return z ^ (z >> np.uint64(31))


def _hash_u64(*parts: int) -> np.uint64:
    h = np.uint64(0x243F6A8885A308D3)
    for p in parts:
        h = _splitmix64((h ^ np.uint64(p & 0xFFFFFFFFFFFFFFFF)) & _MASK)
    return h


def _to_unit(h: np.ndarray) -> np.ndarray:
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


class _Stream:
    """Counter-based deterministic uniform stream for shape parameters."""

    def __init__(self, *parts: int):
        self.base = _hash_u64(*parts)
        self.n = 0

    def unit(self) -> float:
        self.n += 1
        return float(_to_unit(_splitmix64((self.base + np.uint64(self.n)) & _MASK)))

    def uniform(self, lo: float, hi: float) -> float:
        if hi <= lo:  # shape barely fits: pin to the midpoint
            return (lo + hi) / 2.0
        return lo + (hi - lo) * self.unit()


@dataclass
class SynthSpec:
    """Generator settings.

    ``snap`` rasterizes class regions at an n-pixel block granularity
    (shapes are painted on the H/snap x W/snap grid and replicated).
    Useful when the consumer's prediction lattice is coarser than a pixel,
    e.g. a decoder whose finest head runs at 1/4 resolution.
    """

    height: int = 64
    width: int = 64
    num_classes: int = 4
    class_kinds: tuple[str, ...] = ("line", "blob", "ring")
    frequencies: tuple[float, ...] = (0.05, 0.12, 0.08)
    seed: int = 0
    snap: int = 1

    def validate(self) -> "SynthSpec":
        if self.height % 32 or self.width % 32:
            raise ValueError("height and width must be divisible by 32")
        if len(self.class_kinds) != self.num_classes - 1:
            raise ValueError("need one kind per non-background class")
        if len(self.frequencies) != self.num_classes - 1:
            raise ValueError("need one target frequency per non-background class")
        for kind in self.class_kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown class kind {kind!r}; pick from {KINDS}")
        if any(f <= 0 for f in self.frequencies) or sum(self.frequencies) > 1.0:
            raise ValueError("frequencies must be positive and sum to at most 1")
        if self.snap < 1 or self.height % self.snap or self.width % self.snap:
            raise ValueError("snap must be >= 1 and divide height and width")
        return self


def _pixel_noise(spec: SynthSpec, index: int, tag: int) -> np.ndarray:
    """Per-pixel uniform noise field in [0,1), hash-derived."""
    h, w = spec.height, spec.width
    ids = np.arange(h * w, dtype=np.uint64).reshape(h, w)
    base = _hash_u64(spec.seed, index, tag)
    return _to_unit(_splitmix64((ids + base) & _MASK))


def _value_noise(spec: SynthSpec, index: int, tag: int, cells: int = 8) -> np.ndarray:
    """Smooth texture: bilinear interpolation of a coarse hashed lattice."""
    h, w = spec.height, spec.width
    lat_ids = np.arange((cells + 1) * (cells + 1), dtype=np.uint64)
    base = _hash_u64(spec.seed, index, tag, 7)
    lattice = _to_unit(_splitmix64((lat_ids + base) & _MASK)).reshape(cells + 1, cells + 1)
    ys = np.linspace(0, cells, h, endpoint=False)
    xs = np.linspace(0, cells, w, endpoint=False)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = lattice[y0][:, x0]
    b = lattice[y0][:, x0 + 1]
    c = lattice[y0 + 1][:, x0]
    d = lattice[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _paint_line(mask, cls, stream, freq, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    length = 0.75 * min(h, w) * stream.uniform(0.7, 1.0)
    thick = max(1.5, freq * h * w / length)
    ang = stream.uniform(0.0, np.pi)
    dy, dx = np.sin(ang), np.cos(ang)
    # keep the segment inside the frame so no target area is clipped away
    my = abs(dy) * length / 2.0 + thick
    mx = abs(dx) * length / 2.0 + thick
    cy = stream.uniform(my, h - my)
    cx = stream.uniform(mx, w - mx)
    half = length / 2.0
    # distance from each pixel to the segment
    t = np.clip((yy - cy) * dy + (xx - cx) * dx, -half, half)
    dist = np.sqrt((yy - (cy + t * dy)) ** 2 + (xx - (cx + t * dx)) ** 2)
    mask[dist <= thick / 2.0] = cls


def _paint_blob(mask, cls, stream, freq, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.sqrt(freq * h * w / np.pi)
    squash = stream.uniform(0.8, 1.25)
    ry, rx = r * squash, r / squash
    cy = stream.uniform(ry + 1, h - ry - 1)
    cx = stream.uniform(rx + 1, w - rx - 1)
    dist = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    mask[dist <= 1.0] = cls


def _paint_ring(mask, cls, stream, freq, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    area = freq * h * w
    outer = 1.6 * np.sqrt(area / np.pi)
    inner = np.sqrt(max(outer**2 - area / np.pi, 0.0))
    cy = stream.uniform(outer + 1, h - outer - 1)
    cx = stream.uniform(outer + 1, w - outer - 1)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    mask[(dist <= outer) & (dist >= inner)] = cls


_PAINTERS = {"line": _paint_line, "blob": _paint_blob, "ring": _paint_ring}


def generate_sample(spec: SynthSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, mask) pair for (spec.seed, index)."""
    spec.validate()
    h, w = spec.height, spec.width
    gh, gw = h // spec.snap, w // spec.snap
    mask = np.zeros((gh, gw), dtype=np.uint8)
    # paint large classes first so overdraw steals proportionally little,
    # and inflate each painted area by the coverage of later classes
    order = sorted(range(1, spec.num_classes), key=lambda c: -spec.frequencies[c - 1])
    for pos, cls in enumerate(order):
        kind = spec.class_kinds[cls - 1]
        freq = spec.frequencies[cls - 1]
        painted_after = sum(spec.frequencies[c - 1] for c in order[pos + 1 :])
        adjusted = min(freq / max(1.0 - painted_after, 0.5), 2.0 * freq)
        if adjusted >= 0.95:
            mask[:] = cls
            continue
        stream = _Stream(spec.seed, index, cls)
        _PAINTERS[kind](mask, cls, stream, adjusted, gh, gw)
    if spec.snap > 1:
        mask = np.repeat(np.repeat(mask, spec.snap, axis=0), spec.snap, axis=1)

    base = 0.35 + 0.3 * _value_noise(spec, index, 1)
    image = np.empty((3, h, w), dtype=np.float64)
    for ch in range(3):
        tone = 0.85 + 0.15 * float(_to_unit(_hash_u64(spec.seed, 100 + ch)))
        image[ch] = base * tone
    for cls in range(1, spec.num_classes):
        sel = mask == cls
        if not sel.any():
            continue
        texture = _value_noise(spec, index, 10 + cls, cells=16)
        for ch in range(3):
            tint = 0.15 + 0.7 * float(_to_unit(_hash_u64(spec.seed, cls * 17 + ch)))
            image[ch][sel] = 0.75 * tint + 0.25 * texture[sel]
    for ch in range(3):
        image[ch] += 0.04 * (_pixel_noise(spec, index, 40 + ch) - 0.5)
    np.clip(image, 0.0, 1.0, out=image)
    return image, mask


def write_dataset(spec: SynthSpec, count: int, out_dir) -> Path:
    """Materialize `count` samples plus a manifest; returns the directory."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        image, mask = generate_sample(spec, i)
        write_tensor(out / "images" / f"{i:04d}.tnsr", image)
        write_tensor(out / "masks" / f"{i:04d}.tnsr", mask)
    lines = [
        f"count = {count}",
        f"height = {spec.height}",
        f"width = {spec.width}",
        f"num_classes = {spec.num_classes}",
        f"class_kinds = {','.join(spec.class_kinds)}",
        f"frequencies = {','.join(str(f) for f in spec.frequencies)}",
        f"seed = {spec.seed}",
        f"snap = {spec.snap}",
    ]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


@dataclass
class Dataset:
    images: list[np.ndarray]
    masks: list[np.ndarray]
    num_classes: int

    def __len__(self) -> int:
        return len(self.images)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.txt in {root}")
    meta: dict[str, str] = {}
    for line in manifest.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    count = int(meta["count"])
    images, masks = [], []
    for i in range(count):
        images.append(read_tensor(root / "images" / f"{i:04d}.tnsr"))
        masks.append(read_tensor(root / "masks" / f"{i:04d}.tnsr"))
    return Dataset(images=images, masks=masks, num_classes=int(meta["num_classes"]))
