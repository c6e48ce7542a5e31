"""Mask-prior images: a fixed linear color map over padded binary mask stacks.

A stack of K class-agnostic binary masks is zero-padded to a fixed capacity N
and multiplied by an N x 3 color palette, yielding a 3 x H x W prior image
("maskige").  The map is linear, untrained, and records nothing on the tape.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_CAPACITY = 100
MIN_SEPARATION = 1.0 / 255.0


class CapacityError(ValueError):
    """More masks than the palette can encode."""

    def __init__(self, k: int, n: int):
        super().__init__(f"stack has {k} masks but capacity is {n}")
        self.k = k
        self.n = n


class PaletteError(ValueError):
    """Palette violates the distinctness/separation invariant."""


class MaskStack:
    """K x H x W stack of strictly binary masks."""

    def __init__(self, masks: np.ndarray):
        masks = np.asarray(masks, dtype=np.float64)
        if masks.ndim != 3:
            raise ValueError(f"mask stack must be 3-d, got {masks.shape}")
        if masks.shape[1] < 1 or masks.shape[2] < 1:
            raise ValueError(f"empty spatial extent: {masks.shape}")
        if not np.all((masks == 0.0) | (masks == 1.0)):
            raise ValueError("mask values must be exactly 0 or 1")
        self.masks = masks

    @property
    def k(self):
        return self.masks.shape[0]

    @property
    def spatial(self):
        return self.masks.shape[1:]


class Palette:
    """N x 3 color rows in [0,1], pairwise L-inf separated by >= 1/255."""

    def __init__(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise PaletteError(f"palette must be N x 3, got {rows.shape}")
        if rows.min() < 0.0 or rows.max() > 1.0:
            raise PaletteError("palette entries must lie in [0,1]")
        diff = np.abs(rows[:, None, :] - rows[None, :, :]).max(axis=2)
        np.fill_diagonal(diff, 1.0)
        if diff.min() < MIN_SEPARATION - 1e-12:
            raise PaletteError("palette rows closer than 1/255 in L-inf")
        if np.any(rows.max(axis=1) == 0.0):
            raise PaletteError("palette must not contain black (reserved for background)")
        self.rows = rows

    @property
    def n(self):
        return self.rows.shape[0]

    @classmethod
    def from_file(cls, path) -> "Palette":
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            r, g, b = (int(v) for v in line.split())
            rows.append((r / 255.0, g / 255.0, b / 255.0))
        return cls(np.array(rows))

    def to_file(self, path):
        ints = np.rint(self.rows * 255.0).astype(int)
        Path(path).write_text("".join(f"{r} {g} {b}\n" for r, g, b in ints))


def pad_masks(stack: MaskStack, n: int) -> MaskStack:
    """Zero-pad a K-mask stack up to capacity n; the first K planes are kept."""
    if stack.k > n:
        raise CapacityError(stack.k, n)
    padded = np.zeros((n, *stack.spatial))
    padded[:stack.k] = stack.masks
    return MaskStack(padded)


def encode(stack: MaskStack, palette: Palette) -> np.ndarray:
    """Linear color map: image[:,h,w] = sum_n stack[n,h,w] * palette[n].

    Returns a raw (3,H,W) array; overlaps sum and are clamped only at export.
    Pure data transform: nothing is recorded on the tape.
    """
    if stack.k != palette.n:
        raise CapacityError(stack.k, palette.n)
    return np.tensordot(palette.rows.T, stack.masks, axes=1)


def decode_nearest(image: np.ndarray, palette: Palette) -> MaskStack:
    """Inverse of encode for disjoint stacks: nearest palette row per pixel,
    exact black maps to no mask."""
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    flat = image.reshape(3, -1).T                       # (HW, 3)
    d2 = ((flat[:, None, :] - palette.rows[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    background = np.all(flat == 0.0, axis=1)
    masks = np.zeros((palette.n, h * w))
    covered = ~background
    masks[nearest[covered], np.nonzero(covered)[0]] = 1.0
    return MaskStack(masks.reshape(palette.n, h, w))


def generate_palette(n: int, seed: int) -> Palette:
    """Seeded low-discrepancy colors; deterministic for a given (n, seed)."""
    if n > 256 ** 3:
        raise PaletteError(f"cannot produce {n} distinct colors")
    # additive golden-ratio-style recurrence per channel, quantized to 1..255,
    # with rejection of duplicate rows
    alphas = np.array([0.7548776662466927, 0.5698402909980532, 0.3414696344949091])
    phases = (np.arange(3) + 1) * 0.17 * (seed + 1)
    rows, seen, k = [], set(), 0
    while len(rows) < n:
        k += 1
        rgb = tuple(1 + int(np.floor((x - np.floor(x)) * 255))
                    for x in phases + k * alphas)
        if rgb in seen:
            continue
        seen.add(rgb)
        rows.append(rgb)
        if k > 300 * n + 1000:
            raise PaletteError(f"separation unachievable for N={n}")
    return Palette(np.array(rows) / 255.0)


def default_palette(n: int = DEFAULT_CAPACITY, seed: int = 0,
                    palette_file=None) -> Palette:
    """Palette loading order: explicit file, bundled file, seeded generation."""
    if palette_file is not None:
        pal = Palette.from_file(palette_file)
        if pal.n != n:
            raise CapacityError(n, pal.n)
        return pal
    bundled = resources.files("avseg").joinpath("palette_default.txt")
    if bundled.is_file():
        pal = Palette.from_file(bundled)
        if pal.n >= n:
            return Palette(pal.rows[:n])
    return generate_palette(n, seed)


def export_maskige(path, image: np.ndarray):
    from .imagefile import write_ppm
    write_ppm(path, image)


def import_mask_dir(directory) -> MaskStack:
    """Read every PGM plane in a directory (sorted by name) as a 0/1 mask."""
    from .imagefile import read_pgm
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm masks found in {directory}")
    planes = [(read_pgm(p) >= 128).astype(np.float64) for p in paths]
    return MaskStack(np.stack(planes))


def export_mask_stack(directory, stack: MaskStack, prefix: str = "mask"):
    from .imagefile import write_pgm
    Path(directory).mkdir(parents=True, exist_ok=True)
    for i, plane in enumerate(stack.masks):
        write_pgm(Path(directory) / f"{prefix}_{i:03d}.pgm", plane * 255)
