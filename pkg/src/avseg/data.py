"""Synthetic audio-visual clips: colored shapes on linear trajectories, an
audio stream of summed per-class signature vectors for whichever shapes are
currently sounding, and slightly perturbed instance masks standing in for
foundation-model proposals.

Only sounding shapes appear in the semantic ground truth; every visible shape
appears among the proposals.  All randomness derives from one root seed via
named streams, so a dataset directory is byte-identical across runs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .imagefile import read_pgm, read_ppm, write_pgm, write_ppm
from .maskige import MaskStack, Palette, default_palette, encode, pad_masks
from .seeding import stream
from .tensor_io import read_tensor, write_tensor

SHAPE_KINDS = ("rectangle", "disk", "triangle")
CLASS_COLORS = np.array([
    [0.90, 0.25, 0.20],
    [0.20, 0.85, 0.30],
    [0.25, 0.40, 0.95],
    [0.90, 0.80, 0.20],
    [0.75, 0.25, 0.85],
    [0.20, 0.85, 0.85],
])


@dataclass
class SyntheticClip:
    frames: np.ndarray          # (T,3,H,W)
    audio: np.ndarray           # (T,D)
    gt_semantic: np.ndarray     # (T,H,W) int labels
    proposals: list             # per frame: MaskStack (visible shapes)
    sounding: list              # per frame: sorted list of sounding classes


def class_signatures(num_classes: int, audio_dim: int) -> np.ndarray:
    """Orthonormal per-class audio signatures.

    These encode class identity ("what a given class sounds like"), so they
    are fixed across datasets and seeds; only the additive noise varies.
    """
    if num_classes > audio_dim:
        raise ValueError(f"cannot fit {num_classes} orthonormal signatures "
                         f"in {audio_dim} dimensions")
    rng = stream(0, "audio_signatures")
    mat = rng.standard_normal((audio_dim, audio_dim))
    q, _ = np.linalg.qr(mat)
    return q.T[:num_classes]


def _shape_mask(kind: str, cy: float, cx: float, r: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if kind == "rectangle":
        return ((np.abs(ys - cy) <= r) & (np.abs(xs - cx) <= r)).astype(float)
    if kind == "disk":
        return ((ys - cy) ** 2 + (xs - cx) ** 2 <= r * r).astype(float)
    # upward triangle: inside vertical span and widening with depth
    depth = ys - (cy - r)
    width = (depth / 2.0).clip(min=0)
    return ((depth >= 0) & (ys <= cy + r)
            & (np.abs(xs - cx) <= width)).astype(float)


def _perturb_mask(mask: np.ndarray, rng: np.random.Generator,
                  max_px: int) -> np.ndarray:
    """Morphological jitter: a random shift up to max_px plus dilate/erode."""
    if max_px <= 0:
        return mask.copy()
    out = np.roll(mask, (rng.integers(-max_px, max_px + 1),
                         rng.integers(-max_px, max_px + 1)), axis=(0, 1))
    op = rng.integers(0, 3)
    if op == 1:
        out = ndimage.binary_dilation(out > 0.5).astype(float)
    elif op == 2 and out.sum() > 8:
        eroded = ndimage.binary_erosion(out > 0.5).astype(float)
        if eroded.sum() > 0:
            out = eroded
    return out


def _sounding_pattern(t: int, rng: np.random.Generator) -> np.ndarray:
    """Per-frame on/off pattern; any sounding stretch persists >= 2 frames."""
    roll = rng.uniform()
    if roll < 0.15 or t < 2:
        return np.zeros(t, dtype=bool)
    if roll < 0.70:
        return np.ones(t, dtype=bool)
    pattern = np.zeros(t, dtype=bool)
    start = int(rng.integers(0, t - 1))
    length = int(rng.integers(2, t - start + 1))
    pattern[start:start + length] = True
    return pattern


def generate_clip(cfg: RunConfig, seed: int, clip_index: int,
                  signatures: np.ndarray) -> SyntheticClip:
    rng = stream(seed, "clip", clip_index)
    t, h, w = cfg.frames, cfg.height, cfg.width
    n_shapes = int(rng.integers(1, min(3, cfg.num_classes) + 1))
    classes = rng.choice(np.arange(1, cfg.num_classes + 1), size=n_shapes,
                         replace=False)
    shapes = []
    for cls in classes:
        r = float(rng.uniform(5.0, 9.0)) * min(h, w) / 32.0
        cy = float(rng.uniform(r, h - 1 - r))
        cx = float(rng.uniform(r, w - 1 - r))
        vy, vx = rng.uniform(-2.0, 2.0, size=2)
        shapes.append({
            "cls": int(cls),
            "kind": SHAPE_KINDS[(int(cls) - 1) % len(SHAPE_KINDS)],
            "r": r, "cy": cy, "cx": cx, "vy": float(vy), "vx": float(vx),
            "sounding": _sounding_pattern(t, rng),
        })

    # clutter: distractor shapes painted in real class colors but absent from
    # the proposals, the ground truth, and the audio -- pixels alone cannot
    # separate them from true objects, only the proposal prior can
    clutter = []
    for _ in range(int(rng.integers(1, cfg.clutter + 1)) if cfg.clutter else 0):
        cls = int(rng.integers(1, cfg.num_classes + 1))
        r = float(rng.uniform(4.0, 7.0)) * min(h, w) / 32.0
        clutter.append({
            "cls": cls,
            "kind": SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)],
            "r": r,
            "cy": float(rng.uniform(r, h - 1 - r)),
            "cx": float(rng.uniform(r, w - 1 - r)),
            "vy": float(rng.uniform(-2.0, 2.0)),
            "vx": float(rng.uniform(-2.0, 2.0)),
        })

    frames = np.zeros((t, 3, h, w))
    gt = np.zeros((t, h, w), dtype=int)
    audio = np.zeros((t, cfg.audio_dim))
    proposals, sounding = [], []
    pixel_noise = stream(seed, "pixel_noise", clip_index)
    for ti in range(t):
        visible_masks = []
        canvas = np.zeros((h, w), dtype=int)
        for s in shapes:
            cy = np.clip(s["cy"] + s["vy"] * ti, 0, h - 1)
            cx = np.clip(s["cx"] + s["vx"] * ti, 0, w - 1)
            mask = _shape_mask(s["kind"], cy, cx, s["r"], h, w)
            canvas = np.where(mask > 0, s["cls"], canvas)
        for s in shapes:
            visible = (canvas == s["cls"]).astype(float)
            if visible.sum() > 0:
                visible_masks.append((s, visible))
        for s, visible in visible_masks:
            color = CLASS_COLORS[(s["cls"] - 1) % len(CLASS_COLORS)]
            frames[ti] += visible[None] * color[:, None, None]
            if s["sounding"][ti]:
                gt[ti][visible > 0] = s["cls"]
                audio[ti] += signatures[s["cls"] - 1]
        for c in clutter:
            cy = np.clip(c["cy"] + c["vy"] * ti, 0, h - 1)
            cx = np.clip(c["cx"] + c["vx"] * ti, 0, w - 1)
            mask = _shape_mask(c["kind"], cy, cx, c["r"], h, w)
            mask = mask * (canvas == 0)   # clutter never occludes real shapes
            color = CLASS_COLORS[(c["cls"] - 1) % len(CLASS_COLORS)]
            frames[ti] += mask[None] * color[:, None, None]
        frames[ti] = np.clip(
            frames[ti] + pixel_noise.normal(0, cfg.pixel_noise, size=(3, h, w)),
            0.0, 1.0)
        audio[ti] += stream(seed, "audio_noise", clip_index, ti) \
            .normal(0, cfg.audio_noise, size=cfg.audio_dim)
        perturb_rng = stream(seed, "perturb", clip_index, ti)
        planes = [_perturb_mask(v, perturb_rng, cfg.proposal_perturb)
                  for _, v in visible_masks]
        proposals.append(MaskStack(np.stack(planes) if planes
                                   else np.zeros((0, h, w))))
        sounding.append(sorted(s["cls"] for s in shapes if s["sounding"][ti]))
    return SyntheticClip(frames, audio, gt, proposals, sounding)


def generate_dataset(out_dir, cfg: RunConfig, n_clips: int, seed: int):
    """Write n_clips deterministic clips under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    signatures = class_signatures(cfg.num_classes, cfg.audio_dim)
    entries = []
    for ci in range(n_clips):
        clip = generate_clip(cfg, seed, ci, signatures)
        cdir = out_dir / f"clip_{ci:04d}"
        cdir.mkdir(exist_ok=True)
        for ti in range(cfg.frames):
            write_ppm(cdir / f"frame_{ti:02d}.ppm", clip.frames[ti])
            write_pgm(cdir / f"gt_{ti:02d}.pgm", clip.gt_semantic[ti])
            for ki, plane in enumerate(clip.proposals[ti].masks):
                write_pgm(cdir / f"prop_{ti:02d}_{ki:02d}.pgm", plane * 255)
        write_tensor(cdir / "audio.ctns", clip.audio)
        entries.append({
            "dir": cdir.name,
            "sounding": [list(map(int, s)) for s in clip.sounding],
            "proposal_counts": [int(p.k) for p in clip.proposals],
        })
    manifest = {
        "clips": entries,
        "config": {
            "frames": cfg.frames, "height": cfg.height, "width": cfg.width,
            "num_classes": cfg.num_classes, "audio_dim": cfg.audio_dim,
            "mask_capacity": cfg.mask_capacity,
            "audio_noise": cfg.audio_noise,
            "pixel_noise": cfg.pixel_noise,
            "clutter": cfg.clutter,
            "proposal_perturb": cfg.proposal_perturb,
            "seed": seed,
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class Dataset:
    """In-memory dataset with precomputed maskiges."""

    def __init__(self, frames, audio, gt, maskiges, names):
        self.frames = frames        # (N,T,3,H,W)
        self.audio = audio          # (N,T,D)
        self.gt = gt                # (N,T,H,W)
        self.maskiges = maskiges    # (N,T,3,H,W)
        self.names = names

    def __len__(self):
        return self.frames.shape[0]


def load_dataset(directory, palette: Palette | None = None) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    mcfg = manifest["config"]
    t = mcfg["frames"]
    capacity = mcfg.get("mask_capacity", 100)
    if palette is None:
        palette = default_palette(capacity)
    frames, audio, gts, maskiges, names = [], [], [], [], []
    for entry in manifest["clips"]:
        cdir = directory / entry["dir"]
        clip_frames, clip_gt, clip_maskige = [], [], []
        for ti in range(t):
            clip_frames.append(read_ppm(cdir / f"frame_{ti:02d}.ppm"))
            clip_gt.append(read_pgm(cdir / f"gt_{ti:02d}.pgm").astype(int))
            k = entry["proposal_counts"][ti]
            planes = [(read_pgm(cdir / f"prop_{ti:02d}_{ki:02d}.pgm") >= 128)
                      .astype(float) for ki in range(k)]
            stack = MaskStack(np.stack(planes) if planes
                              else np.zeros((0, *clip_gt[-1].shape)))
            clip_maskige.append(
                np.clip(encode(pad_masks(stack, palette.n), palette), 0.0, 1.0))
        frames.append(np.stack(clip_frames))
        gts.append(np.stack(clip_gt))
        maskiges.append(np.stack(clip_maskige))
        audio.append(read_tensor(cdir / "audio.ctns"))
        names.append(entry["dir"])
    return Dataset(np.stack(frames), np.stack(audio), np.stack(gts),
                   np.stack(maskiges), names)


def frame_targets_from_semantic(gt_frame: np.ndarray):
    """Split a semantic label map into per-instance masks and classes."""
    from .losses import FrameTargets
    classes = sorted(int(k) for k in np.unique(gt_frame) if k != 0)
    if not classes:
        return FrameTargets(np.zeros((0, *gt_frame.shape)), np.zeros(0, dtype=int))
    masks = np.stack([(gt_frame == k).astype(float) for k in classes])
    return FrameTargets(masks, np.array(classes, dtype=int))


def max_workers() -> int:
    """Fan-out cap from the COMBO_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("COMBO_THREADS", "1")))
    except ValueError:
        return 1
