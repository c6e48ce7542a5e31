import numpy as np
import pytest

from avseg import tensor as T
from avseg.imagefile import read_pgm, read_ppm, write_pgm, write_ppm
from avseg.maskige import (CapacityError, MaskStack, Palette, decode_nearest,
                           default_palette, encode, generate_palette, pad_masks)
from avseg.seeding import stream


def random_disjoint_stack(rng, k=5, h=16, w=16):
    """k random disjoint rectangles."""
    masks = np.zeros((k, h, w))
    order = rng.permutation(h * w)
    # carve disjoint cells out of a shuffled pixel pool via rectangles that
    # are trimmed against previous masks
    taken = np.zeros((h, w), dtype=bool)
    for i in range(k):
        for _ in range(50):
            y0, x0 = rng.integers(0, h - 3), rng.integers(0, w - 3)
            y1, x1 = y0 + rng.integers(2, 5), x0 + rng.integers(2, 5)
            rect = np.zeros((h, w), dtype=bool)
            rect[y0:y1, x0:x1] = True
            rect &= ~taken
            if rect.any():
                masks[i] = rect
                taken |= rect
                break
    del order
    return MaskStack(masks)


def test_mask_stack_rejects_non_binary():
    with pytest.raises(ValueError):
        MaskStack(np.full((1, 2, 2), 0.5))


def test_pad_empty_and_identity():
    empty = MaskStack(np.zeros((0, 4, 4)))
    padded = pad_masks(empty, 7)
    assert padded.masks.shape == (7, 4, 4) and padded.masks.sum() == 0

    stack = random_disjoint_stack(stream(0, "pad"), k=3)
    same = pad_masks(stack, 3)
    np.testing.assert_array_equal(same.masks, stack.masks)

    padded = pad_masks(stack, 100)
    np.testing.assert_array_equal(padded.masks[:3], stack.masks)
    assert padded.masks[3:].sum() == 0


def test_pad_overflow_carries_counts():
    stack = MaskStack(np.zeros((5, 2, 2)))
    with pytest.raises(CapacityError) as exc:
        pad_masks(stack, 3)
    assert exc.value.k == 5 and exc.value.n == 3


def test_encode_zero_and_single_mask():
    pal = default_palette(10)
    img = encode(MaskStack(np.zeros((10, 4, 4))), pal)
    assert img.shape == (3, 4, 4) and np.all(img == 0)

    masks = np.zeros((10, 4, 4))
    masks[6] = 1.0
    img = encode(MaskStack(masks), pal)
    for ch in range(3):
        np.testing.assert_array_equal(img[ch], np.full((4, 4), pal.rows[6, ch]))


def test_encode_overlap_sums_palette_rows():
    pal = default_palette(4)
    masks = np.zeros((4, 2, 2))
    masks[1, 0, 0] = 1.0
    masks[2, 0, 0] = 1.0
    img = encode(MaskStack(masks), pal)
    np.testing.assert_allclose(img[:, 0, 0], pal.rows[1] + pal.rows[2], atol=0)


def test_encode_capacity_mismatch():
    pal = default_palette(8)
    with pytest.raises(CapacityError):
        encode(MaskStack(np.zeros((5, 2, 2))), pal)


def test_encode_linearity_on_disjoint_stacks():
    rng = stream(1, "lin")
    pal = default_palette(12)
    s = random_disjoint_stack(rng, k=6, h=12, w=12)
    s1 = np.zeros((12, 12, 12))
    s2 = np.zeros((12, 12, 12))
    s1[:3] = s.masks[:3]
    s2[3:6] = s.masks[3:]
    total = MaskStack(s1 + s2)
    lhs = encode(total, pal)
    rhs = encode(MaskStack(s1), pal) + encode(MaskStack(s2), pal)
    np.testing.assert_array_equal(lhs, rhs)


def test_encode_records_nothing_on_tape():
    pal = default_palette(5)
    before = len(T.active_tape())
    encode(MaskStack(np.zeros((5, 4, 4))), pal)
    assert len(T.active_tape()) == before


def test_decode_round_trip_randomized():
    pal = default_palette(100)
    for trial in range(100):
        rng = stream(2, "roundtrip", trial)
        stack = pad_masks(random_disjoint_stack(rng, k=5), 100)
        recovered = decode_nearest(encode(stack, pal), pal)
        np.testing.assert_array_equal(recovered.masks, stack.masks)


def test_decode_all_black():
    pal = default_palette(6)
    out = decode_nearest(np.zeros((3, 5, 5)), pal)
    assert out.masks.sum() == 0


def test_default_palette_determinism_and_separation():
    p1 = generate_palette(100, seed=3)
    p2 = generate_palette(100, seed=3)
    np.testing.assert_array_equal(p1.rows, p2.rows)
    diff = np.abs(p1.rows[:, None] - p2.rows[None]).max(axis=2)
    np.fill_diagonal(diff, 1.0)
    assert diff.min() >= 1 / 255 - 1e-12


def test_palette_file_passthrough(tmp_path):
    pal = generate_palette(16, seed=9)
    path = tmp_path / "pal.txt"
    pal.to_file(path)
    loaded = default_palette(16, palette_file=path)
    np.testing.assert_array_equal(loaded.rows, pal.rows)


def test_palette_rejects_black_and_near_duplicates():
    with pytest.raises(Exception):
        Palette(np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]))
    with pytest.raises(Exception):
        Palette(np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5 + 1e-6]]))


def test_ppm_pgm_round_trip(tmp_path):
    rng = stream(3, "img")
    img = rng.uniform(size=(3, 6, 7))
    write_ppm(tmp_path / "x.ppm", img)
    back = read_ppm(tmp_path / "x.ppm")
    np.testing.assert_allclose(back, np.rint(img * 255) / 255, atol=1e-12)

    labels = rng.integers(0, 4, size=(5, 5))
    write_pgm(tmp_path / "x.pgm", labels)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), labels)


def test_maskige_export_clamps(tmp_path):
    pal = default_palette(4)
    masks = np.zeros((4, 2, 2))
    masks[:, 0, 0] = 1.0  # heavy overlap, sums beyond 1
    img = encode(MaskStack(masks), pal)
    assert img.max() > 1.0
    write_ppm(tmp_path / "m.ppm", img)
    back = read_ppm(tmp_path / "m.ppm")
    assert back.max() <= 1.0
