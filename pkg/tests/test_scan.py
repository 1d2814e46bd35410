import math

import numpy as np
import pytest

from hero import kernels, scan
from hero.errors import ResolutionMismatch


def make_scan(inten, rres=0.25, stamp=1.5):
    A = inten.shape[0]
    return scan.PolarScan(np.arange(A) * 2 * math.pi / A, inten, stamp, rres)


def test_scan_validation():
    with pytest.raises(ValueError):
        make_scan(np.zeros((3, 8)))
    with pytest.raises(ValueError):
        make_scan(-np.ones((4, 8)))
    with pytest.raises(ValueError):
        scan.PolarScan(np.array([0.0, 0.2, 0.1, 0.3]), np.zeros((4, 8)), 0.0, 0.25)


def test_azimuth_mask_examples():
    inten = np.ones((4, 16))
    inten[1] = 0.0
    inten[1, 7] = 5.0
    m = scan.azimuth_mask(make_scan(inten), 3.0)
    assert not m[0].any()
    assert list(np.flatnonzero(m[1])) == [7]
    pos = make_scan(np.random.default_rng(0).random((8, 16)) + 0.1)
    assert scan.azimuth_mask(pos, 1e-12).all()
    with pytest.raises(ValueError):
        scan.azimuth_mask(pos, 0.0)


def test_azimuth_mask_matches_direct_oracle(rng):
    for _ in range(20):
        inten = rng.exponential(1.0, (int(rng.integers(4, 40)), int(rng.integers(8, 80))))
        inten[rng.random(inten.shape) < 0.3] = 0.0
        beta = rng.uniform(0.5, 4.0)
        got = scan.azimuth_mask(make_scan(inten), beta)
        A, B = inten.shape
        for a in range(A):
            mean = sum(inten[a]) / B
            for b in range(B):
                assert got[a, b] == (inten[a, b] > beta * mean)
        assert np.array_equal(scan.azimuth_mask(make_scan(7.5 * inten), beta), got)


def test_cell_validity_matches_counting_oracle(rng):
    for _ in range(20):
        cell = int(rng.choice([4, 8, 16]))
        n = int(rng.integers(1, 5))
        mask = rng.random((n * cell, n * cell)) < rng.uniform(0, 0.15)
        got = scan.cell_validity(mask, cell, 0.05)
        for i in range(n):
            for j in range(n):
                count = int(mask[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell].sum())
                assert got[i, j] == (count / (cell * cell) >= 0.05)


def test_cell_validity_examples():
    mask = np.zeros((32, 32), bool)
    mask.flat[:51] = True
    assert not scan.cell_validity(mask, 32, 0.05)[0, 0]
    mask.flat[51] = True
    assert scan.cell_validity(mask, 32, 0.05)[0, 0]
    assert scan.cell_validity(np.ones((640, 640), bool), 32).shape == (20, 20)
    assert scan.cell_validity(np.ones((640, 640), bool), 32).all()
    with pytest.raises(ValueError):
        scan.cell_validity(np.ones((30, 30), bool), 32)


def test_projection_zero_and_resolution_check():
    s = make_scan(np.zeros((16, 64)))
    img = scan.polar_to_cartesian(s, 32, 0.5, 3.0)
    assert np.array_equal(img.pixels, np.zeros((32, 32))) and not img.mask.any()
    with pytest.raises(ResolutionMismatch):
        scan.polar_to_cartesian(s, 32, 0.3)
    assert scan.check_resolution(0.2592, 0.0432) == 6
    with pytest.raises(ValueError):
        scan.polar_to_cartesian(s, 31, 0.5)


def test_projection_bright_bin_location():
    inten = np.zeros((64, 128))
    inten[0, 40] = 1.0
    img = scan.polar_to_cartesian(make_scan(inten), 64, 0.5, 3.0)
    v, u = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
    assert abs(u - (32 + 40 * 0.25 / 0.5)) <= 1 and abs(v - 32) <= 1
    assert img.mask[v, u]


def test_projection_mask_scale_invariant(rng):
    inten = rng.exponential(1.0, (32, 64))
    a = scan.polar_to_cartesian(make_scan(inten), 32, 0.5)
    b = scan.polar_to_cartesian(make_scan(inten * 13.0), 32, 0.5)
    assert np.array_equal(a.mask, b.mask)
    assert np.allclose(b.pixels, 13.0 * a.pixels)


def test_one_azimuth_step_rotates_image():
    A = 64
    inten = np.zeros((A, 128))
    inten[5, 60] = 1.0
    rolled = np.roll(inten, 1, axis=0)
    p0 = scan.polar_to_cartesian(make_scan(inten), 64, 0.5).pixels
    p1 = scan.polar_to_cartesian(make_scan(rolled), 64, 0.5).pixels
    v0, u0 = np.unravel_index(np.argmax(p0), p0.shape)
    v1, u1 = np.unravel_index(np.argmax(p1), p1.shape)
    a = 2 * math.pi / A
    x, y = u0 - 32, v0 - 32
    xr, yr = math.cos(a) * x - math.sin(a) * y, math.sin(a) * x + math.cos(a) * y
    assert math.hypot(u1 - 32 - xr, v1 - 32 - yr) <= 1.5


def test_scan_file_round_trip(tmp_path, rng):
    s = make_scan(rng.random((8, 16)).astype(np.float32).astype(np.float64), 0.0432, 123.25)
    p = tmp_path / "000001.bin"
    scan.write_scan(p, s)
    raw = p.read_bytes()
    assert raw[:4] == b"PRSC" and len(raw) == 4 + 8 + 16 + 8 * 8 + 4 * 8 * 16
    back = scan.read_scan(p)
    assert np.array_equal(back.intensities, s.intensities)
    assert np.array_equal(back.azimuths, s.azimuths)
    assert back.timestamp == 123.25 and back.range_resolution == 0.0432
    (tmp_path / "junk.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        scan.read_scan(tmp_path / "junk.bin")


def test_write_pgm(tmp_path):
    scan.write_pgm(tmp_path / "a.pgm", np.array([[0.0, 2.0, 1.0]]))
    assert (tmp_path / "a.pgm").read_bytes() == b"P5\n3 1\n255\n" + bytes([0, 255, 128])


def test_rotate_image_identity_and_quarter_turn(rng):
    img = rng.random((16, 16))
    assert np.allclose(scan.rotate_image(img, 0.0), img)
    q = scan.rotate_image(img, math.pi / 2)
    # pixel (u, v) relative to centre moves to (-dv, du)
    assert q[8 + 3, 8 - 2] == pytest.approx(img[8 + 2, 8 + 3])


@pytest.mark.parametrize("name", ["im2col", "col2im", "sample", "sample_backward", "resample",
                                  "polar_to_cart", "render_blobs"])
def test_compiled_and_numpy_kernels_agree(name, rng):
    x = rng.normal(size=(2, 3, 8, 8))
    fmap = rng.normal(size=(3, 10, 10))
    coords = rng.uniform(0, 9, (7, 2))
    args = {
        "im2col": (x, 3),
        "col2im": (rng.normal(size=(2, 27, 64)), x.shape, 3),
        "sample": (fmap, coords),
        "sample_backward": (fmap, coords, rng.normal(size=(7, 3))),
        "resample": (rng.normal(size=(10, 10)), rng.uniform(-1, 10, (5, 5)), rng.uniform(-1, 10, (5, 5)), False),
        "polar_to_cart": (rng.random((16, 32)), rng.random((16, 32)) > 0.5,
                          np.arange(16) * 2 * math.pi / 16, 0.25, 16, 0.5),
        "render_blobs": (np.arange(16) * 2 * math.pi / 16, 32, 0.25, rng.uniform(0, 6, 3),
                         rng.uniform(1, 7, 3), rng.uniform(0.5, 1, 3), 1.5, 0.4),
    }[name]
    a = getattr(kernels, f"_{name}_nb")(*args)
    b = getattr(kernels, f"_{name}_np")(*args)
    for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        assert np.allclose(u, v, atol=1e-12)
