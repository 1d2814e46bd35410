"""Radar scans: polar storage, Cartesian projection and validity masks.

Pixel ``(u, v)`` (column, row) of an ``S x S`` image sits at metric
``x = (u - S/2) * res``, ``y = (v - S/2) * res`` in the sensor frame, and
azimuth ``a`` / range bin ``b`` map to ``(b * range_res) * (cos a, sin a)``.
"""
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ResolutionMismatch

SCAN_MAGIC = b"PRSC"
_HEADER = struct.Struct("<4sIIdd")


@dataclass
class PolarScan:
    azimuths: np.ndarray     # (A,) rad, strictly increasing in [0, 2pi)
    intensities: np.ndarray  # (A, B) >= 0
    timestamp: float
    range_resolution: float  # m / bin

    def __post_init__(self):
        self.azimuths = np.asarray(self.azimuths, dtype=np.float64)
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        A, B = self.intensities.shape
        if A < 4 or B < 8:
            raise ValueError(f"scan must have at least 4 azimuths and 8 bins, got {A}x{B}")
        if self.azimuths.shape != (A,):
            raise ValueError("azimuth count does not match intensity rows")
        if np.any(np.diff(self.azimuths) <= 0) or self.azimuths[0] < 0 or self.azimuths[-1] >= 2 * math.pi:
            raise ValueError("azimuths must be strictly increasing within [0, 2pi)")
        if np.any(self.intensities < 0):
            raise ValueError("intensities must be non-negative")

    @property
    def ranges(self):
        return np.arange(self.intensities.shape[1]) * self.range_resolution


@dataclass
class CartesianImage:
    pixels: np.ndarray  # (S, S)
    mask: np.ndarray    # (S, S) bool
    resolution: float
    timestamp: float

    @property
    def size(self):
        return self.pixels.shape[0]


def azimuth_mask(scan, beta=3.0):
    """Bins brighter than ``beta`` times the mean of their azimuth row."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    inten = scan.intensities
    return inten > beta * inten.mean(axis=1, keepdims=True)


def check_resolution(resolution, range_resolution):
    k = round(resolution / range_resolution)
    if k < 1 or abs(resolution - k * range_resolution) > 1e-9:
        raise ResolutionMismatch(
            f"{resolution} m/px is not an integer multiple of {range_resolution} m/bin")
    return k


def polar_to_cartesian(scan, size=640, resolution=0.2592, beta=3.0):
    """Bilinear projection of ``scan``; the mask is the nearest-neighbour
    projection of ``azimuth_mask(scan, beta)``."""
    if size % 2:
        raise ValueError("image size must be even")
    check_resolution(resolution, scan.range_resolution)
    valid = azimuth_mask(scan, beta)
    img, mask = kernels.polar_to_cart(scan.intensities, valid, scan.azimuths,
                                      scan.range_resolution, size, resolution)
    return CartesianImage(img, mask, resolution, scan.timestamp)


def cell_validity(mask, cell_size=32, min_valid_ratio=0.05):
    """Per-cell flag: fraction of valid pixels is at least ``min_valid_ratio``.

    ``mask`` may be a CartesianImage or a boolean array; the result has shape
    ``(S // cell_size, S // cell_size)`` in row-major cell order.
    """
    if isinstance(mask, CartesianImage):
        mask = mask.mask
    S = mask.shape[0]
    if S % cell_size or mask.shape[1] % cell_size:
        raise ValueError(f"image size {mask.shape} not divisible by cell size {cell_size}")
    n = S // cell_size
    counts = mask.reshape(n, cell_size, mask.shape[1] // cell_size, cell_size).sum(axis=(1, 3))
    return counts / float(cell_size * cell_size) >= min_valid_ratio


def rotate_image(img, angle, nearest=False):
    """Rotate a square image by ``angle`` (rad) about the sensor pixel."""
    S = img.shape[0]
    half = S // 2
    idx = np.arange(S) - half
    uu, vv = np.meshgrid(idx, idx)
    c, s = math.cos(angle), math.sin(angle)
    # inverse map: source = R(-angle) * dest
    us = c * uu + s * vv + half
    vs = -s * uu + c * vv + half
    out = kernels.resample(img.astype(np.float64), us, vs, nearest=nearest)
    return out.astype(bool) if img.dtype == bool else out


# -------------------------------------------------------------------- files

def write_scan(path, scan):
    A, B = scan.intensities.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SCAN_MAGIC, A, B, float(scan.timestamp), float(scan.range_resolution)))
        fh.write(scan.azimuths.astype("<f8").tobytes())
        fh.write(scan.intensities.astype("<f4").tobytes())


def read_scan(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, A, B, stamp, rres = _HEADER.unpack_from(raw, 0)
    if magic != SCAN_MAGIC:
        raise ValueError(f"{path}: not a polar scan file")
    off = _HEADER.size
    az = np.frombuffer(raw, "<f8", A, off)
    inten = np.frombuffer(raw, "<f4", A * B, off + 8 * A).reshape(A, B)
    return PolarScan(az.copy(), inten.astype(np.float64), stamp, rres)


def list_scans(directory):
    return sorted(os.path.join(directory, f) for f in os.listdir(directory) if f.endswith(".bin"))


def read_sequence(directory):
    return [read_scan(p) for p in list_scans(directory)]


def write_pgm(path, img):
    """8-bit binary PGM, linearly scaled to the image maximum."""
    img = np.asarray(img, dtype=np.float64)
    peak = img.max()
    data = np.zeros(img.shape, np.uint8) if peak <= 0 else np.round(255 * img / peak).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(data.tobytes())
