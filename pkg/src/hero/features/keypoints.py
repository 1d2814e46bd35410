"""Spatial-softmax keypoints, bilinear sampling and pixel/metric conversion."""
import numpy as np

from .. import kernels
from ..errors import OutOfBounds


def _cell_view(score_map, cell_size):
    S, Wd = score_map.shape
    n, m = S // cell_size, Wd // cell_size
    cells = score_map.reshape(n, cell_size, m, cell_size).transpose(0, 2, 1, 3)
    return cells.reshape(n * m, cell_size * cell_size)


def _cell_coords(shape, cell_size):
    S, Wd = shape
    n, m = S // cell_size, Wd // cell_size
    vv, uu = np.meshgrid(np.arange(S, dtype=float), np.arange(Wd, dtype=float), indexing="ij")
    u = uu.reshape(n, cell_size, m, cell_size).transpose(0, 2, 1, 3).reshape(n * m, -1)
    v = vv.reshape(n, cell_size, m, cell_size).transpose(0, 2, 1, 3).reshape(n * m, -1)
    return u, v


def extract_keypoints(detector_map, valid_cells, cell_size):
    """One keypoint per valid cell at the softmax-weighted mean pixel position.

    ``detector_map`` is (S, S); ``valid_cells`` is a boolean array of the
    cell grid (or None for all cells). Returns ``(coords, cell_ids, probs)``
    with coords (L, 2) as (u, v) pixel positions and probs (L, cell_size**2).
    """
    detector_map = np.asarray(detector_map, dtype=np.float64)
    scores = _cell_view(detector_map, cell_size)
    u, v = _cell_coords(detector_map.shape, cell_size)
    if valid_cells is None:
        ids = np.arange(scores.shape[0])
    else:
        ids = np.flatnonzero(np.asarray(valid_cells).reshape(-1))
    s = scores[ids]
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    coords = np.stack([(p * u[ids]).sum(axis=1), (p * v[ids]).sum(axis=1)], axis=1)
    return coords, ids, p


def extract_keypoints_backward(g_coords, cell_ids, probs, shape, cell_size):
    """Adjoint of ``extract_keypoints`` onto the detector map."""
    u, v = _cell_coords(shape, cell_size)
    u, v = u[cell_ids], v[cell_ids]
    ubar = (probs * u).sum(axis=1, keepdims=True)
    vbar = (probs * v).sum(axis=1, keepdims=True)
    gs = probs * ((u - ubar) * g_coords[:, :1] + (v - vbar) * g_coords[:, 1:])
    n, m = shape[0] // cell_size, shape[1] // cell_size
    full = np.zeros((n * m, cell_size * cell_size))
    full[cell_ids] = gs
    return full.reshape(n, m, cell_size, cell_size).transpose(0, 2, 1, 3).reshape(shape)


def _check_bounds(fmap, coords):
    H, W = fmap.shape[-2:]
    if coords.size and (coords[:, 0].min() < 0 or coords[:, 1].min() < 0
                        or coords[:, 0].max() > W - 1 or coords[:, 1].max() > H - 1):
        raise OutOfBounds("sample coordinates outside the map")


def sample_at(fmap, coords):
    """Bilinear sample of a (C, H, W) or (H, W) map at (u, v) coords -> (M, C)."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 2:
        fmap = fmap[None]
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    _check_bounds(fmap, coords)
    return kernels.sample(fmap, coords)


def sample_at_backward(fmap, coords, g_out):
    """Returns (adjoint on the map, adjoint on the coords)."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 2:
        fmap = fmap[None]
    return kernels.sample_backward(fmap, np.atleast_2d(coords), np.atleast_2d(g_out))


def to_metric(coords, resolution, size):
    """Pixel (u, v) -> homogeneous metric points (x, y, 0, 1), sensor at centre."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    out = np.zeros((coords.shape[0], 4))
    out[:, :2] = (coords - size // 2) * resolution
    out[:, 3] = 1.0
    return out
