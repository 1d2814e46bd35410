"""Hot numeric kernels.

Every kernel exists twice: a loop version compiled by numba and a vectorized
numpy version. The module-level names dispatch on ``USE_NUMBA``; both variants
stay importable (``NUMBA`` / ``NUMPY`` tables) so tests and the benchmark can
compare them directly.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------- im2col

@njit
def _im2col_nb(x, k):
    N, C, H, W = x.shape
    p = k // 2
    cols = np.empty((N, C * k * k, H * W))
    for n in range(N):
        for c in range(C):
            for dy in range(k):
                for dx in range(k):
                    row = (c * k + dy) * k + dx
                    j0 = max(0, p - dx)
                    j1 = min(W, W + p - dx)
                    for i in range(H):
                        base = i * W
                        si = i + dy - p
                        if si < 0 or si >= H:
                            cols[n, row, base:base + W] = 0.0
                            continue
                        cols[n, row, base:base + j0] = 0.0
                        cols[n, row, base + j1:base + W] = 0.0
                        cols[n, row, base + j0:base + j1] = x[n, c, si, j0 + dx - p:j1 + dx - p]
    return cols


@njit
def _col2im_nb(cols, shape, k):
    N, C, H, W = shape
    p = k // 2
    x = np.zeros((N, C, H, W))
    for n in range(N):
        for c in range(C):
            for dy in range(k):
                for dx in range(k):
                    row = (c * k + dy) * k + dx
                    j0 = max(0, p - dx)
                    j1 = min(W, W + p - dx)
                    for i in range(H):
                        si = i + dy - p
                        if si < 0 or si >= H:
                            continue
                        base = i * W
                        x[n, c, si, j0 + dx - p:j1 + dx - p] += cols[n, row, base + j0:base + j1]
    return x


def _im2col_np(x, k):
    N, C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((N, C, k * k, H, W))
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy * k + dx] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(N, C * k * k, H * W)


def _col2im_np(cols, shape, k):
    N, C, H, W = shape
    p = k // 2
    xp = np.zeros((N, C, H + 2 * p, W + 2 * p))
    c5 = cols.reshape(N, C, k * k, H, W)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy:dy + H, dx:dx + W] += c5[:, :, dy * k + dx]
    return xp[:, :, p:p + H, p:p + W].copy()


# ---------------------------------------------------------- bilinear sampling

@njit
def _corner(x, n):
    # floor index clamped so that (i0, i0 + 1) stays inside [0, n - 1]
    i0 = int(math.floor(x))
    if i0 >= n - 1:
        i0 = n - 2
    if i0 < 0:
        i0 = 0
    return i0, x - i0


@njit
def _sample_nb(fmap, coords):
    C, H, W = fmap.shape
    M = coords.shape[0]
    out = np.zeros((M, C))
    for m in range(M):
        u0, fu = _corner(coords[m, 0], W)
        v0, fv = _corner(coords[m, 1], H)
        w00 = (1 - fu) * (1 - fv)
        w01 = fu * (1 - fv)
        w10 = (1 - fu) * fv
        w11 = fu * fv
        for c in range(C):
            out[m, c] = (w00 * fmap[c, v0, u0] + w01 * fmap[c, v0, u0 + 1]
                         + w10 * fmap[c, v0 + 1, u0] + w11 * fmap[c, v0 + 1, u0 + 1])
    return out


@njit
def _sample_backward_nb(fmap, coords, gout):
    C, H, W = fmap.shape
    M = coords.shape[0]
    gmap = np.zeros((C, H, W))
    gcoords = np.zeros((M, 2))
    for m in range(M):
        u0, fu = _corner(coords[m, 0], W)
        v0, fv = _corner(coords[m, 1], H)
        du = 0.0
        dv = 0.0
        for c in range(C):
            g = gout[m, c]
            a = fmap[c, v0, u0]
            b = fmap[c, v0, u0 + 1]
            d = fmap[c, v0 + 1, u0]
            e = fmap[c, v0 + 1, u0 + 1]
            gmap[c, v0, u0] += g * (1 - fu) * (1 - fv)
            gmap[c, v0, u0 + 1] += g * fu * (1 - fv)
            gmap[c, v0 + 1, u0] += g * (1 - fu) * fv
            gmap[c, v0 + 1, u0 + 1] += g * fu * fv
            du += g * ((b - a) * (1 - fv) + (e - d) * fv)
            dv += g * ((d - a) * (1 - fu) + (e - b) * fu)
        gcoords[m, 0] = du
        gcoords[m, 1] = dv
    return gmap, gcoords


def _corners_np(x, n):
    i0 = np.clip(np.floor(x).astype(np.int64), 0, n - 2)
    return i0, x - i0


def _sample_np(fmap, coords):
    C, H, W = fmap.shape
    u0, fu = _corners_np(coords[:, 0], W)
    v0, fv = _corners_np(coords[:, 1], H)
    a = fmap[:, v0, u0]
    b = fmap[:, v0, u0 + 1]
    d = fmap[:, v0 + 1, u0]
    e = fmap[:, v0 + 1, u0 + 1]
    out = a * (1 - fu) * (1 - fv) + b * fu * (1 - fv) + d * (1 - fu) * fv + e * fu * fv
    return out.T.copy()


def _sample_backward_np(fmap, coords, gout):
    C, H, W = fmap.shape
    u0, fu = _corners_np(coords[:, 0], W)
    v0, fv = _corners_np(coords[:, 1], H)
    g = gout.T
    gmap = np.zeros((C, H * W))
    for di, dj, wgt in ((0, 0, (1 - fu) * (1 - fv)), (0, 1, fu * (1 - fv)),
                        (1, 0, (1 - fu) * fv), (1, 1, fu * fv)):
        idx = (v0 + di) * W + (u0 + dj)
        for c in range(C):
            np.add.at(gmap[c], idx, g[c] * wgt)
    a = fmap[:, v0, u0]
    b = fmap[:, v0, u0 + 1]
    d = fmap[:, v0 + 1, u0]
    e = fmap[:, v0 + 1, u0 + 1]
    du = np.sum(g * ((b - a) * (1 - fv) + (e - d) * fv), axis=0)
    dv = np.sum(g * ((d - a) * (1 - fu) + (e - b) * fu), axis=0)
    return gmap.reshape(C, H, W), np.stack([du, dv], axis=1)


# ------------------------------------------------------- image resampling

@njit
def _resample_nb(img, us, vs, nearest):
    H, W = img.shape
    out = np.zeros(us.shape)
    for i in range(us.shape[0]):
        for j in range(us.shape[1]):
            u = us[i, j]
            v = vs[i, j]
            if u < 0 or v < 0 or u > W - 1 or v > H - 1:
                continue
            if nearest:
                out[i, j] = img[int(math.floor(v + 0.5)), int(math.floor(u + 0.5))]
            else:
                u0, fu = _corner(u, W)
                v0, fv = _corner(v, H)
                out[i, j] = ((1 - fu) * (1 - fv) * img[v0, u0] + fu * (1 - fv) * img[v0, u0 + 1]
                             + (1 - fu) * fv * img[v0 + 1, u0] + fu * fv * img[v0 + 1, u0 + 1])
    return out


def _resample_np(img, us, vs, nearest):
    H, W = img.shape
    inside = (us >= 0) & (vs >= 0) & (us <= W - 1) & (vs <= H - 1)
    uc = np.clip(us, 0, W - 1)
    vc = np.clip(vs, 0, H - 1)
    if nearest:
        out = img[np.floor(vc + 0.5).astype(np.int64), np.floor(uc + 0.5).astype(np.int64)]
    else:
        u0, fu = _corners_np(uc, W)
        v0, fv = _corners_np(vc, H)
        out = ((1 - fu) * (1 - fv) * img[v0, u0] + fu * (1 - fv) * img[v0, u0 + 1]
               + (1 - fu) * fv * img[v0 + 1, u0] + fu * fv * img[v0 + 1, u0 + 1])
    return np.where(inside, out, 0.0)


# ------------------------------------------------------ polar projection

@njit
def _polar_to_cart_nb(intensity, valid, azimuths, range_res, size, res):
    A, B = intensity.shape
    img = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=np.bool_)
    half = size // 2
    max_range = (B - 1) * range_res
    for v in range(size):
        y = (v - half) * res
        for u in range(size):
            x = (u - half) * res
            rho = math.sqrt(x * x + y * y)
            if rho > max_range:
                continue
            a = math.atan2(y, x)
            if a < 0:
                a += TWO_PI
            i1 = np.searchsorted(azimuths, a, side="right")
            i0 = i1 - 1
            if i0 < 0:
                i0 = A - 1
                lo = azimuths[A - 1] - TWO_PI
            else:
                lo = azimuths[i0]
            if i1 >= A:
                i1 = 0
                hi = azimuths[0] + TWO_PI
            else:
                hi = azimuths[i1]
            fa = (a - lo) / (hi - lo)
            rb = rho / range_res
            b0 = int(math.floor(rb))
            if b0 >= B - 1:
                b0 = B - 2
            fb = rb - b0
            img[v, u] = ((1 - fa) * (1 - fb) * intensity[i0, b0] + (1 - fa) * fb * intensity[i0, b0 + 1]
                         + fa * (1 - fb) * intensity[i1, b0] + fa * fb * intensity[i1, b0 + 1])
            ia = i1 if fa >= 0.5 else i0
            ib = b0 + 1 if fb >= 0.5 else b0
            mask[v, u] = valid[ia, ib]
    return img, mask


def _polar_to_cart_np(intensity, valid, azimuths, range_res, size, res):
    A, B = intensity.shape
    half = size // 2
    coords = (np.arange(size) - half) * res
    x = coords[None, :]
    y = coords[:, None]
    rho = np.hypot(x, y)
    inside = rho <= (B - 1) * range_res
    a = np.mod(np.arctan2(y, x), TWO_PI)
    ext = np.concatenate([[azimuths[-1] - TWO_PI], azimuths, [azimuths[0] + TWO_PI]])
    j = np.searchsorted(ext, a, side="right")  # ext[j-1] <= a < ext[j]
    lo = ext[j - 1]
    hi = ext[j]
    i0 = (j - 2) % A
    i1 = (j - 1) % A
    fa = (a - lo) / (hi - lo)
    rb = np.minimum(rho / range_res, B - 1)
    b0 = np.minimum(np.floor(rb).astype(np.int64), B - 2)
    fb = rb - b0
    img = ((1 - fa) * (1 - fb) * intensity[i0, b0] + (1 - fa) * fb * intensity[i0, b0 + 1]
           + fa * (1 - fb) * intensity[i1, b0] + fa * fb * intensity[i1, b0 + 1])
    ia = np.where(fa >= 0.5, i1, i0)
    ib = np.where(fb >= 0.5, b0 + 1, b0)
    mask = valid[ia, ib] & inside
    return np.where(inside, img, 0.0), mask


# ------------------------------------------------------------- rendering

@njit
def _render_blobs_nb(azimuths, n_bins, range_res, lm_az, lm_rng, lm_refl, sigma_bins, sigma_az):
    A = azimuths.shape[0]
    out = np.zeros((A, n_bins))
    reach_b = 4.0 * sigma_bins
    for m in range(lm_az.shape[0]):
        rb = lm_rng[m] / range_res
        b_lo = max(0, int(math.floor(rb - reach_b)))
        b_hi = min(n_bins - 1, int(math.ceil(rb + reach_b)))
        for i in range(A):
            da = azimuths[i] - lm_az[m]
            da = (da + math.pi) % TWO_PI - math.pi
            za = da / sigma_az
            if abs(za) > 4.0:
                continue
            ga = math.exp(-0.5 * za * za) * lm_refl[m]
            for b in range(b_lo, b_hi + 1):
                zb = (b - rb) / sigma_bins
                if abs(zb) > 4.0:
                    continue
                out[i, b] += ga * math.exp(-0.5 * zb * zb)
    return out


def _render_blobs_np(azimuths, n_bins, range_res, lm_az, lm_rng, lm_refl, sigma_bins, sigma_az):
    out = np.zeros((azimuths.shape[0], n_bins))
    bins = np.arange(n_bins)
    for az, rng, refl in zip(lm_az, lm_rng, lm_refl):
        da = np.mod(azimuths - az + math.pi, TWO_PI) - math.pi
        za = da / sigma_az
        ga = np.where(np.abs(za) <= 4.0, np.exp(-0.5 * za * za) * refl, 0.0)
        zb = (bins - rng / range_res) / sigma_bins
        gb = np.where(np.abs(zb) <= 4.0, np.exp(-0.5 * zb * zb), 0.0)
        out += ga[:, None] * gb[None, :]
    return out


NUMBA = {
    "im2col": _im2col_nb, "col2im": _col2im_nb,
    "sample": _sample_nb, "sample_backward": _sample_backward_nb,
    "resample": _resample_nb, "polar_to_cart": _polar_to_cart_nb,
    "render_blobs": _render_blobs_nb,
}
NUMPY = {
    "im2col": _im2col_np, "col2im": _col2im_np,
    "sample": _sample_np, "sample_backward": _sample_backward_np,
    "resample": _resample_np, "polar_to_cart": _polar_to_cart_np,
    "render_blobs": _render_blobs_np,
}
ACTIVE = NUMBA if USE_NUMBA else NUMPY


def im2col(x, k=3):
    return ACTIVE["im2col"](np.ascontiguousarray(x, dtype=np.float64), k)


def col2im(cols, shape, k=3):
    return ACTIVE["col2im"](np.ascontiguousarray(cols), tuple(shape), k)


def sample(fmap, coords):
    return ACTIVE["sample"](np.ascontiguousarray(fmap, dtype=np.float64),
                            np.ascontiguousarray(coords, dtype=np.float64))


def sample_backward(fmap, coords, gout):
    return ACTIVE["sample_backward"](np.ascontiguousarray(fmap, dtype=np.float64),
                                     np.ascontiguousarray(coords, dtype=np.float64),
                                     np.ascontiguousarray(gout, dtype=np.float64))


def resample(img, us, vs, nearest=False):
    return ACTIVE["resample"](np.ascontiguousarray(img, dtype=np.float64),
                              np.ascontiguousarray(us, dtype=np.float64),
                              np.ascontiguousarray(vs, dtype=np.float64), bool(nearest))


def polar_to_cart(intensity, valid, azimuths, range_res, size, res):
    return ACTIVE["polar_to_cart"](np.ascontiguousarray(intensity, dtype=np.float64),
                                   np.ascontiguousarray(valid, dtype=np.bool_),
                                   np.ascontiguousarray(azimuths, dtype=np.float64),
                                   float(range_res), int(size), float(res))


def render_blobs(azimuths, n_bins, range_res, lm_az, lm_rng, lm_refl, sigma_bins, sigma_az):
    return ACTIVE["render_blobs"](np.ascontiguousarray(azimuths, dtype=np.float64), int(n_bins),
                                  float(range_res), np.ascontiguousarray(lm_az, dtype=np.float64),
                                  np.ascontiguousarray(lm_rng, dtype=np.float64),
                                  np.ascontiguousarray(lm_refl, dtype=np.float64),
                                  float(sigma_bins), float(sigma_az))
