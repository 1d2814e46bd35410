"""Reduced U-Net style feature network with explicit reverse mode.

Encoder block ``i`` runs at ``S / 2**i`` and is followed by 2x2 max-pooling;
decoder block ``i`` upsamples its input bilinearly, concatenates encoder
output ``i`` and applies the same double conv. Every block is
conv3x3 -> batch norm -> ReLU, twice. Two 1x1 heads read the last decoder
output: a detector score (1 channel) and weight scores (3 channels, or 1 for
the scalar-weight variant). Descriptors are the encoder outputs resized to
``S`` and concatenated.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import NoForwardTape, SizeIndivisible


@dataclass
class Architecture:
    enc_channels: tuple = (8, 16)
    in_channels: int = 1
    score_channels: int = 3
    cell_size: int = 16
    temperature: float = 100.0
    normalize_descriptors: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def descriptor_dim(self):
        return int(sum(self.enc_channels))

    @property
    def depth(self):
        return len(self.enc_channels)

    def to_dict(self):
        d = dict(self.__dict__)
        d["enc_channels"] = list(self.enc_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)

    def param_specs(self):
        """Ordered ``(name, shape)`` list defining the flat parameter layout."""
        specs = []

        def block(prefix, cin, cout):
            specs.extend([(f"{prefix}.conv1", (cout, cin, 3, 3)), (f"{prefix}.bn1.gamma", (cout,)),
                          (f"{prefix}.bn1.beta", (cout,)), (f"{prefix}.conv2", (cout, cout, 3, 3)),
                          (f"{prefix}.bn2.gamma", (cout,)), (f"{prefix}.bn2.beta", (cout,))])

        ch = self.enc_channels
        cin = self.in_channels
        for i, c in enumerate(ch):
            block(f"enc{i}", cin, c)
            cin = c
        for i in reversed(range(len(ch))):
            block(f"dec{i}", cin + ch[i], ch[i])
            cin = ch[i]
        specs += [("det.w", (1, ch[0])), ("det.b", (1,)),
                  ("wgt.w", (self.score_channels, ch[0])), ("wgt.b", (self.score_channels,))]
        return specs

    def buffer_specs(self):
        out = []
        for name, shape in self.param_specs():
            if name.endswith(".gamma"):
                base = name[: -len(".gamma")]
                out += [(base + ".mean", shape), (base + ".var", shape)]
        return out


def _layout(specs):
    offsets = {}
    pos = 0
    for name, shape in specs:
        n = int(np.prod(shape))
        offsets[name] = (pos, shape)
        pos += n
    return offsets, pos


class FeatureModel:
    """Parameters ``theta`` (flat float64 vector) plus batch-norm buffers."""

    def __init__(self, arch=None, theta=None, buffers=None, seed=0):
        self.arch = arch or Architecture()
        if self.arch.temperature <= 0:
            raise ValueError("softmax temperature must be positive")
        self._offsets, self.n_params = _layout(self.arch.param_specs())
        self._boffsets, self.n_buffers = _layout(self.arch.buffer_specs())
        if theta is None:
            theta = self._init_params(np.random.default_rng(seed))
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"parameter vector has length {theta.size}, expected {self.n_params}")
        self.theta = theta.copy()
        if buffers is None:
            buffers = np.zeros(self.n_buffers)
            for name, (off, shape) in self._boffsets.items():
                if name.endswith(".var"):
                    buffers[off:off + int(np.prod(shape))] = 1.0
        self.buffers = np.asarray(buffers, dtype=np.float64).copy()

    def _init_params(self, rng):
        theta = np.zeros(self.n_params)
        for name, (off, shape) in self._offsets.items():
            n = int(np.prod(shape))
            if name.endswith(".gamma"):
                theta[off:off + n] = 1.0
            elif len(shape) >= 2:
                fan_in = int(np.prod(shape[1:]))
                theta[off:off + n] = rng.normal(0.0, math.sqrt(2.0 / fan_in), n)
        return theta

    def param(self, name, theta=None):
        off, shape = self._offsets[name]
        src = self.theta if theta is None else theta
        return src[off:off + int(np.prod(shape))].reshape(shape)

    def buffer(self, name):
        off, shape = self._boffsets[name]
        return self.buffers[off:off + int(np.prod(shape))].reshape(shape)

    def param_slice(self, prefix):
        """Flat index array of every parameter whose name starts with ``prefix``."""
        idx = [np.arange(off, off + int(np.prod(shape)))
               for name, (off, shape) in self._offsets.items() if name.startswith(prefix)]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def copy(self):
        return FeatureModel(self.arch, self.theta, self.buffers)


# ------------------------------------------------------------------ layers

def _conv_fwd(x, w):
    N, C, H, W = x.shape
    cout = w.shape[0]
    cols = kernels.im2col(x, 3)
    y = np.matmul(w.reshape(cout, -1), cols).reshape(N, cout, H, W)
    return y, cols


def _conv_bwd(gy, cols, w, xshape):
    N, cout, H, W = gy.shape
    g2 = gy.reshape(N, cout, H * W)
    gw = sum(g2[n] @ cols[n].T for n in range(N)).reshape(w.shape)
    gcols = np.matmul(w.reshape(cout, -1).T, g2)
    return kernels.col2im(gcols, xshape, 3), gw


def _bn_fwd(x, gamma, beta, eps, stats):
    if stats is None:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        mean, var = stats
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv, mean, var, stats is None)


def _bn_bwd(gy, cache, gamma):
    xhat, inv, _, _, batch = cache
    gbeta = gy.sum(axis=(0, 2, 3))
    ggamma = (gy * xhat).sum(axis=(0, 2, 3))
    gxhat = gy * gamma[None, :, None, None]
    if batch:
        m = gy.shape[0] * gy.shape[2] * gy.shape[3]
        gx = (inv[None, :, None, None] / m) * (
            m * gxhat - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    else:
        gx = gxhat * inv[None, :, None, None]
    return gx, ggamma, gbeta


def _pool_fwd(x):
    N, C, H, W = x.shape
    r = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    arg = r.argmax(axis=-1)
    return np.take_along_axis(r, arg[..., None], -1)[..., 0], arg


def _pool_bwd(gy, arg, xshape):
    N, C, H, W = xshape
    g = np.zeros((N, C, H // 2, W // 2, 4))
    np.put_along_axis(g, arg[..., None], gy[..., None], -1)
    return g.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(xshape)


_RESIZE_CACHE = {}


def resize_matrix(n_in, n_out):
    """Linear-interpolation matrix (half-pixel centres, edge clamped)."""
    key = (n_in, n_out)
    if key not in _RESIZE_CACHE:
        A = np.zeros((n_out, n_in))
        scale = n_in / n_out
        for i in range(n_out):
            src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
            i0 = min(int(math.floor(src)), n_in - 1)
            f = src - i0
            A[i, i0] += 1.0 - f
            if f > 0:
                A[i, i0 + 1] += f
        _RESIZE_CACHE[key] = A
    return _RESIZE_CACHE[key]


def _resize_fwd(x, size):
    A = resize_matrix(x.shape[2], size)
    B = resize_matrix(x.shape[3], size)
    return np.matmul(A, np.matmul(x, B.T))


def _resize_bwd(gy, xshape):
    A = resize_matrix(xshape[2], gy.shape[2])
    B = resize_matrix(xshape[3], gy.shape[3])
    return np.matmul(A.T, np.matmul(gy, B))


# ----------------------------------------------------------------- forward

@dataclass
class Tape:
    """Activations recorded by ``forward``; consumed once by ``backward``."""
    theta: np.ndarray
    records: dict = field(default_factory=dict)
    shape: tuple = ()


@dataclass
class DenseMaps:
    detector: np.ndarray    # (N, 1, S, S)
    weights: np.ndarray     # (N, score_channels, S, S)
    descriptors: np.ndarray  # (N, D, S, S)


def _block_fwd(model, prefix, x, training, rec, update_stats):
    arch = model.arch
    for j in (1, 2):
        w = model.param(f"{prefix}.conv{j}")
        y, cols = _conv_fwd(x, w)
        bn = f"{prefix}.bn{j}"
        stats = None if training else (model.buffer(bn + ".mean"), model.buffer(bn + ".var"))
        z, bcache = _bn_fwd(y, model.param(bn + ".gamma"), model.param(bn + ".beta"), arch.bn_eps, stats)
        if training and update_stats:
            m = arch.bn_momentum
            n = y.shape[0] * y.shape[2] * y.shape[3]
            unbiased = bcache[3] * n / max(n - 1, 1)
            model.buffer(bn + ".mean")[:] = (1 - m) * model.buffer(bn + ".mean") + m * bcache[2]
            model.buffer(bn + ".var")[:] = (1 - m) * model.buffer(bn + ".var") + m * unbiased
        out = np.maximum(z, 0.0)
        rec[f"{prefix}.{j}"] = (x.shape, cols, bcache, z > 0)
        x = out
    return x


def _block_bwd(model, prefix, g, rec, grad):
    for j in (2, 1):
        xshape, cols, bcache, active = rec[f"{prefix}.{j}"]
        g = g * active
        bn = f"{prefix}.bn{j}"
        g, gg, gb = _bn_bwd(g, bcache, model.param(bn + ".gamma"))
        _acc(model, grad, bn + ".gamma", gg)
        _acc(model, grad, bn + ".beta", gb)
        w = model.param(f"{prefix}.conv{j}")
        g, gw = _conv_bwd(g, cols, w, xshape)
        _acc(model, grad, f"{prefix}.conv{j}", gw)
    return g


def _acc(model, grad, name, value):
    off, shape = model._offsets[name]
    grad[off:off + value.size] += value.reshape(-1)


def forward(model, images, training=True, update_stats=False):
    """Run the network on ``images`` of shape (N, S, S) or (N, C, S, S).

    Returns ``(DenseMaps, Tape)``. In training mode batch norm uses the batch
    statistics; ``update_stats`` also folds them into the running buffers.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[:, None]
    arch = model.arch
    S = x.shape[2]
    f = 2 ** arch.depth
    if S % f or x.shape[3] % f:
        raise SizeIndivisible(f"image size {x.shape[2:]} not divisible by {f}")
    rec = {}
    skips = []
    for i in range(arch.depth):
        x = _block_fwd(model, f"enc{i}", x, training, rec, update_stats)
        skips.append(x)
        x, arg = _pool_fwd(x)
        rec[f"pool{i}"] = (skips[-1].shape, arg)
    for i in reversed(range(arch.depth)):
        skip = skips[i]
        up = _resize_fwd(x, skip.shape[2])
        rec[f"up{i}"] = (x.shape, x.shape[1])
        x = _block_fwd(model, f"dec{i}", np.concatenate([up, skip], axis=1), training, rec, update_stats)
    feat = x
    det = np.einsum("oc,nchw->nohw", model.param("det.w"), feat) + model.param("det.b")[None, :, None, None]
    wgt = np.einsum("oc,nchw->nohw", model.param("wgt.w"), feat) + model.param("wgt.b")[None, :, None, None]
    desc = np.concatenate([s if s.shape[2] == S else _resize_fwd(s, S) for s in skips], axis=1)
    rec["head"] = feat
    rec["skip_shapes"] = [s.shape for s in skips]
    tape = Tape(model.theta.copy(), rec, x.shape)
    return DenseMaps(det, wgt, desc), tape


def backward(model, tape, g_detector=None, g_weights=None, g_descriptors=None):
    """Gradient of a scalar loss w.r.t. ``theta`` given its adjoints on the maps."""
    if tape is None or not tape.records:
        raise NoForwardTape("backward needs the tape returned by forward")
    if not np.array_equal(tape.theta, model.theta):
        raise NoForwardTape("parameters changed since the forward pass")
    arch = model.arch
    rec = tape.records
    grad = np.zeros(model.n_params)
    feat = rec["head"]
    N, C0, S, _ = feat.shape
    gfeat = np.zeros_like(feat)
    if g_detector is not None:
        _acc(model, grad, "det.w", np.einsum("nohw,nchw->oc", g_detector, feat))
        _acc(model, grad, "det.b", g_detector.sum(axis=(0, 2, 3)))
        gfeat += np.einsum("oc,nohw->nchw", model.param("det.w"), g_detector)
    if g_weights is not None:
        _acc(model, grad, "wgt.w", np.einsum("nohw,nchw->oc", g_weights, feat))
        _acc(model, grad, "wgt.b", g_weights.sum(axis=(0, 2, 3)))
        gfeat += np.einsum("oc,nohw->nchw", model.param("wgt.w"), g_weights)
    gskips = []
    pos = 0
    for shape in rec["skip_shapes"]:
        c = shape[1]
        if g_descriptors is None:
            gskips.append(np.zeros(shape))
        else:
            gd = g_descriptors[:, pos:pos + c]
            gskips.append(gd.copy() if shape[2] == S else _resize_bwd(gd, shape))
        pos += c
    g = gfeat
    for i in range(arch.depth):
        g = _block_bwd(model, f"dec{i}", g, rec, grad)
        cup = rec[f"up{i}"][1]
        gskips[i] += g[:, cup:]
        g = _resize_bwd(g[:, :cup], rec[f"up{i}"][0])
    for i in reversed(range(arch.depth)):
        shape, arg = rec[f"pool{i}"]
        g = _pool_bwd(g, arg, shape) + gskips[i]
        g = _block_bwd(model, f"enc{i}", g, rec, grad)
    return grad
