"""Per-window feature extraction and the M-step gradient.

``extract_window`` runs the network on all frames of a window, pulls out
keypoints, weights and descriptors per frame, and soft-matches every
non-reference frame against the reference (first) frame. ``mstep`` evaluates
the measurement part of the loss at fixed relative poses and backpropagates
it to the network parameters.
"""
from dataclasses import dataclass, field

import numpy as np

from . import keypoints as kp
from . import matching
from .network import backward, forward

DEFAULT_C = 1e4


@dataclass
class FeatureSet:
    keypoints: np.ndarray    # (L, 4) metric homogeneous, z = 0
    weights: np.ndarray      # (L, 3, 3)
    descriptors: np.ndarray  # (L, D) as used for matching
    cell_ids: np.ndarray     # (L,)
    scores_raw: np.ndarray   # (L, score_channels)
    pixels: np.ndarray       # (L, 2) (u, v)
    log_det_r: np.ndarray    # (L,)
    cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.keypoints.shape[0]

    def subset(self, keep):
        keep = np.asarray(keep)
        return FeatureSet(self.keypoints[keep], self.weights[keep], self.descriptors[keep],
                          self.cell_ids[keep], self.scores_raw[keep], self.pixels[keep],
                          self.log_det_r[keep], {})


@dataclass
class WindowFeatures:
    frames: list       # FeatureSet per frame; frames[0] is the reference
    matches: list      # MatchSet per frame; matches[0] is None
    maps: object
    tape: object
    resolution: float
    size: int


def frame_features(maps, n, valid_cells, arch, resolution, c=DEFAULT_C):
    S = maps.detector.shape[2]
    coords, ids, probs = kp.extract_keypoints(maps.detector[n, 0], valid_cells, arch.cell_size)
    scores = kp.sample_at(maps.weights[n], coords)
    raw_desc = kp.sample_at(maps.descriptors[n], coords)
    if arch.normalize_descriptors:
        desc, norm = matching.normalize(raw_desc)
    else:
        desc, norm = raw_desc, None
    W, logdet = matching.assemble_weight(scores, c, scalar=arch.score_channels == 1)
    cache = {"probs": probs, "norm": norm, "n": n}
    return FeatureSet(kp.to_metric(coords, resolution, S), W, desc, ids, scores, coords, logdet, cache)


def extract_window(model, images, valid_cells, resolution, training=True, update_stats=False,
                   c=DEFAULT_C):
    """Features for every frame of a window plus soft matches to frame 0.

    ``valid_cells`` is a list (one per frame) of boolean cell grids, or None
    entries to keep all cells.
    """
    maps, tape = forward(model, np.asarray(images), training=training, update_stats=update_stats)
    frames = [frame_features(maps, n, valid_cells[n], model.arch, resolution, c)
              for n in range(maps.detector.shape[0])]
    ref = frames[0]
    matches = [None]
    for f in frames[1:]:
        if len(ref) == 0 or len(f) == 0:
            matches.append(None)
            continue
        matches.append(matching.match(f.descriptors, ref.descriptors, ref.keypoints,
                                      model.arch.temperature))
    return WindowFeatures(frames, matches, maps, tape, resolution, maps.detector.shape[2])


def measurement_terms(z, r, W, T_rel):
    """Errors e = D(z - T_rel r) (L, 3) and squared Mahalanobis norms (L,)."""
    e = z[:, :3] - (r @ T_rel.T)[:, :3]
    u2 = np.einsum("li,lij,lj->l", e, W, e)
    return e, u2


@dataclass
class MStepResult:
    loss: float
    grad: np.ndarray
    inliers: int
    total: int


def mstep(model, wf, rel_poses, alpha=16.0, gate=True, c=DEFAULT_C):
    """Measurement loss at fixed poses and its gradient w.r.t. ``theta``.

    ``rel_poses[k]`` is ``T_{k,0} T_{0,tau}`` for frame k (entry 0 unused).
    Factors with ``e^T W e > alpha`` are left out when ``gate`` is set.
    """
    arch = model.arch
    scalar = arch.score_channels == 1
    N, _, S, _ = wf.maps.detector.shape
    res = wf.resolution
    ref = wf.frames[0]
    g_kpt = [np.zeros((len(f), 4)) for f in wf.frames]
    g_desc = [np.zeros_like(f.descriptors) for f in wf.frames]
    g_scores = [np.zeros_like(f.scores_raw) for f in wf.frames]
    loss = 0.0
    inliers = total = 0
    for k in range(1, N):
        ms = wf.matches[k]
        if ms is None:
            continue
        f = wf.frames[k]
        T = rel_poses[k]
        e, u2 = measurement_terms(f.keypoints, ms.points, f.weights, T)
        keep = u2 <= alpha if gate else np.ones(len(u2), dtype=bool)
        total += len(u2)
        inliers += int(keep.sum())
        if not keep.any():
            continue
        logdet_w = matching.log_det_weight(f.scores_raw, c, scalar)
        loss += float(np.sum(0.5 * u2[keep] - logdet_w[keep]))
        ge = np.einsum("lij,lj->li", f.weights, e) * keep[:, None]
        g_kpt[k][:, :3] += ge
        g_r = np.zeros((len(f), 4))
        g_r[:, :3] = -ge
        g_r = g_r @ T  # adjoint of r -> T r
        gd_src, gd_ref, gP = matching.match_backward(g_r, ms, f.descriptors, ref.descriptors,
                                                     ref.keypoints, arch.temperature)
        g_desc[k] += gd_src
        g_desc[0] += gd_ref
        g_kpt[0] += gP
        s = f.scores_raw
        if scalar:
            gs = np.zeros_like(s)
            gs[:, 0] = 0.5 * u2 - 3.0
        else:
            gs = np.zeros_like(s)
            a = e[:, 0] + s[:, 2] * e[:, 1]
            gs[:, 0] = 0.5 * np.exp(s[:, 0]) * a * a - 1.0
            gs[:, 1] = 0.5 * np.exp(s[:, 1]) * e[:, 1] ** 2 - 1.0
            gs[:, 2] = np.exp(s[:, 0]) * a * e[:, 1]
        g_scores[k] += gs * keep[:, None]
    g_det = np.zeros_like(wf.maps.detector)
    g_wgt = np.zeros_like(wf.maps.weights)
    g_dmap = np.zeros_like(wf.maps.descriptors)
    for n, f in enumerate(wf.frames):
        if len(f) == 0:
            continue
        g_pix = g_kpt[n][:, :2] * res
        gd = g_desc[n]
        if arch.normalize_descriptors:
            gd = matching.normalize_backward(gd, f.descriptors, f.cache["norm"])
        gm, gc = kp.sample_at_backward(wf.maps.descriptors[n], f.pixels, gd)
        g_dmap[n] += gm
        g_pix = g_pix + gc
        gm, gc = kp.sample_at_backward(wf.maps.weights[n], f.pixels, g_scores[n])
        g_wgt[n] += gm
        g_pix = g_pix + gc
        g_det[n, 0] += kp.extract_keypoints_backward(g_pix, f.cell_ids, f.cache["probs"],
                                                     (S, S), arch.cell_size)
    grad = backward(model, wf.tape, g_det, g_wgt, g_dmap)
    return MStepResult(loss, grad, inliers, total)
