"""Soft descriptor matching and LDL weight assembly."""
from dataclasses import dataclass

import numpy as np


@dataclass
class MatchSet:
    points: np.ndarray  # (L, 4) soft reference point per source keypoint
    scores: np.ndarray  # (L, N) raw responses c = d^T [d^1 .. d^N]
    probs: np.ndarray   # (L, N) softmax(T c)


def normalize(desc, eps=1e-12):
    norm = np.sqrt((desc * desc).sum(axis=-1, keepdims=True) + eps)
    return desc / norm, norm


def normalize_backward(g, unit, norm):
    return (g - unit * (g * unit).sum(axis=-1, keepdims=True)) / norm


def match(src_desc, ref_desc, ref_points, temperature=100.0):
    """Convex combination of ``ref_points`` weighted by softmax(T * dot products)."""
    src_desc = np.atleast_2d(src_desc)
    ref_desc = np.atleast_2d(ref_desc)
    if src_desc.shape[1] != ref_desc.shape[1]:
        raise ValueError("descriptor dimensions differ")
    if ref_desc.shape[0] < 1:
        raise ValueError("need at least one reference keypoint")
    c = src_desc @ ref_desc.T
    z = temperature * c
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return MatchSet(p @ ref_points, c, p)


def match_backward(g_points, ms, src_desc, ref_desc, ref_points, temperature=100.0):
    """Adjoints of ``match`` on (src_desc, ref_desc, ref_points)."""
    p = ms.probs
    gp = g_points @ ref_points.T
    gz = p * (gp - (p * gp).sum(axis=1, keepdims=True))
    gc = temperature * gz
    return gc @ ref_desc, gc.T @ src_desc, p.T @ g_points


def assemble_weight(scores, c=1e4, scalar=False):
    """Weight (inverse covariance) matrices from score vectors.

    ``scores`` is (L, 3) with rows (d1, d2, d3): ``R = L diag(e^d1, e^d2) L^T``
    with ``L = [[1, 0], [d3, 1]]`` and ``W = blkdiag(R, c)``. With
    ``scalar=True`` only d1 is read and ``W = e^d1 blkdiag(I2, c)``.
    Returns (W (L,3,3), log|R| (L,)).
    """
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n = s.shape[0]
    W = np.zeros((n, 3, 3))
    if scalar:
        e = np.exp(s[:, 0])
        W[:, 0, 0] = e
        W[:, 1, 1] = e
        W[:, 2, 2] = c * e
        return W, 2.0 * s[:, 0]
    d1, d2, d3 = s[:, 0], s[:, 1], s[:, 2]
    e1, e2 = np.exp(d1), np.exp(d2)
    W[:, 0, 0] = e1
    W[:, 0, 1] = W[:, 1, 0] = d3 * e1
    W[:, 1, 1] = d3 * d3 * e1 + e2
    W[:, 2, 2] = c
    return W, d1 + d2


def log_det_weight(scores, c=1e4, scalar=False):
    """ln|W| of the full 3x3 matrix."""
    s = np.atleast_2d(scores)
    if scalar:
        return 3.0 * s[:, 0] + np.log(c)
    return s[:, 0] + s[:, 1] + np.log(c)
