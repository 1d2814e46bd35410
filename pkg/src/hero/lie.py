"""SE(3) algebra.

Twists are 6-vectors ordered ``(u, v)``: linear part first, angular part
second, so ``wedge(t) = [[v^, u], [0, 0]]``. Poses are 4x4 homogeneous
matrices. Perturbations are left-multiplicative, ``T <- exp(d^) T``.
"""
import functools
import math

import numpy as np

from .errors import AngleNearPi

SMALL_ANGLE = 1e-7
# below this angle the Jacobian coefficients switch to their Taylor series
_SERIES_ANGLE = 1e-2
_PI_MARGIN = 1e-6


def hat(v):
    """3-vector to 3x3 skew-symmetric matrix."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def wedge(t):
    t = np.asarray(t, dtype=float)
    m = np.zeros((4, 4))
    m[:3, :3] = hat(t[3:])
    m[:3, 3] = t[:3]
    return m


def vee(m):
    return np.array([m[0, 3], m[1, 3], m[2, 3], m[2, 1], m[0, 2], m[1, 0]])


def curlywedge(t):
    """6x6 adjoint of the algebra element, ``t^ = [[v^, u^], [0, v^]]``."""
    u1, u2, u3, v1, v2, v3 = (float(x) for x in t)
    return np.array([[0.0, -v3, v2, 0.0, -u3, u2],
                     [v3, 0.0, -v1, u3, 0.0, -u1],
                     [-v2, v1, 0.0, -u2, u1, 0.0],
                     [0.0, 0.0, 0.0, 0.0, -v3, v2],
                     [0.0, 0.0, 0.0, v3, 0.0, -v1],
                     [0.0, 0.0, 0.0, -v2, v1, 0.0]])


def odot(p):
    """4x6 matrix with ``wedge(t) @ p == odot(p) @ t`` for homogeneous ``p``."""
    out = np.zeros((4, 6))
    out[:3, :3] = p[3] * np.eye(3)
    out[:3, 3:] = -hat(p[:3])
    return out


def _coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with a series near zero."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return a, b, c
    s = math.sin(theta)
    half = math.sin(0.5 * theta)
    return s / theta, 2.0 * half * half / (theta * theta), (theta - s) / theta**3


def so3_exp(phi):
    theta = float(np.linalg.norm(phi))
    a, b, _ = _coeffs(theta)
    ph = hat(phi)
    return np.eye(3) + a * ph + b * ph @ ph


def so3_left_jacobian(phi):
    theta = float(np.linalg.norm(phi))
    _, b, c = _coeffs(theta)
    ph = hat(phi)
    return np.eye(3) + b * ph + c * ph @ ph


def so3_left_jacobian_inv(phi):
    theta = float(np.linalg.norm(phi))
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        k = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        k = (1.0 - half / math.tan(half)) / (theta * theta)
    ph = hat(phi)
    return np.eye(3) - 0.5 * ph + k * ph @ ph


def so3_log(C):
    """Rotation matrix to axis-angle vector; raises near a half turn."""
    tr = float(np.trace(C))
    axis_s = np.array([C[2, 1] - C[1, 2], C[0, 2] - C[2, 0], C[1, 0] - C[0, 1]])
    s = 0.5 * float(np.linalg.norm(axis_s))
    c = 0.5 * (tr - 1.0)
    theta = math.atan2(s, c)
    if theta >= math.pi - _PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")
    if theta < SMALL_ANGLE:
        # first order: C - C^T ~ 2 phi^
        return 0.5 * axis_s
    if theta < 3.0:
        return theta / (2.0 * s) * axis_s
    # sin(theta) is small here: read the axis off the symmetric part
    B = 0.5 * (C + C.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(B[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ axis_s < 0:
        axis = -axis
    return theta * axis


def exp_map(t):
    t = np.asarray(t, dtype=float)
    T = np.eye(4)
    phi = t[3:]
    T[:3, :3] = so3_exp(phi)
    T[:3, 3] = so3_left_jacobian(phi) @ t[:3]
    return T


def log_map(T):
    phi = so3_log(T[:3, :3])
    rho = so3_left_jacobian_inv(phi) @ T[:3, 3]
    return np.concatenate([rho, phi])


def inverse(T):
    out = np.eye(4)
    Ct = T[:3, :3].T
    out[:3, :3] = Ct
    out[:3, 3] = -Ct @ T[:3, 3]
    return out


def adjoint(T):
    C = T[:3, :3]
    out = np.zeros((6, 6))
    out[:3, :3] = C
    out[:3, 3:] = hat(T[:3, 3]) @ C
    out[3:, 3:] = C
    return out


def transform_point(T, hp):
    return T @ np.asarray(hp, dtype=float)


def _q_matrix(rho, phi):
    theta = float(np.linalg.norm(phi))
    rx, px = hat(rho), hat(phi)
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        b = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, co = math.sin(theta), math.cos(theta)
        t2 = theta * theta
        a = (theta - s) / theta**3
        b = (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2)
        c = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * theta**5)
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    return (0.5 * rx + a * (pr + rp + prp)
            + b * (px @ pr + rp @ px - 3.0 * prp)
            + c * (prp @ px + px @ prp))


def se3_left_jacobian(t):
    t = np.asarray(t, dtype=float)
    J = so3_left_jacobian(t[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[3:, 3:] = J
    out[:3, 3:] = _q_matrix(t[:3], t[3:])
    return out


def se3_left_jacobian_inv(t):
    t = np.asarray(t, dtype=float)
    Ji = so3_left_jacobian_inv(t[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = Ji
    out[3:, 3:] = Ji
    out[:3, 3:] = -Ji @ _q_matrix(t[:3], t[3:]) @ Ji
    return out


# B_n / n! for n = 0..; odd n > 1 vanish
_BERNOULLI_OVER_FACT = None


def _bernoulli_coeffs(n):
    global _BERNOULLI_OVER_FACT
    if _BERNOULLI_OVER_FACT is None or len(_BERNOULLI_OVER_FACT) < n:
        from fractions import Fraction

        B = [Fraction(1)]
        for m in range(1, n):
            acc = Fraction(0)
            for k in range(m):
                acc += Fraction(math.comb(m + 1, k)) * B[k]
            B.append(-acc / (m + 1))
        _BERNOULLI_OVER_FACT = np.array([float(B[k] / math.factorial(k)) for k in range(n)])
    return _BERNOULLI_OVER_FACT[:n]


@functools.lru_cache(maxsize=8)
def _hankel(terms):
    c = _bernoulli_coeffs(terms + 1)
    j, m = np.meshgrid(np.arange(terms), np.arange(terms), indexing="ij")
    k = m + j + 1
    return np.where(k <= terms, c[np.minimum(k, terms)], 0.0)


def jl_inv_times_jacobian(xi, w, terms=28):
    """Derivative of ``se3_left_jacobian_inv(xi) @ w`` with respect to ``xi``.

    Uses ``J^-1(xi) = sum_n B_n/n! (xi^)^n`` (curly wedge), convergent for
    rotation angles below 2*pi. Since ``d/dxi (A^n w) = -sum_j A^j (A^(n-1-j) w)^``
    and the curly wedge is linear, each Horner step needs one curly wedge.
    """
    A = curlywedge(xi)
    V = np.empty((terms, 6))
    V[0] = w
    for m in range(1, terms):
        V[m] = A @ V[m - 1]
    U = _hankel(terms) @ V
    out = np.zeros((6, 6))
    for j in range(terms - 1, -1, -1):
        out = A @ out - curlywedge(U[j])
    return out


def planar_pose(x, y, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    T = np.eye(4)
    T[0, 0], T[0, 1], T[1, 0], T[1, 1] = c, -s, s, c
    T[0, 3], T[1, 3] = x, y
    return T


def pose_xy_yaw(T):
    return float(T[0, 3]), float(T[1, 3]), math.atan2(T[1, 0], T[0, 0])


def is_valid_pose(T, tol=1e-9):
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    C = T[:3, :3]
    return (np.linalg.norm(C.T @ C - np.eye(3)) < tol and np.linalg.det(C) > 0
            and np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]))
