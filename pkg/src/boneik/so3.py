"""Rotation-group primitives.

All functions operate on numpy arrays and broadcast over leading
dimensions, so a "rotation" argument may be a single (3, 3) matrix or a
stack (..., 3, 3). Quaternions are (w, x, y, z) everywhere.
"""

from __future__ import annotations

import numpy as np

# Rejection norm below this fraction of the input norm makes the 6D
# representation degenerate.
SIX_D_EPS = 1e-8


class DegenerateRotationInputError(ValueError):
    """6D input whose columns cannot span a frame."""


def rot_from_6d(a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """Two 3-vectors -> rotation matrix with columns [x, y, x cross y].

    x is a1 normalized, y is a2 with its a1 component removed and
    normalized. Scaling a1 or adding multiples of a1 to a2 does not
    change the result. Orthonormalization runs in double precision and
    the result is cast back to the input dtype, so nearly collinear
    inputs cannot erode orthonormality below output rounding.
    """
    a1 = np.asarray(a1)
    a2 = np.asarray(a2)
    out_dtype = np.result_type(a1, a2)
    if out_dtype.kind != "f":
        out_dtype = np.dtype(np.float64)
    a1 = a1.astype(np.float64)
    a2 = a2.astype(np.float64)
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= SIX_D_EPS):
        raise DegenerateRotationInputError("first 6D column has (near-)zero norm")
    x = a1 / n1
    y = a2 - np.sum(a2 * x, axis=-1, keepdims=True) * x
    n2 = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(n2 <= SIX_D_EPS):
        raise DegenerateRotationInputError("6D columns are (near-)collinear")
    y = y / n2
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1).astype(out_dtype)


def geodesic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intrinsic angle between two rotations, in [0, pi].

    The value is arccos((tr(a'b) - 1) / 2), argument clamped to [-1, 1].
    arccos loses half the significant digits at both ends of its range,
    so angles near 0 are evaluated from the chord length and angles near
    pi from the sine of the relative rotation; identical inputs give
    exactly 0. Every branch is symmetric in a and b.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    tr = np.einsum("...ij,...ij->...", a, b)
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    small = cos > 0.5
    if np.any(small):
        chord = np.sqrt(np.sum((a - b) ** 2, axis=(-1, -2)))
        half = np.clip(chord / (2.0 * np.sqrt(2.0)), 0.0, 1.0)
        theta = np.where(small, 2.0 * np.arcsin(half), theta)
    large = cos < -0.5
    if np.any(large):
        r = np.swapaxes(a, -1, -2) @ b
        sin = 0.5 * np.sqrt(
            (r[..., 2, 1] - r[..., 1, 2]) ** 2
            + (r[..., 0, 2] - r[..., 2, 0]) ** 2
            + (r[..., 1, 0] - r[..., 0, 1]) ** 2
        )
        theta = np.where(large, np.pi - np.arcsin(np.clip(sin, 0.0, 1.0)),
                         theta)
    return theta


def axis_angle_to_matrix(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues formula; axis must be unit-norm."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + s * k + (1.0 - c) * (k @ k)


def matrix_to_axis_angle(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the Rodrigues map.

    Angle 0 returns the fixed axis (1, 0, 0). Angles near pi use the
    dominant eigenvector of the symmetric part, which stays stable where
    the skew part vanishes.
    """
    m = np.asarray(m, dtype=float)
    single = m.ndim == 2
    m = m.reshape((-1, 3, 3))
    tr = np.einsum("...ii->...", m)
    angle = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))

    axis = np.zeros(m.shape[:-1])
    axis[..., 0] = 1.0

    sin_a = np.sin(angle)
    generic = sin_a > 1e-6
    if np.any(generic):
        mg = m[generic]
        skew = np.stack(
            [
                mg[..., 2, 1] - mg[..., 1, 2],
                mg[..., 0, 2] - mg[..., 2, 0],
                mg[..., 1, 0] - mg[..., 0, 1],
            ],
            axis=-1,
        )
        axis[generic] = skew / (2.0 * sin_a[generic, None])

    near_pi = (~generic) & (angle > 1.0)
    if np.any(near_pi):
        # R ~= 2 a a^T - I there, so the axis is the unit eigenvector of
        # the symmetric part for eigenvalue ~1.
        sym = 0.5 * (m[near_pi] + np.swapaxes(m[near_pi], -1, -2))
        w, v = np.linalg.eigh(sym)
        cand = v[..., -1]
        # fix sign from the skew part when it has not fully vanished
        mg = m[near_pi]
        skew = np.stack(
            [
                mg[..., 2, 1] - mg[..., 1, 2],
                mg[..., 0, 2] - mg[..., 2, 0],
                mg[..., 1, 0] - mg[..., 0, 1],
            ],
            axis=-1,
        )
        flip = np.sum(cand * skew, axis=-1) < 0.0
        cand[flip] *= -1.0
        axis[near_pi] = cand

    if single:
        return axis[0], float(angle[0])
    return axis, angle


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix. Normalizes input."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    m = np.asarray(m, dtype=float)
    single = m.ndim == 2
    m = m.reshape((-1, 3, 3))
    t = np.einsum("...ii->...", m)
    q = np.empty(m.shape[:-2] + (4,))

    # Shepperd's method: pick the largest of (w, x, y, z) pivots per matrix.
    cand = np.stack([t, m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1)
    pivot = np.argmax(cand, axis=-1)

    for p in range(4):
        sel = pivot == p
        if not np.any(sel):
            continue
        ms = m[sel]
        if p == 0:
            r = np.sqrt(1.0 + t[sel])
            s = 0.5 / r
            qs = np.stack(
                [
                    0.5 * r,
                    (ms[..., 2, 1] - ms[..., 1, 2]) * s,
                    (ms[..., 0, 2] - ms[..., 2, 0]) * s,
                    (ms[..., 1, 0] - ms[..., 0, 1]) * s,
                ],
                axis=-1,
            )
        else:
            i = p - 1
            j = (i + 1) % 3
            k = (i + 2) % 3
            r = np.sqrt(1.0 + ms[..., i, i] - ms[..., j, j] - ms[..., k, k])
            s = 0.5 / r
            qs = np.empty(ms.shape[:-2] + (4,))
            qs[..., 0] = (ms[..., k, j] - ms[..., j, k]) * s
            qs[..., 1 + i] = 0.5 * r
            qs[..., 1 + j] = (ms[..., j, i] + ms[..., i, j]) * s
            qs[..., 1 + k] = (ms[..., k, i] + ms[..., i, k]) * s
        q[sel] = qs

    q = np.where(q[..., :1] < 0.0, -q, q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return q[0] if single else q


def axis_errors(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swing/twist diagnostics for bone-aligned frames, in radians.

    Swing is the angle between the first columns (bone axes), twist the
    angle between the second columns.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    swing = np.arccos(np.clip(np.sum(pred[..., 0] * gt[..., 0], axis=-1), -1.0, 1.0))
    twist = np.arccos(np.clip(np.sum(pred[..., 1] * gt[..., 1], axis=-1), -1.0, 1.0))
    return swing, twist


def random_rotation(rng: np.random.Generator, max_angle: float, count: int | None = None) -> np.ndarray:
    """Uniform random unit axis, angle uniform in [0, max_angle]."""
    if not 0.0 < max_angle <= np.pi:
        raise ValueError(f"max_angle must be in (0, pi], got {max_angle}")
    n = 1 if count is None else count
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(0.0, max_angle, size=n)
    m = axis_angle_to_matrix(axis, angle)
    return m[0] if count is None else m


def is_rotation(m: np.ndarray, tol: float = 1e-6) -> bool:
    """Orthonormality and det +1 within tol, over all leading dims."""
    m = np.asarray(m)
    eye = np.eye(3)
    orth = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max()
    det = np.abs(np.linalg.det(m) - 1.0).max()
    return bool(orth <= tol and det <= tol)
