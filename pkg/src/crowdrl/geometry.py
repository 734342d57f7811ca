"""Small 2D geometry kernels shared by the simulator and the ray sensor.

Everything here is vectorised with numpy broadcasting; shapes are noted on
each function because callers rely on them.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, TWO_PI)


def heading(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def rotate_into(vec, angle) -> np.ndarray:
    """Express ``vec`` in a frame whose +x axis points along ``angle``.

    This is the rotation by ``-angle``; broadcasting over leading axes of
    ``vec`` (..., 2) against ``angle`` (...).
    """
    vec = np.asarray(vec, dtype=float)
    c = np.cos(angle)
    s = np.sin(angle)
    x = vec[..., 0]
    y = vec[..., 1]
    return np.stack([c * x + s * y, -s * x + c * y], axis=-1)


def clamp_norm(vec: np.ndarray, max_norm: float) -> np.ndarray:
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, 1e-300), 1.0)
    return vec * scale


def closest_point_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closest points on segments ``a``-``b`` to points ``p``.

    p: (N, 2); a, b: (W, 2). Returns (N, W, 2).
    """
    ab = b - a
    denom = np.einsum("wi,wi->w", ab, ab)
    ap = p[:, None, :] - a[None, :, :]
    t = np.einsum("nwi,wi->nw", ap, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return a[None, :, :] + t[..., None] * ab[None, :, :]


def ray_circle_distance(origins, dirs, centers, radii):
    """Distance along unit rays to the first intersection with circles.

    origins: (A, 2); dirs: (A, R, 2); centers: (A, M, 2) or (M, 2);
    radii: broadcastable to (A, M). Returns (A, R, M); ``inf`` for misses and
    0 when the origin already lies inside the circle.
    """
    if centers.ndim == 2:
        centers = np.broadcast_to(centers, (origins.shape[0],) + centers.shape)
    radii = np.broadcast_to(radii, centers.shape[:2])
    w = centers - origins[:, None, :]  # (A, M, 2)
    b = np.einsum("ari,ami->arm", dirs, w)
    c = np.einsum("ami,ami->am", w, w) - radii**2  # (A, M)
    disc = b * b - c[:, None, :]
    with np.errstate(invalid="ignore"):
        t = b - np.sqrt(disc)
    hit = (disc >= 0.0) & (t >= 0.0)
    out = np.where(hit, t, np.inf)
    inside = np.broadcast_to((c <= 0.0)[:, None, :], out.shape)
    return np.where(inside, 0.0, out)


def ray_segment_distance(origins, dirs, a, b):
    """Distance along rays to zero-thickness segments a-b.

    origins: (A, 2); dirs: (A, R, 2); a, b: (W, 2). Returns (A, R, W).
    """
    e = b - a  # (W, 2)
    q = a[None, :, :] - origins[:, None, :]  # (A, W, 2)
    # Solve origin + t*u = a + s*e  via 2D cross products.
    cross_ue = dirs[..., 0, None] * e[None, None, :, 1] - dirs[..., 1, None] * e[None, None, :, 0]
    cross_qe = q[..., 0] * e[None, :, 1] - q[..., 1] * e[None, :, 0]  # (A, W)
    cross_qu = (q[:, None, :, 0] * dirs[..., 1, None]) - (q[:, None, :, 1] * dirs[..., 0, None])
    parallel = np.abs(cross_ue) < 1e-15
    denom = np.where(parallel, 1.0, cross_ue)
    t = cross_qe[:, None, :] / denom
    s = cross_qu / denom
    hit = (~parallel) & (t >= 0.0) & (s >= 0.0) & (s <= 1.0)
    return np.where(hit, t, np.inf)


def ray_capsule_distance(origins, dirs, a, b, half_width):
    """Distance along rays to capsules (segments inflated by ``half_width``).

    Returns (A, R, W); 0 when the origin is inside a capsule.
    """
    if a.shape[0] == 0:
        return np.full(dirs.shape[:2] + (0,), np.inf)
    half_width = np.asarray(half_width, dtype=float)
    e = b - a
    length = np.linalg.norm(e, axis=1)
    n = np.stack([-e[:, 1], e[:, 0]], axis=1) / np.where(length > 0, length, 1.0)[:, None]
    off = n * half_width[:, None]
    best = np.minimum(
        ray_circle_distance(origins, dirs, a, half_width[None, :]),
        ray_circle_distance(origins, dirs, b, half_width[None, :]),
    )
    best = np.minimum(best, ray_segment_distance(origins, dirs, a + off, b + off))
    best = np.minimum(best, ray_segment_distance(origins, dirs, a - off, b - off))
    closest = closest_point_on_segments(origins, a, b)
    inside = np.linalg.norm(origins[:, None, :] - closest, axis=-1) <= half_width[None, :]
    return np.where(inside[:, None, :], 0.0, best)
