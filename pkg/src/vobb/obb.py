"""Oriented bounding box value type and primitive queries.

An Obb stores center, a right-handed orthonormal axes matrix (columns are
the local axes), and positive half-extents. ObbParams is the 6-parameter
optimization view: center plus an axis-angle rotation vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "Obb",
    "ObbParams",
    "fit_tight",
    "contains_point",
    "contains_points",
    "overlap",
    "ray_exit_distance",
    "box_volume",
]

DEGENERATE_EPS = 1e-6  # scaled by the reference diagonal at fit time


@dataclass(frozen=True)
class Obb:
    center: np.ndarray       # (3,)
    axes: np.ndarray         # (3,3), columns = local axes, det = +1
    half_extents: np.ndarray  # (3,) > 0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=np.float64))
        object.__setattr__(
            self, "half_extents", np.asarray(self.half_extents, dtype=np.float64)
        )

    def to_local(self, points):
        return (np.atleast_2d(points) - self.center) @ self.axes

    def corners(self):
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return self.center + (signs * self.half_extents) @ self.axes.T


@dataclass(frozen=True)
class ObbParams:
    """Box placement parameters: center plus axis-angle rotation (norm < pi)."""

    center: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    def matrix(self):
        return Rotation.from_rotvec(self.rotation).as_matrix()

    def compose(self, delta_rotvec):
        """Apply a local axis-angle increment onto the current orientation."""
        r = Rotation.from_rotvec(delta_rotvec) * Rotation.from_rotvec(self.rotation)
        return ObbParams(self.center, r.as_rotvec())

    def as_vector(self, length_scale=1.0):
        return np.concatenate([self.center / length_scale, self.rotation])

    @staticmethod
    def from_vector(x, length_scale=1.0):
        rot = np.asarray(x[3:6], dtype=np.float64)
        norm = np.linalg.norm(rot)
        if norm >= np.pi:
            rot = Rotation.from_rotvec(rot).as_rotvec()
        return ObbParams(np.asarray(x[0:3]) * length_scale, rot)


def fit_tight(points, params, recenter=False, min_extent=None):
    """Minimal half-extents box with the given orientation containing all
    points. By default the params center is respected; with recenter the
    center moves to the projection-interval midpoints (minimal volume for
    that orientation). Degenerate extents are inflated to min_extent."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.size == 0:
        raise ValueError("empty point set")
    axes = params.matrix()
    local = (points - params.center) @ axes
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    if recenter:
        mid = (lo + hi) / 2.0
        center = params.center + mid @ axes.T
        half = (hi - lo) / 2.0
    else:
        center = params.center.copy()
        half = np.maximum(np.abs(lo), np.abs(hi))
    if min_extent is None:
        diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
        min_extent = DEGENERATE_EPS * max(diag, 1.0)
    half = np.maximum(half, min_extent)
    return Obb(center=center, axes=axes, half_extents=half)


def contains_point(obb, p, eps=0.0):
    return bool(contains_points(obb, np.asarray(p, dtype=np.float64)[None, :], eps)[0])


def contains_points(obb, points, eps=0.0):
    local = obb.to_local(points)
    return np.all(np.abs(local) <= obb.half_extents + eps, axis=1)


def overlap(a, b):
    """Separating-axis test over 15 candidate axes; touching boxes overlap."""
    r = a.axes.T @ b.axes            # rotation of b in a's frame
    t = a.axes.T @ (b.center - a.center)
    absr = np.abs(r) + 1e-12         # robust against near-parallel axes

    ha, hb = a.half_extents, b.half_extents

    # a's face axes
    for i in range(3):
        if abs(t[i]) > ha[i] + hb @ absr[i]:
            return False
    # b's face axes
    for j in range(3):
        if abs(t @ r[:, j]) > ha @ absr[:, j] + hb[j]:
            return False
    # edge-pair cross products a_i x b_j
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            axis_len_sq = absr[i1, j] ** 2 + absr[i2, j] ** 2
            if axis_len_sq < 1e-18:
                continue  # near-parallel edges: axis is noise, skip
            lhs = abs(t[i2] * r[i1, j] - t[i1] * r[i2, j])
            ra = ha[i1] * absr[i2, j] + ha[i2] * absr[i1, j]
            rb = hb[j1] * absr[i, j2] + hb[j2] * absr[i, j1]
            if lhs > ra + rb:
                return False
    return True


def ray_exit_distance(obb, origin, dir, eps=1e-9):
    """Distance from an interior origin to the box boundary along dir."""
    local_o = (np.asarray(origin, dtype=np.float64) - obb.center) @ obb.axes
    local_d = np.asarray(dir, dtype=np.float64) @ obb.axes
    if np.any(np.abs(local_o) > obb.half_extents + eps * (1 + obb.half_extents.max())):
        raise ValueError("origin outside the box")
    t = np.inf
    for k in range(3):
        if local_d[k] > 0:
            t = min(t, (obb.half_extents[k] - local_o[k]) / local_d[k])
        elif local_d[k] < 0:
            t = min(t, (-obb.half_extents[k] - local_o[k]) / local_d[k])
    return float(max(t, 0.0))


def exit_distances_from_center(obb, local_dirs):
    """Vectorized slab exit distance for unit directions given in the box's
    local frame, rays starting at the center."""
    with np.errstate(divide="ignore"):
        t = obb.half_extents / np.abs(local_dirs)
    return t.min(axis=1)


def box_volume(obb):
    h = obb.half_extents
    return float(8.0 * h[0] * h[1] * h[2])
