"""Outside bounding volume (OBV): the volume inside a box but outside the
solid, estimated by directional cone quadrature over a 6 x m x m cube-map
direction grid. Includes a voxel brute-force oracle and a memoization
cache keyed on quantized box parameters.

Each direction cell contributes (solid_angle / 3) * (b^3 - a^3) for every
maximal interval (a, b) on which the ray from the box center is outside
the solid, clipped at the box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mesh as mesh_mod
from . import obb as obb_mod

__all__ = [
    "EstimatorConfig",
    "DirectionGrid",
    "ObvCache",
    "build_direction_grid",
    "outer_length_profile",
    "estimate_obv",
    "brute_force_obv",
    "obv_cached",
]


@dataclass(frozen=True)
class EstimatorConfig:
    m: int = 32
    max_retry: int = 8
    cache_quantum: float = 1e-4

    def __post_init__(self):
        if self.m < 4:
            raise ValueError("m must be >= 4")
        if self.cache_quantum <= 0:
            raise ValueError("cache_quantum must be positive")


# cube face frames: (normal axis, sign, u axis, v axis)
_FACES = [
    (0, 1.0, 1, 2), (0, -1.0, 1, 2),
    (1, 1.0, 2, 0), (1, -1.0, 2, 0),
    (2, 1.0, 0, 1), (2, -1.0, 0, 1),
]


def _rect_solid_angle(x, y):
    """Solid angle of the rectangle [0,x] x [0,y] on the plane z=1, signed."""
    return np.arctan2(x * y, np.sqrt(1.0 + x * x + y * y))


@dataclass(frozen=True)
class DirectionGrid:
    m: int
    directions: np.ndarray    # (6*m*m, 3) unit vectors, box-local frame
    solid_angles: np.ndarray  # (6*m*m,), sums to 4*pi
    face_ids: np.ndarray      # (6*m*m,) int, cube face per direction
    uv: np.ndarray            # (6*m*m, 2) cell-center plane coordinates

    @property
    def cell_half_width(self):
        return 1.0 / self.m

    def direction_for_uv(self, face_id, u, v):
        d = np.zeros(3)
        axis, sign, ua, va = _FACES[face_id]
        d[axis] = sign
        d[ua] = u
        d[va] = v
        return d / np.linalg.norm(d)


def build_direction_grid(m):
    """Cube-map direction grid with exact per-cell solid angles."""
    m = int(m)
    if m < 4:
        raise ValueError("m must be >= 4")
    edges = np.linspace(-1.0, 1.0, m + 1)
    centers = (edges[:-1] + edges[1:]) / 2.0

    # per-cell solid angle on one face via the corner formula
    sa = _rect_solid_angle(edges[:, None], edges[None, :])
    cell = sa[1:, 1:] - sa[:-1, 1:] - sa[1:, :-1] + sa[:-1, :-1]

    dirs = []
    omegas = []
    fids = []
    uvs = []
    for fid, (axis, sign, ua, va) in enumerate(_FACES):
        u, v = np.meshgrid(centers, centers, indexing="ij")
        d = np.zeros((m, m, 3))
        d[..., axis] = sign
        d[..., ua] = u
        d[..., va] = v
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        dirs.append(d.reshape(-1, 3))
        omegas.append(cell.reshape(-1))
        fids.append(np.full(m * m, fid, dtype=np.int32))
        uvs.append(np.stack([u.reshape(-1), v.reshape(-1)], axis=1))
    return DirectionGrid(
        m=m,
        directions=np.ascontiguousarray(np.vstack(dirs)),
        solid_angles=np.concatenate(omegas),
        face_ids=np.concatenate(fids),
        uv=np.vstack(uvs),
    )


def outer_length_profile(mesh, obb, dir):
    """Maximal sub-intervals of [0, t_exit] along dir (from the box center)
    on which the point is outside the solid."""
    dir = np.asarray(dir, dtype=np.float64)
    dir = dir / np.linalg.norm(dir)
    te = obb_mod.ray_exit_distance(obb, obb.center, dir)
    hits = mesh_mod.ray_intersections(mesh, obb.center, dir, te)
    outside = not mesh_mod.point_in_solid(mesh, obb.center)
    intervals = []
    prev = 0.0
    for h in hits:
        if outside and h.distance > prev:
            intervals.append((prev, h.distance))
        outside = not outside
        prev = h.distance
    if outside and te > prev:
        intervals.append((prev, te))
    return intervals


def estimate_obv(mesh, obb, grid):
    """Deterministic cone-volume quadrature of the outside-the-solid volume
    within the box. 0 <= result <= box_volume."""
    if not mesh._watertight:
        raise mesh_mod.NotWatertightError("OBV undefined on non-watertight mesh")
    d_local = grid.directions
    te = obb_mod.exit_distances_from_center(obb, d_local)
    world_dirs = d_local @ obb.axes.T
    # back the origins up so a crossing at the center itself registers
    delta = 1e-9 * mesh.diagonal
    origins = obb.center - world_dirs * delta

    t, face, nh, bad = mesh_mod.batch_ray_query(
        mesh, origins, world_dirs, te + delta, strict=False
    )
    no_hit_outside = None
    if len(bad) > 0:
        # re-evaluate stubborn cells with a half-cell-shifted direction and,
        # if the geometry stays degenerate (e.g. center exactly on a surface
        # plane), an escalating sideways origin jitter of O(delta)
        half = grid.cell_half_width / 2.0
        new_local = np.array(
            [
                grid.direction_for_uv(
                    int(grid.face_ids[r]), grid.uv[r, 0] + half, grid.uv[r, 1] + half
                )
                for r in bad
            ]
        )
        te_bad = obb_mod.exit_distances_from_center(obb, new_local)
        new_world = new_local @ obb.axes.T
        # per-ray perpendicular: world axis least aligned with the ray,
        # orthogonalized against it
        least = np.argmin(np.abs(new_world), axis=1)
        perp = np.eye(3)[least] - new_world * new_world[
            np.arange(len(bad)), least
        ][:, None]
        perp /= np.linalg.norm(perp, axis=1, keepdims=True)
        perp2 = np.cross(new_world, perp)
        pending = np.arange(len(bad))
        t2 = np.zeros((len(bad), t.shape[1]))
        f2 = np.full((len(bad), t.shape[1]), -1, dtype=np.int64)
        n2 = np.zeros(len(bad), dtype=np.int64)
        origin_used = np.tile(obb.center, (len(bad), 1))
        for attempt in range(2 * EstimatorConfig().max_retry):
            # geometric growth, alternating two perpendiculars; worst-case
            # offset stays ~1e-6 of the mesh diagonal
            mag = delta * 3.0 ** (attempt // 2) * (attempt > 0)
            side = perp if attempt % 2 else perp2
            offs = new_world[pending] * (-delta) + side[pending] * mag
            tq, fq, nq, still = mesh_mod.batch_ray_query(
                mesh,
                np.ascontiguousarray(obb.center + offs),
                np.ascontiguousarray(new_world[pending]),
                te_bad[pending] + delta,
                strict=False,
            )
            ok = np.ones(len(pending), dtype=bool)
            ok[still] = False
            t2[pending[ok]] = tq[ok]
            f2[pending[ok]] = fq[ok]
            n2[pending[ok]] = nq[ok]
            origin_used[pending[ok]] = (obb.center + offs)[ok]
            pending = pending[~ok]
            if len(pending) == 0:
                break
        if len(pending) > 0:
            raise mesh_mod.DegenerateRayError(
                "%d quadrature rays degenerate after origin jitter" % len(pending)
            )
        t[bad] = t2
        face[bad] = f2
        nh[bad] = n2
        te = te.copy()
        te[bad] = te_bad
        world_dirs = world_dirs.copy()
        world_dirs[bad] = new_world
        # a jittered origin may land on either side of a surface running
        # through the center; crossing-free jittered rays must be classified
        # by their own origin, not the center's parity
        nohit = bad[n2 == 0]
        if len(nohit) > 0:
            inside = mesh_mod.points_in_solid(mesh, origin_used[n2 == 0])
            no_hit_outside = (nohit, ~inside)

    valid = face >= 0
    t_adj = np.maximum(t - delta, 0.0)
    dots = np.zeros_like(t)
    idx = np.nonzero(valid)
    dots[idx] = np.einsum(
        "ij,ij->i", mesh.face_normals[face[idx]], world_dirs[idx[0]]
    )
    # entry crossings (normal opposing the ray) open an outside interval
    signed = np.where(valid, -np.sign(dots) * t_adj**3, 0.0).sum(axis=1)

    # outside-at-exit: sign of the last crossing; center parity if none
    t_masked = np.where(valid, t, -np.inf)
    has_hit = nh > 0
    last = np.argmax(t_masked, axis=1)
    last_dot = dots[np.arange(len(t)), last]
    center_outside = not mesh_mod.point_in_solid(mesh, obb.center)
    fallback = np.full(len(t), center_outside)
    if no_hit_outside is not None:
        fallback[no_hit_outside[0]] = no_hit_outside[1]
    out_at_exit = np.where(has_hit, last_dot > 0, fallback)
    per_ray = np.where(out_at_exit, te**3, 0.0) + signed
    vol = float(np.dot(grid.solid_angles / 3.0, per_ray))
    return float(np.clip(vol, 0.0, obb_mod.box_volume(obb)))


def brute_force_obv(mesh, obb, n=64):
    """Voxel oracle: n^3 cell-center samples in the box's local frame;
    OBV ~ box_volume * (fraction outside the solid)."""
    if n < 16:
        raise ValueError("n must be >= 16")
    h = obb.half_extents
    edges = [np.linspace(-h[k], h[k], n + 1) for k in range(3)]
    cents = [(e[:-1] + e[1:]) / 2.0 for e in edges]
    gx, gy, gz = np.meshgrid(*cents, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    world = obb.center + local @ obb.axes.T

    outside = 0
    chunk = 65536
    for i in range(0, len(world), chunk):
        inside = mesh_mod.points_in_solid(mesh, world[i : i + chunk])
        outside += int((~inside).sum())
    frac = outside / len(world)
    return obb_mod.box_volume(obb) * frac


@dataclass
class ObvCache:
    """Memo of OBV values keyed by quantized box placement and extents.

    quantum_center also quantizes half-extents; quantum_rot is in radians.
    Deterministic values make last-writer-wins safe under concurrency.
    """

    quantum_center: float = 1e-4
    quantum_rot: float = 1e-4
    data: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def key(self, cluster_id, params, half_extents):
        qc, qr = self.quantum_center, self.quantum_rot
        return (
            cluster_id,
            tuple(np.round(params.center / qc).astype(np.int64)),
            tuple(np.round(params.rotation / qr).astype(np.int64)),
            tuple(np.round(half_extents / qc).astype(np.int64)),
        )

    def lookup(self, key):
        return self.data.get(key)

    def store(self, key, value):
        self.data[key] = value


def obv_cached(mesh, cluster_id, params, points, grid, cache, min_extent=None):
    """OBV of the tight box for (points, params), memoized."""
    box, val = obv_cached_box(mesh, cluster_id, params, points, grid, cache, min_extent)
    return val


def obv_cached_box(mesh, cluster_id, params, points, grid, cache, min_extent=None):
    points = np.atleast_2d(points)
    if points.size == 0:
        raise ValueError("empty point set")
    box = obb_mod.fit_tight(points, params, min_extent=min_extent)
    key = cache.key(cluster_id, params, box.half_extents)
    val = cache.lookup(key)
    if val is None:
        cache.misses += 1
        val = estimate_obv(mesh, box, grid)
        cache.store(key, val)
    else:
        cache.hits += 1
    return box, val
