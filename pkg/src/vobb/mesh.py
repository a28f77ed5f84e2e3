"""Watertight triangle mesh loading, validation, and ray/point queries.

A TriangleMesh is immutable after construction; all queries are read-only.
Inside/outside tests use ray-crossing parity with a deterministic retry
schedule for grazing rays, and points exactly on the surface count as
inside.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

__all__ = [
    "TriangleMesh",
    "RayHit",
    "SolidityReport",
    "MeshError",
    "DegenerateRayError",
    "NotWatertightError",
    "load_mesh",
    "build_mesh",
    "validate_solid",
    "point_in_solid",
    "points_in_solid",
    "ray_intersections",
]

MAX_RETRIES = 8
_RETRY_ANGLE = 1e-7


class MeshError(ValueError):
    """Malformed or unusable mesh input."""


class NotWatertightError(MeshError):
    """Volume query on a mesh whose inside/outside parity is undefined."""


class DegenerateRayError(RuntimeError):
    """Ray stayed degenerate after the full perturbation schedule."""


@dataclass(frozen=True)
class RayHit:
    distance: float
    normal: np.ndarray
    face_id: int


@dataclass(frozen=True)
class SolidityReport:
    watertight: bool
    consistently_oriented: bool
    signed_volume: float
    defect_edges: tuple


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (V, 3) float64
    faces: np.ndarray             # (F, 3) int32
    face_adjacency: np.ndarray    # (F, 3) int32, -1 where no neighbor
    bounds: np.ndarray            # (2, 3): min corner, max corner
    face_normals: np.ndarray = field(repr=False, default=None)
    face_centroids: np.ndarray = field(repr=False, default=None)
    _bvh: tuple = field(repr=False, default=None)
    _watertight: bool = field(repr=False, default=False)
    query_count: int = field(repr=False, default=0)  # instrumentation only

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

    @property
    def n_faces(self):
        return len(self.faces)

    def triangle(self, f):
        return self.vertices[self.faces[f]]


def build_mesh(vertices, faces):
    """Construct a TriangleMesh with adjacency, normals, and a BVH index."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int32)
    if len(faces) == 0:
        raise MeshError("mesh has no faces")
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise MeshError("face references out-of-range vertex index")
    if np.any(
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    ):
        raise MeshError("degenerate face (repeated vertex index)")

    tri = vertices[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(n, axis=1)
    if np.any(norms <= 0):
        raise MeshError("zero-area face")
    normals = n / norms[:, None]

    adjacency = _face_adjacency(faces)
    bounds = np.vstack([vertices.min(axis=0), vertices.max(axis=0)])
    mesh = TriangleMesh(
        vertices=vertices,
        faces=faces,
        face_adjacency=adjacency,
        bounds=bounds,
        face_normals=normals,
        face_centroids=tri.mean(axis=1),
        _bvh=_kernels.build_bvh(vertices, faces),
    )
    report = validate_solid(mesh)
    mesh._watertight = report.watertight and report.consistently_oriented
    return mesh


def _face_adjacency(faces):
    edge_map = {}
    for f, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_map.setdefault(key, []).append(f)
    adj = np.full((len(faces), 3), -1, dtype=np.int32)
    for f, (a, b, c) in enumerate(faces):
        for k, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            owners = edge_map[(min(u, v), max(u, v))]
            for g in owners:
                if g != f:
                    adj[f, k] = g
                    break
    return adj


def load_mesh(path, format=None):
    """Load an OBJ or binary STL file. Format inferred from extension."""
    path = str(path)
    if format is None:
        format = "stl-binary" if path.lower().endswith(".stl") else "obj"
    if format == "obj":
        verts, faces = _parse_obj(path)
    elif format == "stl-binary":
        verts, faces = _parse_stl(path)
    else:
        raise MeshError(f"unknown format {format!r}")
    return build_mesh(verts, faces)


def _parse_obj(path):
    verts = []
    faces = []
    with open(path, "r", encoding="ascii") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{ln}: malformed vertex record")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshError(f"{path}:{ln}: only triangle faces supported")
                idx = []
                for tok in parts[1:]:
                    tok = tok.split("/")[0]
                    i = int(tok)
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                faces.append(idx)
    if not faces:
        raise MeshError(f"{path}: empty mesh (no faces)")
    verts = np.array(verts, dtype=np.float64)
    faces = np.array(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(verts):
        raise MeshError(f"{path}: face references out-of-range vertex index")
    return verts, faces.astype(np.int32)


def _parse_stl(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84:
        raise MeshError(f"{path}: truncated STL header")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise MeshError(f"{path}: truncated STL body")
    if n == 0:
        raise MeshError(f"{path}: empty mesh (no faces)")
    raw = np.frombuffer(data, dtype=np.uint8, count=50 * n, offset=84)
    raw = raw.reshape(n, 50)
    tri = raw[:, 12:48].copy().view("<f4").reshape(n, 3, 3).astype(np.float64)

    # weld duplicated vertices by exact coordinate match
    index = {}
    verts = []
    faces = np.empty((n, 3), dtype=np.int32)
    for f in range(n):
        for k in range(3):
            key = (tri[f, k, 0], tri[f, k, 1], tri[f, k, 2])
            vid = index.get(key)
            if vid is None:
                vid = len(verts)
                index[key] = vid
                verts.append(key)
            faces[f, k] = vid
    return np.array(verts, dtype=np.float64), faces


def validate_solid(mesh):
    """Edge-incidence and orientation diagnosis plus divergence-theorem volume."""
    faces = mesh.faces
    directed = {}
    undirected = {}
    for f, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            directed[(u, v)] = directed.get((u, v), 0) + 1
            key = (min(u, v), max(u, v))
            undirected[key] = undirected.get(key, 0) + 1

    defect = []
    oriented = True
    for (u, v), cnt in sorted(undirected.items()):
        if cnt != 2:
            defect.append((int(u), int(v)))
        else:
            if directed.get((u, v), 0) != 1 or directed.get((v, u), 0) != 1:
                oriented = False
    watertight = not defect

    tri = mesh.vertices[faces]
    vol = float(np.einsum("ij,ij->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0)
    if watertight and vol <= 0:
        oriented = False
    return SolidityReport(
        watertight=watertight,
        consistently_oriented=oriented,
        signed_volume=vol,
        defect_edges=tuple(defect),
    )


def _rotate(vec, axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1 - c)


_RETRY_AXES = np.eye(3)


def _perturbed_dir(dir, attempt):
    """Deterministic retry schedule: tiny rotations about cycling fixed axes."""
    axis = _RETRY_AXES[attempt % 3]
    if abs(np.dot(axis, dir)) > 1.0 - 1e-12:
        axis = _RETRY_AXES[(attempt + 1) % 3]
    d = _rotate(dir, axis, _RETRY_ANGLE * (attempt + 1))
    return d / np.linalg.norm(d)


def _grazing_tol(mesh):
    return 1e-9


def batch_ray_query(mesh, origins, dirs, tmaxs, strict=True):
    """All hits per ray with automatic retry of degenerate rays.

    Returns (t (R,H), face (R,H), n_hits (R,)) in strict mode, raising
    DegenerateRayError when a ray stays degenerate after the retry
    schedule. With strict=False, returns a fourth array of unresolved ray
    indices instead of raising.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    tmaxs = np.ascontiguousarray(tmaxs, dtype=np.float64)
    mesh.query_count += 1
    t, face, nh, flags = _kernels.batch_ray_query(
        origins, dirs, tmaxs, mesh.vertices, mesh.faces, *mesh._bvh,
        _grazing_tol(mesh),
    )
    if flags.any():
        bad = np.flatnonzero(flags)
        for attempt in range(MAX_RETRIES):
            new_dirs = np.array([_perturbed_dir(dirs[r], attempt) for r in bad])
            t2, f2, n2, fl2 = _kernels.batch_ray_query(
                np.ascontiguousarray(origins[bad]), np.ascontiguousarray(new_dirs),
                np.ascontiguousarray(tmaxs[bad]),
                mesh.vertices, mesh.faces, *mesh._bvh, _grazing_tol(mesh),
            )
            ok = ~fl2
            sel = bad[ok]
            t[sel] = t2[ok]
            face[sel] = f2[ok]
            nh[sel] = n2[ok]
            bad = bad[~ok]
            if len(bad) == 0:
                break
        if len(bad) > 0 and strict:
            raise DegenerateRayError(
                f"{len(bad)} rays degenerate after {MAX_RETRIES} retries"
            )
    else:
        bad = np.empty(0, dtype=np.int64)
    if strict:
        return t, face, nh
    return t, face, nh, bad


def ray_intersections(mesh, origin, dir, max_dist):
    """Sorted hits with distance in [0, max_dist] along a unit direction."""
    dir = np.asarray(dir, dtype=np.float64)
    if abs(np.linalg.norm(dir) - 1.0) > 1e-9:
        raise ValueError("direction must have unit norm")
    t, face, nh = batch_ray_query(
        mesh, np.asarray(origin, dtype=np.float64)[None, :], dir[None, :],
        np.array([float(max_dist)]),
    )
    n = int(nh[0])
    order = np.argsort(t[0, :n], kind="stable")
    return [
        RayHit(
            distance=float(t[0, i]),
            normal=mesh.face_normals[face[0, i]].copy(),
            face_id=int(face[0, i]),
        )
        for i in order
    ]


_INSIDE_DIR = np.array([0.12350921038168636, 0.3546479285374932, 0.9268214346473902])
_INSIDE_DIR.setflags(write=False)


def points_in_solid(mesh, points):
    """Vectorized ray-crossing parity test; surface points count as inside.

    Origins are nudged backwards along the cast direction by 1e-9 * diagonal
    so that on-surface points register their own face as a crossing. Points
    whose rays stay degenerate through the retry schedule (typically points
    exactly on an edge) fall back to a surface-distance check."""
    if not mesh._watertight:
        raise NotWatertightError("point-in-solid parity undefined on this mesh")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    shift = 1e-9 * mesh.diagonal
    n = len(points)
    dirs = np.broadcast_to(_INSIDE_DIR, (n, 3)).copy()
    tmaxs = np.full(n, 4.0 * mesh.diagonal + 1.0)
    origins = points - dirs * shift
    t, face, nh, bad = batch_ray_query(mesh, origins, dirs, tmaxs, strict=False)
    inside = (nh % 2) == 1
    for r in bad:
        if surface_distance(mesh, points[r]) <= 2.0 * shift:
            inside[r] = True
        else:
            raise DegenerateRayError(
                "point-in-solid ray degenerate away from the surface"
            )
    return inside


def surface_distance(mesh, p):
    """Exact distance from a point to the triangulated surface."""
    p = np.asarray(p, dtype=np.float64)
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def take(mask, pts):
        m = mask & ~done
        closest[m] = pts[m] if pts.ndim == 2 else pts
        done[m] = True

    take((d1 <= 0) & (d2 <= 0), a)
    take((d3 >= 0) & (d4 <= d3), b)
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 != d3, d1 / (d1 - d3), 0.0)
    take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)
    take((d6 >= 0) & (d5 <= d6), c)
    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(d2 != d6, d2 / (d2 - d6), 0.0)
    take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)
    va = d3 * d6 - d5 * d4
    denom_bc = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
    take((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))
    denom = np.maximum(va + vb + vc, 1e-300)
    v = vb / denom
    w = vc / denom
    take(np.ones(len(a), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return float(np.sqrt(((p - closest) ** 2).sum(axis=1).min()))


def point_in_solid(mesh, p):
    """True iff p is inside the closed solid (surface points inclusive)."""
    return bool(points_in_solid(mesh, np.asarray(p, dtype=np.float64)[None, :])[0])


def brute_force_point_in_solid(mesh, p):
    """Acceleration-free oracle: scan every face for crossings."""
    if not mesh._watertight:
        raise NotWatertightError("point-in-solid parity undefined on this mesh")
    p = np.asarray(p, dtype=np.float64)
    shift = 1e-9 * mesh.diagonal
    for attempt in range(MAX_RETRIES + 1):
        d = _INSIDE_DIR if attempt == 0 else _perturbed_dir(_INSIDE_DIR, attempt - 1)
        count, ok = _brute_crossings(mesh, p - d * shift, d)
        if ok:
            return count % 2 == 1
    if surface_distance(mesh, p) <= 2.0 * shift:
        return True
    raise DegenerateRayError("degenerate after retries")


def _brute_crossings(mesh, origin, dir):
    tri = mesh.vertices[mesh.faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    pvec = np.cross(dir, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    safe = np.abs(det) > 1e-14
    tvec = origin - tri[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.einsum("ij,ij->i", tvec, pvec) / det
        qvec = np.cross(tvec, e1)
        v = np.dot(qvec, dir) / det
        t = np.einsum("ij,ij->i", e2, qvec) / det
    w = 1.0 - u - v
    margin = np.minimum(np.minimum(u, v), w)
    hit = safe & (margin >= 0) & (t > 0)
    grazing = safe & (np.abs(margin) < 1e-9) & (t > 0)
    if grazing.any():
        return 0, False
    return int(hit.sum()), True
