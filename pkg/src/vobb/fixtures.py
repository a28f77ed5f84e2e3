"""Deterministic mesh fixtures: cube, icosphere, dumbbell, and simple boxes.

All generators return (vertices, faces) as float64 / int32 arrays with
counter-clockwise (outward) winding, and every fixture is watertight.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "cube",
    "box",
    "icosphere",
    "dumbbell",
    "cube_pair",
    "write_obj",
    "write_stl",
]

# Unit cube triangulation: vertex k has coordinates (±h, ±h, ±h) in the
# order below; faces wind CCW seen from outside.
_CUBE_CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=np.float64,
)

_CUBE_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z-
        [4, 5, 6], [4, 6, 7],  # z+
        [0, 1, 5], [0, 5, 4],  # y-
        [2, 3, 7], [2, 7, 6],  # y+
        [0, 4, 7], [0, 7, 3],  # x-
        [1, 2, 6], [1, 6, 5],  # x+
    ],
    dtype=np.int32,
)


def cube(side=1.0, center=(0.0, 0.0, 0.0)):
    """Axis-aligned cube: 8 vertices, 12 triangles."""
    return box((side, side, side), center)


def box(sides, center=(0.0, 0.0, 0.0)):
    """Axis-aligned rectangular box with per-axis side lengths."""
    half = np.asarray(sides, dtype=np.float64) / 2.0
    verts = _CUBE_CORNERS * half + np.asarray(center, dtype=np.float64)
    return verts, _CUBE_FACES.copy()


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron projected onto a sphere (20 * 4**s faces)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts[0])
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]

    for _ in range(subdivisions):
        midpoint = {}
        new_faces = []

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = np.array(verts[a]) + np.array(verts[b])
                p /= np.linalg.norm(p)
                midpoint[key] = len(verts)
                verts.append(tuple(p))
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    v = np.array(verts, dtype=np.float64) * radius + np.asarray(center, dtype=np.float64)
    return v, np.array(faces, dtype=np.int32)


def _oriented(tri, outward, verts):
    """Return tri wound so its geometric normal points along `outward`."""
    a, b, c = (verts[i] for i in tri)
    n = np.cross(b - a, c - a)
    if np.dot(n, outward) < 0:
        return (tri[0], tri[2], tri[1])
    return tri


def _cube_with_hole(center_x, hole_x, half=0.5, hole_half=0.1):
    """Unit cube centered at (center_x, 0, 0) whose face at x=hole_x carries a
    square hole of half-width hole_half, triangulated as an annulus ring."""
    verts = list((_CUBE_CORNERS * half + np.array([center_x, 0.0, 0.0])))
    faces = []
    outward_x = 1.0 if hole_x > center_x else -1.0
    skip = 10 if outward_x > 0 else 8  # first triangle index of the holed face
    for k, f in enumerate(_CUBE_FACES):
        if k in (skip, skip + 1):
            continue
        faces.append(tuple(int(i) for i in f))

    ring = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    outer = []
    inner = []
    for y, z in ring:
        outer.append(len(verts))
        verts.append(np.array([hole_x, y * half, z * half]))
        inner.append(len(verts))
        verts.append(np.array([hole_x, y * hole_half, z * hole_half]))
    varr = np.array(verts)
    outward = np.array([outward_x, 0.0, 0.0])
    for i in range(4):
        j = (i + 1) % 4
        faces.append(_oriented((outer[i], outer[j], inner[j]), outward, varr))
        faces.append(_oriented((outer[i], inner[j], inner[i]), outward, varr))
    return varr, faces, [varr[i] for i in inner]


def dumbbell():
    """Two unit cubes at (±2, 0, 0) joined by a 0.2 x 0.2 square prism bridge.

    Watertight and connected; enclosed volume 2 + 0.2*0.2*3 = 2.12.
    """
    lv, lf, _ = _cube_with_hole(-2.0, -1.5)
    rv, rf, _ = _cube_with_hole(2.0, 1.5)

    verts = []
    index = {}

    def vid(p):
        key = (float(p[0]), float(p[1]), float(p[2]))
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    faces = []
    for varr, flist in ((lv, lf), (rv, rf)):
        for tri in flist:
            faces.append(tuple(vid(varr[i]) for i in tri))

    # Bridge tube: four sides, no caps (caps are the cube holes).
    h = 0.1
    x0, x1 = -1.5, 1.5
    sides = [
        (np.array([0.0, -1.0, 0.0]), [(x0, -h, -h), (x1, -h, -h), (x1, -h, h), (x0, -h, h)]),
        (np.array([0.0, 1.0, 0.0]), [(x0, h, -h), (x1, h, -h), (x1, h, h), (x0, h, h)]),
        (np.array([0.0, 0.0, -1.0]), [(x0, -h, -h), (x1, -h, -h), (x1, h, -h), (x0, h, -h)]),
        (np.array([0.0, 0.0, 1.0]), [(x0, -h, h), (x1, -h, h), (x1, h, h), (x0, h, h)]),
    ]
    for outward, quad in sides:
        ids = [vid(np.array(p)) for p in quad]
        varr = np.array(verts)
        faces.append(_oriented((ids[0], ids[1], ids[2]), outward, varr))
        faces.append(_oriented((ids[0], ids[2], ids[3]), outward, varr))

    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int32)


def cube_pair(gap_centers=(-2.0, 2.0), side=1.0):
    """Two disjoint unit cubes (disconnected but watertight solid)."""
    v1, f1 = cube(side, (gap_centers[0], 0.0, 0.0))
    v2, f2 = cube(side, (gap_centers[1], 0.0, 0.0))
    verts = np.vstack([v1, v2])
    faces = np.vstack([f1, f2 + len(v1)]).astype(np.int32)
    return verts, faces


def box_face_indices():
    """Twelve outward-CCW triangles over corners ordered by sign bits
    (x, y, z), matching Obb.corners()."""
    return np.array(
        [
            [0, 1, 3], [0, 3, 2],  # x-
            [4, 6, 7], [4, 7, 5],  # x+
            [0, 4, 5], [0, 5, 1],  # y-
            [2, 3, 7], [2, 7, 6],  # y+
            [0, 2, 6], [0, 6, 4],  # z-
            [1, 5, 7], [1, 7, 3],  # z+
        ],
        dtype=np.int32,
    )


def write_obj(path, verts, faces):
    """ASCII OBJ with v/f records, 1-based indices, deterministic bytes."""
    lines = []
    for v in verts:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    data = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(data)


def write_stl(path, verts, faces):
    """Binary STL (80-byte header, little-endian float32 triples)."""
    with open(path, "wb") as fh:
        fh.write(b"\x00" * 80)
        fh.write(struct.pack("<I", len(faces)))
        for f in faces:
            a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
            n = np.cross(b - a, c - a)
            norm = np.linalg.norm(n)
            if norm > 0:
                n = n / norm
            rec = struct.pack(
                "<12fH",
                n[0], n[1], n[2],
                a[0], a[1], a[2],
                b[0], b[1], b[2],
                c[0], c[1], c[2],
                0,
            )
            fh.write(rec)
