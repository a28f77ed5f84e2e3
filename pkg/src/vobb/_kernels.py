"""Numba kernels: BVH construction/traversal, batched ray-triangle queries,
and triangle-triangle intersection counting.

All kernels are deterministic: traversal order is fixed and per-ray
accumulation is sequential, so results do not depend on thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MAX_HITS = 64

_DET_EPS = 1e-14


def build_bvh(verts, faces, leaf_size=4):
    """Median-split BVH over triangles; returns flat arrays.

    nodes: bbox_min (N,3), bbox_max (N,3), left (N,), right (N,),
    start (N,), count (N,) with count > 0 marking leaves, plus the
    permutation of triangle indices referenced by leaves.
    """
    tri = verts[faces]  # (F, 3, 3)
    fmin = tri.min(axis=1)
    fmax = tri.max(axis=1)
    cent = tri.mean(axis=1)

    bb_min, bb_max, left, right, start, count = [], [], [], [], [], []
    order = []

    def rec(idx):
        node = len(bb_min)
        bb_min.append(fmin[idx].min(axis=0))
        bb_max.append(fmax[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(-1)
        count.append(0)
        if len(idx) <= leaf_size:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(idx.tolist())
            return node
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = len(idx) // 2
        part = idx[np.argsort(c[:, axis], kind="stable")]
        left[node] = rec(part[:mid])
        right[node] = rec(part[mid:])
        return node

    import sys

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10000))
    try:
        rec(np.arange(len(faces), dtype=np.int64))
    finally:
        sys.setrecursionlimit(old)

    return (
        np.array(bb_min, dtype=np.float64),
        np.array(bb_max, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(start, dtype=np.int32),
        np.array(count, dtype=np.int32),
        np.array(order, dtype=np.int32),
    )


@njit(cache=True)
def _ray_query_one(
    ox, oy, oz, dx, dy, dz, tmax,
    verts, faces,
    bb_min, bb_max, left, right, start, count, order,
    out_t, out_face, out_margin, grazing_tol,
):
    """Collect all ray-triangle hits with t in (0, tmax].

    Returns (n_hits, flag). flag is set when any candidate hit grazes a
    triangle edge (barycentric margin within grazing_tol), is near-parallel
    and near-coplanar, or when the hit buffer overflows; callers must then
    retry with a perturbed direction.
    """
    n_hits = 0
    flag = False
    stack = np.empty(128, dtype=np.int32)
    sp = 0
    stack[sp] = 0
    sp += 1
    inv = np.empty(3)
    o = np.empty(3)
    d = np.empty(3)
    o[0], o[1], o[2] = ox, oy, oz
    d[0], d[1], d[2] = dx, dy, dz
    for k in range(3):
        inv[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf

    while sp > 0:
        sp -= 1
        node = stack[sp]
        # slab test
        t0 = 0.0
        t1 = tmax * (1.0 + 1e-12) + 1e-300
        ok = True
        for k in range(3):
            if d[k] != 0.0:
                a = (bb_min[node, k] - o[k]) * inv[k]
                b = (bb_max[node, k] - o[k]) * inv[k]
                if a > b:
                    a, b = b, a
                if a > t0:
                    t0 = a
                if b < t1:
                    t1 = b
            else:
                if o[k] < bb_min[node, k] or o[k] > bb_max[node, k]:
                    ok = False
                    break
        if not ok or t0 > t1 * (1.0 + 1e-12) + 1e-300:
            continue
        if count[node] > 0:
            for i in range(start[node], start[node] + count[node]):
                f = order[i]
                i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
                ax, ay, az = verts[i0, 0], verts[i0, 1], verts[i0, 2]
                e1x = verts[i1, 0] - ax
                e1y = verts[i1, 1] - ay
                e1z = verts[i1, 2] - az
                e2x = verts[i2, 0] - ax
                e2y = verts[i2, 1] - ay
                e2z = verts[i2, 2] - az
                px = d[1] * e2z - d[2] * e2y
                py = d[2] * e2x - d[0] * e2z
                pz = d[0] * e2y - d[1] * e2x
                det = e1x * px + e1y * py + e1z * pz
                tx = o[0] - ax
                ty = o[1] - ay
                tz = o[2] - az
                if det > -_DET_EPS and det < _DET_EPS:
                    # near-parallel; flag only if the ray runs in the plane
                    nx = e1y * e2z - e1z * e2y
                    ny = e1z * e2x - e1x * e2z
                    nz = e1x * e2y - e1y * e2x
                    nn = np.sqrt(nx * nx + ny * ny + nz * nz)
                    if nn > 0.0:
                        dist = abs(tx * nx + ty * ny + tz * nz) / nn
                        if dist < grazing_tol:
                            flag = True
                    continue
                invdet = 1.0 / det
                u = (tx * px + ty * py + tz * pz) * invdet
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (d[0] * qx + d[1] * qy + d[2] * qz) * invdet
                w = 1.0 - u - v
                margin = u
                if v < margin:
                    margin = v
                if w < margin:
                    margin = w
                if margin < -grazing_tol:
                    continue
                if margin < grazing_tol:
                    flag = True
                t = (e2x * qx + e2y * qy + e2z * qz) * invdet
                if t <= 0.0 or t > tmax * (1.0 + 1e-12):
                    continue
                if margin < 0.0:
                    continue  # grazing, flagged above
                if n_hits >= MAX_HITS:
                    flag = True
                    continue
                out_t[n_hits] = t
                out_face[n_hits] = f
                out_margin[n_hits] = margin
                n_hits += 1
        else:
            stack[sp] = left[node]
            sp += 1
            stack[sp] = right[node]
            sp += 1
    return n_hits, flag


@njit(cache=True, parallel=True)
def batch_ray_query(
    origins, dirs, tmaxs,
    verts, faces,
    bb_min, bb_max, left, right, start, count, order,
    grazing_tol,
):
    """All-hits query for a batch of rays.

    Returns (t (R,H), face (R,H), n_hits (R,), flags (R,)).
    """
    R = origins.shape[0]
    t = np.zeros((R, MAX_HITS))
    face = np.full((R, MAX_HITS), -1, dtype=np.int32)
    nh = np.zeros(R, dtype=np.int32)
    flags = np.zeros(R, dtype=np.bool_)
    margin = np.zeros((R, MAX_HITS))
    for r in prange(R):
        n, fl = _ray_query_one(
            origins[r, 0], origins[r, 1], origins[r, 2],
            dirs[r, 0], dirs[r, 1], dirs[r, 2], tmaxs[r],
            verts, faces,
            bb_min, bb_max, left, right, start, count, order,
            t[r], face[r], margin[r], grazing_tol,
        )
        nh[r] = n
        flags[r] = fl
    return t, face, nh, flags


@njit(cache=True)
def _tri_tri_overlap(p, q, eps):
    """Closed-triangle intersection predicate (Moller interval method).

    p, q: (3,3) vertex arrays. Touching configurations count as
    intersecting.
    """
    n2 = np.cross(q[1] - q[0], q[2] - q[0])
    d2 = -np.dot(n2, q[0])
    dp = np.empty(3)
    for i in range(3):
        dp[i] = np.dot(n2, p[i]) + d2
    scale2 = np.sqrt(np.dot(n2, n2))
    tol2 = eps * max(scale2, 1e-300)
    if (dp[0] > tol2 and dp[1] > tol2 and dp[2] > tol2) or (
        dp[0] < -tol2 and dp[1] < -tol2 and dp[2] < -tol2
    ):
        return False

    n1 = np.cross(p[1] - p[0], p[2] - p[0])
    d1 = -np.dot(n1, p[0])
    dq = np.empty(3)
    for i in range(3):
        dq[i] = np.dot(n1, q[i]) + d1
    scale1 = np.sqrt(np.dot(n1, n1))
    tol1 = eps * max(scale1, 1e-300)
    if (dq[0] > tol1 and dq[1] > tol1 and dq[2] > tol1) or (
        dq[0] < -tol1 and dq[1] < -tol1 and dq[2] < -tol1
    ):
        return False

    coplanar = True
    for i in range(3):
        if abs(dp[i]) > tol2 or abs(dq[i]) > tol1:
            coplanar = False
            break
    if coplanar:
        return _coplanar_tri_tri(p, q, n1)

    d = np.cross(n1, n2)
    ax = 0
    if abs(d[1]) > abs(d[ax]):
        ax = 1
    if abs(d[2]) > abs(d[ax]):
        ax = 2

    lo1, hi1, ok1 = _interval(p, dp, ax, tol2)
    lo2, hi2, ok2 = _interval(q, dq, ax, tol1)
    if not ok1 or not ok2:
        # one triangle only touches the other's plane at a point/edge
        return _coplanar_tri_tri(p, q, n1) or _touch_check(p, q, dp, dq, tol1, tol2)
    span = max(hi1 - lo1, hi2 - lo2, 1e-300)
    return lo1 <= hi2 + eps * span and lo2 <= hi1 + eps * span


@njit(cache=True)
def _interval(tri, dv, ax, tol):
    """Projection interval of the plane-crossing segment on axis `ax`."""
    ts = np.empty(2)
    n = 0
    for i in range(3):
        j = (i + 1) % 3
        a, b = dv[i], dv[j]
        if (a > tol and b < -tol) or (a < -tol and b > tol):
            f = a / (a - b)
            if n < 2:
                ts[n] = tri[i, ax] + f * (tri[j, ax] - tri[i, ax])
                n += 1
        elif abs(a) <= tol:
            if n < 2:
                ts[n] = tri[i, ax]
                n += 1
    if n == 0:
        return 0.0, 0.0, False
    lo = ts[0]
    hi = ts[0]
    for i in range(1, n):
        if ts[i] < lo:
            lo = ts[i]
        if ts[i] > hi:
            hi = ts[i]
    return lo, hi, True


@njit(cache=True)
def _touch_check(p, q, dp, dq, tol1, tol2):
    # vertices lying exactly in the other plane: test point-in-triangle
    for i in range(3):
        if abs(dp[i]) <= tol2 and _point_in_tri(p[i], q):
            return True
        if abs(dq[i]) <= tol1 and _point_in_tri(q[i], p):
            return True
    return False


@njit(cache=True)
def _point_in_tri(pt, tri):
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    nn = np.dot(n, n)
    if nn <= 0.0:
        return False
    tol = 1e-12 * np.sqrt(nn)
    if abs(np.dot(n, pt - tri[0])) > tol * 10.0:
        return False
    for i in range(3):
        j = (i + 1) % 3
        edge = tri[j] - tri[i]
        c = np.cross(edge, pt - tri[i])
        if np.dot(c, n) < -tol:
            return False
    return True


@njit(cache=True)
def _seg_seg_2d(a0, a1, b0, b1):
    d1 = (a1[0] - a0[0]) * (b0[1] - a0[1]) - (a1[1] - a0[1]) * (b0[0] - a0[0])
    d2 = (a1[0] - a0[0]) * (b1[1] - a0[1]) - (a1[1] - a0[1]) * (b1[0] - a0[0])
    d3 = (b1[0] - b0[0]) * (a0[1] - b0[1]) - (b1[1] - b0[1]) * (a0[0] - b0[0])
    d4 = (b1[0] - b0[0]) * (a1[1] - b0[1]) - (b1[1] - b0[1]) * (a1[0] - b0[0])
    if d1 * d2 <= 0.0 and d3 * d4 <= 0.0:
        if d1 == 0.0 and d2 == 0.0:
            # collinear: overlap of projections
            for k in range(2):
                lo_a = min(a0[k], a1[k])
                hi_a = max(a0[k], a1[k])
                lo_b = min(b0[k], b1[k])
                hi_b = max(b0[k], b1[k])
                if hi_a < lo_b or hi_b < lo_a:
                    return False
            return True
        return True
    return False


@njit(cache=True)
def _point_in_tri_2d(pt, t0, t1, t2):
    s1 = (t1[0] - t0[0]) * (pt[1] - t0[1]) - (t1[1] - t0[1]) * (pt[0] - t0[0])
    s2 = (t2[0] - t1[0]) * (pt[1] - t1[1]) - (t2[1] - t1[1]) * (pt[0] - t1[0])
    s3 = (t0[0] - t2[0]) * (pt[1] - t2[1]) - (t0[1] - t2[1]) * (pt[0] - t2[0])
    return (s1 >= 0 and s2 >= 0 and s3 >= 0) or (s1 <= 0 and s2 <= 0 and s3 <= 0)


@njit(cache=True)
def _coplanar_tri_tri(p, q, n):
    ax = 0
    an = abs(n[0])
    if abs(n[1]) > an:
        ax = 1
        an = abs(n[1])
    if abs(n[2]) > an:
        ax = 2
    i0 = (ax + 1) % 3
    i1 = (ax + 2) % 3
    p2 = np.empty((3, 2))
    q2 = np.empty((3, 2))
    for i in range(3):
        p2[i, 0] = p[i, i0]
        p2[i, 1] = p[i, i1]
        q2[i, 0] = q[i, i0]
        q2[i, 1] = q[i, i1]
    for i in range(3):
        j = (i + 1) % 3
        for k in range(3):
            m = (k + 1) % 3
            if _seg_seg_2d(p2[i], p2[j], q2[k], q2[m]):
                return True
    if _point_in_tri_2d(p2[0], q2[0], q2[1], q2[2]):
        return True
    if _point_in_tri_2d(q2[0], p2[0], p2[1], p2[2]):
        return True
    return False


@njit(cache=True)
def tri_pairs_intersect(ta, tb, eps, early_exit):
    """Count intersecting pairs between two triangle soups.

    ta: (A,3,3), tb: (B,3,3). Returns (tests, hits).
    """
    tests = 0
    hits = 0
    for i in range(ta.shape[0]):
        for j in range(tb.shape[0]):
            tests += 1
            if _tri_tri_overlap(ta[i], tb[j], eps):
                hits += 1
                if early_exit:
                    return tests, hits
    return tests, hits
