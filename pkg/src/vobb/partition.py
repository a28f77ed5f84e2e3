"""Variational partition of a face set into N oriented boxes (Lloyd loop).

One iteration: flood-partition faces by minimal outside-volume change,
refit each box's 6 placement parameters by steepest descent on the
estimated OBV, and, when progress stalls, re-seed the least important
cluster. The accepted error sequence is non-increasing.
"""

from __future__ import annotations

import copy
import heapq
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import mesh as mesh_mod
from . import obb as obb_mod
from . import outside as outside_mod

__all__ = [
    "Partition",
    "ClusterState",
    "LloydConfig",
    "DescentConfig",
    "init_seeds",
    "delta_obv",
    "flood_partition",
    "refit_cluster",
    "adjust_clusters",
    "lloyd_optimize",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DescentConfig:
    center_step: float = 1e-2   # times the cluster diagonal
    rot_step: float = 1e-2      # radians
    armijo_c: float = 0.1
    max_halvings: int = 20
    max_steps: int = 50
    rel_tol: float = 1e-4
    alpha_init: float = 0.05
    alpha_max: float = 0.2


@dataclass(frozen=True)
class LloydConfig:
    n_clusters: int
    max_iters: int = 20
    stall_window: int = 3
    stall_tol: float = 1e-3
    stop_below: float = 0.0     # absolute error floor; 0 disables
    descent: DescentConfig = field(default_factory=DescentConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.stall_tol <= 0:
            raise ValueError("stall_tol must be positive")


@dataclass
class Partition:
    assignment: dict            # face_id -> cluster index
    clusters: list              # cluster index -> np.ndarray of face ids
    paid_delta: dict = field(default_factory=dict)  # face_id -> dOBV at claim


@dataclass
class ClusterState:
    params: obb_mod.ObbParams
    box: obb_mod.Obb
    obv: float
    seed_face: int
    faces: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def _min_extent(mesh):
    return 1e-6 * mesh.diagonal


def _face_verts(mesh, face_ids):
    return mesh.vertices[mesh.faces[np.asarray(face_ids)].reshape(-1)]


def init_seeds(mesh, faces, n, rng_seed=0):
    """Farthest-point sampling over face centroids; first pick from the rng."""
    faces = np.asarray(faces)
    if n > len(faces):
        raise ValueError("more clusters than faces")
    rng = np.random.default_rng(rng_seed)
    cents = mesh.face_centroids[faces]
    seeds = [int(rng.integers(len(faces)))]
    dist = np.linalg.norm(cents - cents[seeds[0]], axis=1)
    for _ in range(1, n):
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(cents - cents[nxt], axis=1))
    return [int(faces[s]) for s in seeds]


def make_cluster(mesh, seed_face, grid, cache, cluster_id, params=None):
    verts = _face_verts(mesh, [seed_face])
    if params is None:
        params = obb_mod.ObbParams(mesh.face_centroids[seed_face], np.zeros(3))
    box, obv = outside_mod.obv_cached_box(
        mesh, cluster_id, params, verts, grid, cache, _min_extent(mesh)
    )
    return ClusterState(
        params=params, box=box, obv=obv, seed_face=seed_face,
        faces=np.array([seed_face], dtype=np.int64),
    )


def _grown_extents(mesh, params, half_extents, face_id, min_extent):
    """Half-extents after absorbing one face, center/axes unchanged."""
    local = (mesh.vertices[mesh.faces[face_id]] - params.center) @ params.matrix()
    need = np.abs(local).max(axis=0)
    need = np.maximum(need, min_extent)
    return np.maximum(half_extents, need)


def delta_obv(mesh, cluster, face, grid, cache, cluster_id=0):
    """Increase of the cluster box's outside volume if `face` joins it
    (placement parameters fixed, extents re-derived)."""
    me = _min_extent(mesh)
    grown = _grown_extents(mesh, cluster.params, cluster.box.half_extents, face, me)
    if np.array_equal(grown, cluster.box.half_extents):
        return 0.0
    key = cache.key(cluster_id, cluster.params, grown)
    after = cache.lookup(key)
    if after is None:
        cache.misses += 1
        box = obb_mod.Obb(cluster.params.center, cluster.box.axes, grown)
        after = outside_mod.estimate_obv(mesh, box, grid)
        cache.store(key, after)
    else:
        cache.hits += 1
    return abs(after - cluster.obv)


def flood_partition(mesh, faces, clusters, grid, cache):
    """Grow every cluster from its seed over face adjacency.

    The queue is ordered by distance to the claiming cluster's box center;
    a popped face joins, among the clusters that reached it, the one whose
    box suffers the smallest outside-volume change (ties: lowest index).
    Faces unreachable by adjacency are claimed by the nearest center.
    """
    faces = np.asarray(faces)
    face_set = set(int(f) for f in faces)
    n = len(clusters)

    # live per-cluster growth state
    params = [c.params for c in clusters]
    extents = [c.box.half_extents.copy() for c in clusters]
    obvs = [c.obv for c in clusters]
    me = _min_extent(mesh)

    assignment = {}
    paid = {}
    members = [[] for _ in range(n)]
    reached = {}

    def grown(ci, fid):
        return _grown_extents(mesh, params[ci], extents[ci], fid, me)

    def cluster_obv(ci, half):
        key = cache.key(ci, params[ci], half)
        val = cache.lookup(key)
        if val is None:
            cache.misses += 1
            box = obb_mod.Obb(params[ci].center, params[ci].matrix(), half)
            val = outside_mod.estimate_obv(mesh, box, grid)
            cache.store(key, val)
        else:
            cache.hits += 1
        return val

    def assign(fid, ci, delta):
        assignment[fid] = ci
        paid[fid] = delta
        members[ci].append(fid)
        half = grown(ci, fid)
        if not np.array_equal(half, extents[ci]):
            obvs[ci] = cluster_obv(ci, half)
            extents[ci] = half
        for k in range(3):
            nb = int(mesh.face_adjacency[fid, k])
            if nb >= 0 and nb in face_set and nb not in assignment:
                push(nb, ci)

    heap = []
    counter = 0

    def push(fid, ci):
        nonlocal counter
        reached.setdefault(fid, set()).add(ci)
        d = float(np.linalg.norm(mesh.face_centroids[fid] - params[ci].center))
        heapq.heappush(heap, (d, counter, fid, ci))
        counter += 1

    # seeds: the unassigned face nearest each box center
    cents = mesh.face_centroids[faces]
    taken = set()
    for ci in range(n):
        d = np.linalg.norm(cents - params[ci].center, axis=1)
        order = np.argsort(d, kind="stable")
        for idx in order:
            fid = int(faces[idx])
            if fid not in taken:
                taken.add(fid)
                reached.setdefault(fid, set()).add(ci)
                assign(fid, ci, 0.0)
                break

    while heap:
        _, _, fid, _ = heapq.heappop(heap)
        if fid in assignment:
            continue
        best = None
        for ci in sorted(reached[fid]):
            before = obvs[ci]
            half = grown(ci, fid)
            if np.array_equal(half, extents[ci]):
                delta = 0.0
            else:
                delta = abs(cluster_obv(ci, half) - before)
            if best is None or delta < best[0] - 0.0:
                best = (delta, ci)
        assign(fid, best[1], best[0])

    # unreachable faces (disconnected components): nearest center wins
    for fid in sorted(face_set - set(assignment)):
        d = [np.linalg.norm(mesh.face_centroids[fid] - params[ci].center) for ci in range(n)]
        ci = int(np.argmin(d))
        before = obvs[ci]
        half = grown(ci, fid)
        delta = 0.0 if np.array_equal(half, extents[ci]) else abs(cluster_obv(ci, half) - before)
        assign(fid, ci, delta)

    clusters_out = [np.array(sorted(members[ci]), dtype=np.int64) for ci in range(n)]
    return Partition(assignment=assignment, clusters=clusters_out, paid_delta=paid)


def refit_points(mesh, points, start, grid, cache, descent, cluster_id=0,
                 trace=None):
    """Steepest descent on the 6 box parameters; never accepts an uphill
    step. Returns (params, box, obv) with obv <= the starting obv.
    If `trace` is a list, the objective after each accepted step is
    appended to it (starting value first)."""
    points = np.atleast_2d(points)
    if points.size == 0:
        raise ValueError("empty point set")
    me = _min_extent(mesh)
    span = points.max(axis=0) - points.min(axis=0)
    scale = max(float(np.linalg.norm(span)), 10.0 * me)

    def apply(params, d):
        p = obb_mod.ObbParams(params.center + d[:3] * scale, params.rotation)
        return p.compose(d[3:6])

    def f(params):
        return outside_mod.obv_cached(mesh, cluster_id, params, points, grid, cache, me)

    params = start
    fval = f(params)
    if trace is not None:
        trace.append(fval)
    h = np.array([descent.center_step] * 3 + [descent.rot_step] * 3)
    alpha0 = descent.alpha_init
    for _ in range(descent.max_steps):
        g = np.zeros(6)
        for k in range(6):
            e = np.zeros(6)
            e[k] = h[k]
            g[k] = (f(apply(params, e)) - f(apply(params, -e))) / (2 * h[k])
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            break
        d = -g / gnorm
        slope = -gnorm
        alpha = alpha0
        new_params = None
        new_f = None
        for _ in range(descent.max_halvings):
            cand = apply(params, d * alpha)
            fc = f(cand)
            if fc <= fval + descent.armijo_c * alpha * slope:
                new_params, new_f = cand, fc
                break
            alpha /= 2.0
        if new_params is None or new_f > fval:
            break
        rel = (fval - new_f) / max(fval, 1e-12)
        params, fval = new_params, new_f
        if trace is not None:
            trace.append(fval)
        # Carry the accepted step size forward (doubled); avoids re-probing
        # from scratch and escapes the small-step regime once noise passes.
        alpha0 = min(2.0 * alpha, descent.alpha_max)
        if rel < descent.rel_tol:
            break
    box = obb_mod.fit_tight(points, params, min_extent=me)
    return params, box, fval


def refit_cluster(mesh, faces, start, grid, cache, descent, cluster_id=0):
    """Refit a face cluster's box parameters (see refit_points)."""
    faces = np.asarray(faces)
    if faces.size == 0:
        raise ValueError("empty face set")
    points = _face_verts(mesh, faces)
    return refit_points(mesh, points, start, grid, cache, descent, cluster_id)


def _overlap_volume(rng, box_a, others):
    """Sampled volume of box_a covered by any other box (10^4 points)."""
    u = rng.random((10000, 3)) * 2.0 - 1.0
    pts = box_a.center + (u * box_a.half_extents) @ box_a.axes.T
    covered = np.zeros(len(pts), dtype=bool)
    for b in others:
        covered |= obb_mod.contains_points(b, pts)
    return obb_mod.box_volume(box_a) * covered.mean()


def adjust_clusters(mesh, state, partition, grid, cache, rng, descent=None):
    """Escape stalls: re-seed the least important cluster at the worst-served
    face, re-flood and refit; revert unless the total OBV strictly drops."""
    n = len(state)
    if n <= 1:
        return state, partition, sum(c.obv for c in state), False
    descent = descent or DescentConfig()

    counts = np.array([len(c.faces) for c in state], dtype=np.float64)
    overlaps = np.array(
        [
            _overlap_volume(rng, state[i].box, [state[j].box for j in range(n) if j != i])
            for i in range(n)
        ]
    )
    importance = counts / max(counts.max(), 1.0) - overlaps / max(overlaps.max(), 1e-300)
    victim = int(np.argmin(importance))

    candidates = {
        f: d for f, d in partition.paid_delta.items() if partition.assignment[f] != victim
    }
    if not candidates:
        return state, partition, sum(c.obv for c in state), False
    worst_face = max(candidates, key=lambda f: (candidates[f], f))

    old_err = sum(c.obv for c in state)
    faces = np.concatenate([c.faces for c in state])

    trial = [copy.deepcopy(c) for c in state]
    trial[victim] = make_cluster(mesh, worst_face, grid, cache, victim)
    part2 = flood_partition(mesh, faces, trial, grid, cache)
    new_state = []
    for ci, c in enumerate(trial):
        p, box, obv = refit_cluster(
            mesh, part2.clusters[ci], c.params, grid, cache, descent, ci
        )
        new_state.append(
            ClusterState(params=p, box=box, obv=obv, seed_face=c.seed_face,
                         faces=part2.clusters[ci])
        )
    new_err = sum(c.obv for c in new_state)
    if new_err < old_err:
        return new_state, part2, new_err, True
    return state, partition, old_err, False


def lloyd_optimize(mesh, faces, config, grid, cache=None, trace_out=None):
    """Full Lloyd loop; returns (clusters, partition, total OBV) of the best
    accepted state. If `trace_out` is a list, the best error after each
    iteration is appended to it."""
    faces = np.asarray(faces, dtype=np.int64)
    if cache is None:
        cache = outside_mod.ObvCache(
            quantum_center=1e-4 * mesh.diagonal, quantum_rot=1e-4
        )
    rng = np.random.default_rng(config.rng_seed)
    seeds = init_seeds(mesh, faces, config.n_clusters, config.rng_seed)
    clusters = [make_cluster(mesh, s, grid, cache, ci) for ci, s in enumerate(seeds)]

    best = None
    best_err = np.inf
    prev_err = np.inf
    stall = 0
    trace = []
    for it in range(config.max_iters):
        part = flood_partition(mesh, faces, clusters, grid, cache)
        new_state = []
        for ci in range(config.n_clusters):
            p, box, obv = refit_cluster(
                mesh, part.clusters[ci], clusters[ci].params, grid, cache,
                config.descent, ci,
            )
            new_state.append(
                ClusterState(params=p, box=box, obv=obv,
                             seed_face=clusters[ci].seed_face,
                             faces=part.clusters[ci])
            )
        err = sum(c.obv for c in new_state)
        trace.append(err)
        log.info("lloyd iter=%d total_obv=%.6g per_cluster=%s", it, err,
                 [round(c.obv, 6) for c in new_state])
        clusters = new_state
        if err < best_err:
            best = ([copy.deepcopy(c) for c in new_state], part)
            best_err = err
        if trace_out is not None:
            trace_out.append(best_err)
        if best_err <= config.stop_below:
            break
        rel = abs(prev_err - err) / max(prev_err, 1e-12) if np.isfinite(prev_err) else 1.0
        prev_err = err
        if rel < config.stall_tol:
            stall += 1
        else:
            stall = 0
        if stall >= config.stall_window:
            clusters, part, err, accepted = adjust_clusters(
                mesh, clusters, part, grid, cache, rng, config.descent
            )
            if not accepted:
                break
            if err < best_err:
                best = ([copy.deepcopy(c) for c in clusters], part)
                best_err = err
            prev_err = err
            stall = 0
    if best is None:
        raise RuntimeError("lloyd loop produced no state")
    return best[0], best[1], best_err
