"""Instrumented tree-vs-tree collision queries and the two-tree benchmark.

Counts box-box (n_v) and triangle-triangle (n_p) tests during simultaneous
descent of two OBB trees under random rigid poses, and compares the
variational tree against the PCA baseline pose-for-pose.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import _kernels
from . import obb as obb_mod

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray      # 3x3, det +1
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be a proper 3x3 rotation matrix")

    def apply_points(self, pts):
        return np.asarray(pts) @ self.rotation.T + self.translation

    def apply_box(self, box):
        return obb_mod.Obb(
            self.rotation @ box.center + self.translation,
            self.rotation @ box.axes,
            box.half_extents.copy(),
        )

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass
class CollisionStats:
    n_v: int = 0
    n_p: int = 0
    hit: bool = False
    cost: float = 0.0


@dataclass(frozen=True)
class CostModel:
    c_v: float = 1.0
    c_p: float = 5.0

    def __post_init__(self):
        if self.c_v <= 0 or self.c_p <= 0:
            raise ValueError("cost constants must be positive")


def tri_tri_intersect(t1, t2):
    """Exact closed-triangle intersection predicate; touching counts."""
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    for t in (t1, t2):
        area = 0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0]))
        if area <= 1e-12:
            raise ValueError("degenerate triangle")
    _, hits = _kernels.tri_pairs_intersect(
        np.ascontiguousarray(t1[None]), np.ascontiguousarray(t2[None]),
        1e-12, True,
    )
    return hits > 0


def _leaf_tris(mesh, node, xform=None):
    tris = mesh.vertices[mesh.faces[node.faces]]
    if xform is not None:
        tris = tris @ xform.rotation.T + xform.translation
    return np.ascontiguousarray(tris)


def traverse_pair(tree_a, tree_b, xform, mesh_a, mesh_b, cost=None,
                  early_exit=False):
    """Simultaneous descent with instrumented counters; the transform is
    applied to tree/mesh B. Recursion descends the larger-volume node so
    counter comparisons do not depend on argument order conventions."""
    if cost is None:
        cost = CostModel()
    stats = CollisionStats()
    boxes_b = {}

    def box_b(nid):
        if nid not in boxes_b:
            boxes_b[nid] = xform.apply_box(tree_b.nodes[nid].box)
        return boxes_b[nid]

    stack = [(0, 0)]
    while stack:
        ia, ib = stack.pop()
        na, nb = tree_a.nodes[ia], tree_b.nodes[ib]
        stats.n_v += 1
        if not obb_mod.overlap(na.box, box_b(ib)):
            continue
        a_leaf = not na.children
        b_leaf = not nb.children
        if a_leaf and b_leaf:
            ta = _leaf_tris(mesh_a, na)
            tb = _leaf_tris(mesh_b, nb, xform)
            tests, hits = _kernels.tri_pairs_intersect(
                ta, tb, 1e-12, early_exit and not stats.hit
            )
            stats.n_p += int(tests)
            if hits > 0:
                stats.hit = True
                if early_exit:
                    break
            continue
        if b_leaf or (not a_leaf and
                      obb_mod.box_volume(na.box) >=
                      obb_mod.box_volume(nb.box)):
            # descend A; push in reverse so children pop in id order
            for c in reversed(na.children):
                stack.append((c, ib))
        else:
            for c in reversed(nb.children):
                stack.append((ia, c))
    stats.cost = stats.n_v * cost.c_v + stats.n_p * cost.c_p
    return stats


def brute_force_hit(mesh_a, mesh_b, xform):
    """All-pairs triangle scan under the same transform and conventions."""
    ta = np.ascontiguousarray(mesh_a.vertices[mesh_a.faces])
    tb = np.ascontiguousarray(
        mesh_b.vertices[mesh_b.faces] @ xform.rotation.T + xform.translation
    )
    _, hits = _kernels.tri_pairs_intersect(ta, tb, 1e-12, True)
    return hits > 0


def bounding_radius(mesh):
    c = mesh.vertices.mean(axis=0)
    return c, float(np.linalg.norm(mesh.vertices - c, axis=1).max())


def sample_poses(mesh_a, mesh_b, k, rng_seed=0):
    """K rigid poses for B: uniform rotations, translation directions
    uniform on the sphere, radii uniform in [0, 2(rA + rB)] so the
    bounding spheres overlap for roughly half the poses."""
    rng = np.random.default_rng(rng_seed)
    ca, ra = bounding_radius(mesh_a)
    cb, rb = bounding_radius(mesh_b)
    out = []
    for _ in range(k):
        rot = Rotation.random(random_state=rng).as_matrix()
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        radius = rng.uniform(0.0, 2.0 * (ra + rb))
        # place B's centroid at ca + radius*d
        trans = ca + radius * d - rot @ cb
        out.append(RigidTransform(rot, trans))
    return out


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)   # dict per (pose, tree_id)
    summary: dict = field(default_factory=dict)


def run_bench(mesh_a, mesh_b, trees, k, cost=None, rng_seed=0,
              early_exit=False):
    """Compare tree pairs over K shared poses.

    `trees` maps a tree id (e.g. "variational", "baseline") to a pair
    (tree_for_A, tree_for_B). Returns a BenchReport with one row per
    (pose, tree id) and mean/median summaries including the relative n_v
    reduction of "variational" vs "baseline" when both are present.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if cost is None:
        cost = CostModel()
    poses = sample_poses(mesh_a, mesh_b, k, rng_seed)
    report = BenchReport()
    per_tree = {tid: [] for tid in trees}
    for pi, pose in enumerate(poses):
        for tid in sorted(trees):
            ta, tb = trees[tid]
            st = traverse_pair(ta, tb, pose, mesh_a, mesh_b, cost,
                               early_exit)
            report.rows.append({
                "pose": pi, "tree": tid, "n_v": st.n_v, "n_p": st.n_p,
                "hit": st.hit, "cost": st.cost,
            })
            per_tree[tid].append(st)
    summary = {"k": k, "rng_seed": rng_seed,
               "c_v": cost.c_v, "c_p": cost.c_p, "trees": {}}
    for tid, sts in per_tree.items():
        nv = np.array([s.n_v for s in sts], dtype=np.float64)
        npp = np.array([s.n_p for s in sts], dtype=np.float64)
        costs = np.array([s.cost for s in sts])
        summary["trees"][tid] = {
            "mean_n_v": float(nv.mean()), "median_n_v": float(np.median(nv)),
            "mean_n_p": float(npp.mean()), "median_n_p": float(np.median(npp)),
            "mean_cost": float(costs.mean()),
            "median_cost": float(np.median(costs)),
            "hit_rate": float(np.mean([s.hit for s in sts])),
        }
    if "variational" in per_tree and "baseline" in per_tree:
        mv = summary["trees"]["variational"]["mean_n_v"]
        mb = summary["trees"]["baseline"]["mean_n_v"]
        summary["n_v_reduction"] = 1.0 - mv / mb if mb > 0 else 0.0
        cv = summary["trees"]["variational"]["mean_cost"]
        cb = summary["trees"]["baseline"]["mean_cost"]
        summary["cost_reduction"] = 1.0 - cv / cb if cb > 0 else 0.0
    report.summary = summary
    return report
