"""Hierarchical OBB construction and cross-level optimization.

A tree is built top-down by recursive variational partitioning, then
improved by bottom-up merge sweeps in which whole child boxes (represented
by their corner points) are regrouped under the fixed number of parents.
Sweeps and re-decompositions alternate ("reciprocate") while the
level-weighted error keeps strictly decreasing; rejected attempts leave
the tree bit-identical.
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import mesh as mesh_mod
from . import obb as obb_mod
from . import outside as outside_mod
from . import partition as part_mod

log = logging.getLogger(__name__)

TREE_FORMAT_VERSION = 1


@dataclass
class ObbNode:
    id: int
    parent: int                 # -1 for the root
    level: int                  # root = 0
    params: obb_mod.ObbParams
    box: obb_mod.Obb
    faces: np.ndarray           # leaves: owned faces; internal: descendant union
    children: list = field(default_factory=list)
    obv: float = 0.0


@dataclass
class ObbTree:
    nodes: list
    branching: int
    depth: int

    @property
    def root(self):
        return self.nodes[0]

    def levels(self):
        """level -> list of node ids, in node-id order."""
        out = {}
        for nd in self.nodes:
            out.setdefault(nd.level, []).append(nd.id)
        return out

    def leaves(self):
        return [nd.id for nd in self.nodes if not nd.children]

    def n_nodes(self):
        return len(self.nodes)


@dataclass(frozen=True)
class HierarchyConfig:
    branching: int = 2
    depth: int = 2
    weight_mode: object = "l_sub"   # "l_sub" or a per-level table
    lloyd: part_mod.LloydConfig = field(
        default_factory=lambda: part_mod.LloydConfig(n_clusters=2)
    )
    max_cycles: int = 2
    merge_iters: int = 4

    def __post_init__(self):
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        w = [self.weight(i) for i in range(self.depth + 1)]
        if any(x <= 0 for x in w):
            raise ValueError("weights must be positive")
        if any(w[i] < w[i + 1] for i in range(len(w) - 1)):
            raise ValueError("weights must be non-increasing with depth")

    def weight(self, level):
        """Weight of a node at `level`: layers in the subtree below it
        (leaf = 1.0), or an explicit table entry."""
        if self.weight_mode == "l_sub":
            return float(self.depth - level + 1)
        return float(self.weight_mode[level])


@dataclass
class ErrorReport:
    per_level_omv: dict             # level -> sum of node OBVs at that level
    weighted_total: float
    trace: list = field(default_factory=list)  # (step, label, weighted_total)


def mesh_hash(mesh):
    """Stable content hash of the mesh geometry."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype=np.int64).tobytes())
    return h.hexdigest()


def level_weight(depth, level, weight_mode="l_sub"):
    """Per-level weight: layers in the subtree below (leaf = 1.0) for
    "l_sub", otherwise an explicit table entry."""
    if weight_mode == "l_sub":
        return float(depth - level + 1)
    return float(weight_mode[level])


def tree_error(mesh, tree, grid, cache, config=None, weight_mode="l_sub"):
    """Per-level OBV sums and their level-weighted total."""
    if config is not None:
        weight = config.weight
    else:
        def weight(lv):
            return level_weight(tree.depth, lv, weight_mode)
    per_level = {}
    for nd in tree.nodes:
        per_level[nd.level] = per_level.get(nd.level, 0.0) + nd.obv
    total = sum(weight(lv) * s for lv, s in sorted(per_level.items()))
    return ErrorReport(per_level_omv=per_level, weighted_total=total)


def _node_obv(mesh, params, points, grid, cache, node_id):
    me = part_mod._min_extent(mesh)
    return outside_mod.obv_cached_box(mesh, node_id, params, points, grid,
                                      cache, me)


def _root_node(mesh, faces, grid, cache, lloyd):
    """Single refit box over all of the node's faces (the N = 1 problem)."""
    faces = np.asarray(faces, dtype=np.int64)
    pts = part_mod._face_verts(mesh, faces)
    start = obb_mod.ObbParams(pts.mean(axis=0), np.zeros(3))
    params, box, obv = part_mod.refit_points(
        mesh, pts, start, grid, cache, lloyd.descent, cluster_id=-1
    )
    return params, box, obv


def decompose_top_down(mesh, tree, node_id, config, grid, cache):
    """Recursively split `node_id`'s faces with the variational partition
    until depth D; face-starved nodes become early leaves."""
    node = tree.nodes[node_id]
    if node.children:
        raise ValueError("node already has children")
    stack = [node_id]
    while stack:
        nid = stack.pop()
        nd = tree.nodes[nid]
        if nd.level >= config.depth or len(nd.faces) < config.branching:
            continue
        lloyd = part_mod.LloydConfig(
            n_clusters=config.branching,
            max_iters=config.lloyd.max_iters,
            stall_window=config.lloyd.stall_window,
            stall_tol=config.lloyd.stall_tol,
            stop_below=config.lloyd.stop_below,
            descent=config.lloyd.descent,
            rng_seed=config.lloyd.rng_seed + nid,
        )
        clusters, _, _ = part_mod.lloyd_optimize(mesh, nd.faces, lloyd, grid, cache)
        for cl in clusters:
            cid = len(tree.nodes)
            child = ObbNode(
                id=cid, parent=nid, level=nd.level + 1, params=cl.params,
                box=cl.box, faces=np.sort(np.asarray(cl.faces, dtype=np.int64)),
                obv=cl.obv,
            )
            tree.nodes.append(child)
            nd.children.append(cid)
            stack.append(cid)
        # deterministic order: children expanded in creation order
        stack.sort()
    return tree


def build_top_down(mesh, config, grid, cache):
    """Fresh tree: refit root over all faces, then decompose to depth D."""
    faces = np.arange(mesh.n_faces, dtype=np.int64)
    params, box, obv = _root_node(mesh, faces, grid, cache, config.lloyd)
    root = ObbNode(id=0, parent=-1, level=0, params=params, box=box,
                   faces=faces, obv=obv)
    tree = ObbTree(nodes=[root], branching=config.branching, depth=config.depth)
    return decompose_top_down(mesh, tree, 0, config, grid, cache)


def _subtree_faces(tree, nid):
    nd = tree.nodes[nid]
    if not nd.children:
        return nd.faces
    return np.sort(np.concatenate([_subtree_faces(tree, c) for c in nd.children]))


def _corner_points(tree, ids):
    return np.vstack([tree.nodes[i].box.corners() for i in ids])


def _grow_cost(mesh, parent_params, parent_ext, parent_obv, pts, grid, cache,
               key_id):
    """OBV increase if the parent's box is widened (placement fixed) to
    cover `pts`. Returns (delta, grown_extents)."""
    local = (pts - parent_params.center) @ parent_params.matrix()
    need = np.abs(local).max(axis=0)
    grown = np.maximum(parent_ext, need)
    if np.array_equal(grown, parent_ext):
        return 0.0, grown
    key = cache.key(key_id, parent_params, grown)
    after = cache.lookup(key)
    if after is None:
        cache.misses += 1
        box = obb_mod.Obb(parent_params.center, parent_params.matrix(), grown)
        after = outside_mod.estimate_obv(mesh, box, grid)
        cache.store(key, after)
    else:
        cache.hits += 1
    return abs(after - parent_obv), grown


def merge_bottom_up(mesh, tree, level, config, grid, cache):
    """Regroup the boxes at `level` under the parents at `level - 1`,
    treating each box (its 8 corners) as an indivisible unit. Parents are
    refit over their new children; accepted only if the weighted total
    strictly decreases, otherwise the tree is returned unchanged."""
    if level < 1:
        raise ValueError("level must be >= 1")
    lvl = tree.levels()
    child_ids = lvl.get(level, [])
    parent_ids = sorted({tree.nodes[c].parent for c in child_ids})
    if len(parent_ids) < 2 or len(child_ids) <= len(parent_ids):
        return tree, False

    before = tree_error(mesh, tree, grid, cache, config).weighted_total
    backup = copy.deepcopy(tree)

    me = part_mod._min_extent(mesh)
    # working copies of parent placements; extents shrink to nothing so the
    # regrouping starts from empty parents at their current orientations
    pstate = {}
    for pid in parent_ids:
        nd = tree.nodes[pid]
        box0 = obb_mod.Obb(nd.params.center, nd.params.matrix(),
                           np.full(3, me))
        obv0 = outside_mod.estimate_obv(mesh, box0, grid)
        pstate[pid] = [nd.params, box0.half_extents, obv0]

    assign = {c: tree.nodes[c].parent for c in child_ids}
    for sweep in range(config.merge_iters):
        # greedy seeding: each parent first claims its cheapest box so no
        # parent goes empty, then the rest join where they grow OBV least
        order = []
        for cid in child_ids:
            pts = tree.nodes[cid].box.corners()
            for pid in parent_ids:
                d, _ = _grow_cost(mesh, *pstate[pid], pts, grid, cache, -pid - 2)
                order.append((d, cid, pid))
        order.sort()
        new_assign = {}
        taken = set()
        for d, cid, pid in order:
            if pid in taken or cid in new_assign:
                continue
            new_assign[cid] = pid
            taken.add(pid)
            # recenter the working parent on its seed box (keeping its
            # orientation): growth must be measured from an actual atom, not
            # a stale midpoint where symmetric ties stall the regrouping
            seed = tree.nodes[cid].box
            params = obb_mod.ObbParams(seed.center.copy(),
                                       pstate[pid][0].rotation)
            box0 = obb_mod.Obb(params.center, params.matrix(),
                               np.full(3, me))
            pstate[pid] = [params, box0.half_extents,
                           outside_mod.estimate_obv(mesh, box0, grid)]
            _, grown = _grow_cost(mesh, *pstate[pid], seed.corners(), grid,
                                  cache, -pid - 2)
            pstate[pid][1] = grown
        for cid in child_ids:
            if cid in new_assign:
                continue
            best = None
            for pid in parent_ids:
                d, grown = _grow_cost(mesh, *pstate[pid],
                                      tree.nodes[cid].box.corners(), grid,
                                      cache, -pid - 2)
                if best is None or d < best[0]:
                    best = (d, pid, grown)
            new_assign[cid] = best[1]
            pstate[best[1]][1] = best[2]
        # refit each parent over the corners of its regrouped children
        for pid in parent_ids:
            members = [c for c in child_ids if new_assign[c] == pid]
            pts = _corner_points(tree, members)
            params, box, obv = part_mod.refit_points(
                mesh, pts, pstate[pid][0], grid, cache, config.lloyd.descent,
                cluster_id=-pid - 2,
            )
            pstate[pid] = [params, np.full(3, me),
                           outside_mod.estimate_obv(
                               mesh,
                               obb_mod.Obb(params.center, params.matrix(),
                                           np.full(3, me)),
                               grid)]
        if new_assign == assign and sweep > 0:
            break
        assign = new_assign

    # apply the grouping: move subtrees, refit parents over their faces
    changed = [c for c in child_ids if assign[c] != tree.nodes[c].parent]
    for cid in child_ids:
        pid = assign[cid]
        old = tree.nodes[cid].parent
        if old != pid:
            tree.nodes[old].children.remove(cid)
            tree.nodes[pid].children.append(cid)
            tree.nodes[cid].parent = pid
    for pid in parent_ids:
        nd = tree.nodes[pid]
        nd.children.sort()
        nd.faces = np.sort(np.concatenate(
            [_subtree_faces(tree, c) for c in nd.children]
        ))
        pts = part_mod._face_verts(mesh, nd.faces)
        nd.params, nd.box, nd.obv = part_mod.refit_points(
            mesh, pts, pstate[pid][0], grid, cache, config.lloyd.descent,
            cluster_id=-pid - 2,
        )

    after = tree_error(mesh, tree, grid, cache, config).weighted_total
    if after < before and changed:
        log.info("merge level=%d accepted: %.6g -> %.6g (%d moved)",
                 level, before, after, len(changed))
        return tree, True
    return backup, False


def _renumber(tree):
    """Canonical ids: breadth-first, children in ascending old-id order."""
    order = []
    queue = [0]
    while queue:
        nid = queue.pop(0)
        order.append(nid)
        queue.extend(sorted(tree.nodes[nid].children))
    remap = {old: new for new, old in enumerate(order)}
    nodes = []
    for old in order:
        nd = tree.nodes[old]
        nodes.append(ObbNode(
            id=remap[old],
            parent=remap[nd.parent] if nd.parent >= 0 else -1,
            level=nd.level, params=nd.params, box=nd.box, faces=nd.faces,
            children=sorted(remap[c] for c in nd.children), obv=nd.obv,
        ))
    return ObbTree(nodes=nodes, branching=tree.branching, depth=tree.depth)


def _redecompose_changed(mesh, tree, parent_ids, config, grid, cache):
    """Drop and rebuild the subtrees under parents whose membership moved."""
    for pid in sorted(parent_ids):
        nd = tree.nodes[pid]
        drop = set()
        stack = list(nd.children)
        while stack:
            nid = stack.pop()
            drop.add(nid)
            stack.extend(tree.nodes[nid].children)
        nd.children = []
        keep = [n for n in tree.nodes if n.id not in drop]
        remap = {n.id: i for i, n in enumerate(keep)}
        for i, n in enumerate(keep):
            n.id = i
            n.parent = remap[n.parent] if n.parent >= 0 else -1
            n.children = sorted(remap[c] for c in n.children)
        tree.nodes = keep
        decompose_top_down(mesh, tree, remap[pid], config, grid, cache)
    return _renumber(tree)


def reciprocate(mesh, config, grid=None, cache=None):
    """Full build: top-down decomposition, then alternating bottom-up merge
    sweeps and re-decomposition of regrouped subtrees, keeping the best
    tree seen. Returns (tree, ErrorReport with trace)."""
    if grid is None:
        grid = outside_mod.build_direction_grid(outside_mod.EstimatorConfig().m)
    if cache is None:
        cache = outside_mod.ObvCache(
            quantum_center=1e-4 * mesh.diagonal, quantum_rot=1e-4
        )
    tree = build_top_down(mesh, config, grid, cache)
    tree = _renumber(tree)
    report = tree_error(mesh, tree, grid, cache, config)
    step = 0
    trace = [(step, "decompose", report.weighted_total)]
    best = copy.deepcopy(tree)
    best_total = report.weighted_total
    log.info("initial decomposition weighted_total=%.6g", best_total)

    for cycle in range(config.max_cycles):
        any_change = False
        for level in range(config.depth, 0, -1):
            before_parents = {c.id: c.parent for c in tree.nodes}
            tree, improved = merge_bottom_up(mesh, tree, level, config, grid,
                                             cache)
            step += 1
            total = tree_error(mesh, tree, grid, cache, config).weighted_total
            trace.append((step, "merge L%d" % level, total))
            if improved:
                any_change = True
                moved_parents = {
                    nd.parent for nd in tree.nodes
                    if nd.id in before_parents
                    and before_parents[nd.id] != nd.parent and nd.parent >= 0
                }
                if moved_parents and level < config.depth:
                    cand = copy.deepcopy(tree)
                    cand = _redecompose_changed(mesh, cand, moved_parents,
                                                config, grid, cache)
                    cand_total = tree_error(mesh, cand, grid, cache,
                                            config).weighted_total
                    step += 1
                    trace.append((step, "redecompose", min(cand_total, total)))
                    if cand_total < total:
                        tree, total = cand, cand_total
                if total < best_total:
                    best, best_total = copy.deepcopy(tree), total
        if not any_change:
            break
    best = _renumber(best)
    report = tree_error(mesh, best, grid, cache, config)
    report.trace = trace
    return best, report


# --------------------------------------------------------------------------
# tree file round-trip

def save_tree(tree, path, mesh_digest, weight_mode="l_sub",
              config_digest=None):
    """Write the tree as deterministic JSON (atomic replace)."""
    nodes = []
    for nd in tree.nodes:
        rec = {
            "id": nd.id,
            "parent": nd.parent,
            "level": nd.level,
            "center": [float(x) for x in nd.box.center],
            "axes": [float(x) for x in nd.box.axes.reshape(-1)],
            "half_extents": [float(x) for x in nd.box.half_extents],
        }
        if not nd.children:
            rec["face_ids"] = [int(f) for f in nd.faces]
        nodes.append(rec)
    doc = {
        "format_version": TREE_FORMAT_VERSION,
        "mesh_hash": mesh_digest,
        "branching": tree.branching,
        "depth": tree.depth,
        "weight_mode": weight_mode,
        "nodes": nodes,
    }
    if config_digest is not None:
        doc["config_digest"] = config_digest
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


class TreeFormatError(ValueError):
    pass


def load_tree(path, mesh=None):
    """Read a tree file. If `mesh` is given, verify its hash and recompute
    per-node OBVs lazily (left at 0.0 otherwise). Returns (tree, doc)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != TREE_FORMAT_VERSION:
        raise TreeFormatError("unsupported tree format version: %r"
                              % doc.get("format_version"))
    if mesh is not None and doc["mesh_hash"] != mesh_hash(mesh):
        raise TreeFormatError("tree file does not match the mesh")
    nodes = []
    for rec in doc["nodes"]:
        center = np.asarray(rec["center"], dtype=np.float64)
        axes = np.asarray(rec["axes"], dtype=np.float64).reshape(3, 3)
        he = np.asarray(rec["half_extents"], dtype=np.float64)
        from scipy.spatial.transform import Rotation
        rotvec = Rotation.from_matrix(axes).as_rotvec()
        nodes.append(ObbNode(
            id=int(rec["id"]), parent=int(rec["parent"]),
            level=int(rec["level"]),
            params=obb_mod.ObbParams(center, rotvec),
            box=obb_mod.Obb(center, axes, he),
            faces=np.asarray(rec.get("face_ids", []), dtype=np.int64),
        ))
    nodes.sort(key=lambda n: n.id)
    tree = ObbTree(nodes=nodes, branching=int(doc["branching"]),
                   depth=int(doc["depth"]))
    for nd in nodes:
        if nd.parent >= 0:
            tree.nodes[nd.parent].children.append(nd.id)
    for nd in nodes:
        nd.children.sort()
    # internal face sets are unions of their descendants
    for nd in sorted(nodes, key=lambda n: -n.level):
        if nd.children:
            nd.faces = np.sort(np.concatenate(
                [tree.nodes[c].faces for c in nd.children]
            ))
    return tree, doc


def refresh_obvs(mesh, tree, grid, cache):
    """Recompute each node's OBV from its stored box (after load_tree)."""
    for nd in tree.nodes:
        nd.obv = outside_mod.estimate_obv(mesh, nd.box, grid)
    return tree
