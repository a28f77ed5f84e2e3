"""Classical PCA-split OBB tree, the comparison baseline.

Each node's box orientation comes from the eigenvectors of the
area-weighted covariance of its faces' vertex positions; faces are split
by centroid against the mean point along the dominant axis. Produces the
same tree type as the variational builder, so error reports and the
collision benchmark apply unchanged.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import obb as obb_mod
from . import outside as outside_mod
from .hierarchy import ObbNode, ObbTree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaselineConfig:
    depth: int = 2
    min_faces_per_leaf: int = 1

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.min_faces_per_leaf < 1:
            raise ValueError("min_faces_per_leaf must be >= 1")


def _pca_axes(mesh, faces):
    """Orientation from the exact surface-integral covariance of the faces.

    Each triangle contributes its analytic second moment, so the result
    depends only on the surface, not on how it is triangulated. Columns are
    eigenvectors ordered by descending eigenvalue; exact ties resolve to the
    lower original axis index first. The frame is flipped deterministically
    to a right-handed basis with non-negative dominant components.
    """
    tris = mesh.vertices[mesh.faces[faces]]            # (n, 3, 3)
    areas = 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1
    )
    total = areas.sum()
    if total <= 0.0:
        return np.eye(3)
    sums = tris.sum(axis=1)                            # p + q + r per face
    mean = (areas[:, None] * sums / 3.0).sum(axis=0) / total
    # per-triangle integral of x x^T: (a/12) (p p^T + q q^T + r r^T + s s^T)
    second = np.einsum("f,fki,fkj->ij", areas / 12.0, tris, tris)
    second += np.einsum("f,fi,fj->ij", areas / 12.0, sums, sums)
    cov = second / total - np.outer(mean, mean)
    evals, evecs = np.linalg.eigh(cov)                 # ascending
    scale = max(float(np.abs(evals).max()), 1e-300)
    if (evals.max() - evals.min()) / scale < 1e-9:
        # isotropic covariance: every frame is optimal; fix the world frame
        # so the choice is deterministic (x first)
        return np.eye(3)
    # descending by value; ties keep ascending eigenvector index (x first)
    order = np.argsort(-np.round(evals, 12), kind="stable")
    axes = evecs[:, order]
    # sign convention: largest-magnitude component of each axis positive
    for k in range(3):
        j = int(np.argmax(np.abs(axes[:, k])))
        if axes[j, k] < 0:
            axes[:, k] = -axes[:, k]
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    return axes


def _fit_box(mesh, faces, axes):
    """Tight box over the faces' vertices, recentered in the given frame."""
    pts = mesh.vertices[mesh.faces[faces].reshape(-1)]
    local = pts @ axes
    lo, hi = local.min(axis=0), local.max(axis=0)
    half = np.maximum((hi - lo) / 2.0, 1e-6 * mesh.diagonal)
    center = axes @ ((lo + hi) / 2.0)
    rotvec = Rotation.from_matrix(axes).as_rotvec()
    params = obb_mod.ObbParams(center, rotvec)
    return params, obb_mod.Obb(center, axes, half)


def _split(mesh, faces, axes):
    """Partition by centroid against the mean point along the dominant
    axis; median split if every centroid lands on one side."""
    cents = mesh.face_centroids[faces]
    proj = cents @ axes[:, 0]
    left = faces[proj < proj.mean()]
    right = faces[proj >= proj.mean()]
    if len(left) == 0 or len(right) == 0:
        order = np.argsort(proj, kind="stable")
        mid = len(faces) // 2
        left = faces[order[:mid]]
        right = faces[order[mid:]]
    return np.sort(left), np.sort(right)


def build_pca_tree(mesh, config, grid=None, cache=None):
    """Top-down PCA OBB tree to depth D (binary splits)."""
    faces = np.arange(mesh.n_faces, dtype=np.int64)
    axes = _pca_axes(mesh, faces)
    params, box = _fit_box(mesh, faces, axes)
    root = ObbNode(id=0, parent=-1, level=0, params=params, box=box,
                   faces=faces)
    tree = ObbTree(nodes=[root], branching=2, depth=config.depth)
    stack = [0]
    while stack:
        nid = stack.pop()
        nd = tree.nodes[nid]
        if nd.level >= config.depth:
            continue
        if len(nd.faces) < 2 * config.min_faces_per_leaf:
            continue
        ax = _pca_axes(mesh, nd.faces)
        for part in _split(mesh, nd.faces, ax):
            cid = len(tree.nodes)
            cax = _pca_axes(mesh, part)
            cparams, cbox = _fit_box(mesh, part, cax)
            child = ObbNode(id=cid, parent=nid, level=nd.level + 1,
                            params=cparams, box=cbox, faces=part)
            tree.nodes.append(child)
            nd.children.append(cid)
            stack.append(cid)
        stack.sort()
    if grid is not None:
        if cache is None:
            cache = outside_mod.ObvCache(
                quantum_center=1e-4 * mesh.diagonal, quantum_rot=1e-4
            )
        for nd in tree.nodes:
            nd.obv = outside_mod.estimate_obv(mesh, nd.box, grid)
    return tree
