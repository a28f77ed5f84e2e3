"""Variational oriented-bounding-box hierarchies for watertight meshes.

Builds OBB trees that minimize the volume outside the solid but inside the
boxes, via Lloyd-style clustering within a level and reciprocating
optimization between levels, plus a PCA-split baseline tree and an
instrumented collision benchmark.
"""

from .baseline import BaselineConfig, build_pca_tree
from .bench import (
    BenchReport,
    CollisionStats,
    CostModel,
    RigidTransform,
    brute_force_hit,
    run_bench,
    traverse_pair,
    tri_tri_intersect,
)
from .hierarchy import (
    ErrorReport,
    HierarchyConfig,
    ObbNode,
    ObbTree,
    load_tree,
    mesh_hash,
    reciprocate,
    save_tree,
    tree_error,
)
from .mesh import (
    DegenerateRayError,
    MeshError,
    NotWatertightError,
    SolidityReport,
    TriangleMesh,
    build_mesh,
    load_mesh,
    point_in_solid,
    validate_solid,
)
from .obb import Obb, ObbParams, box_volume, fit_tight, overlap
from .outside import (
    EstimatorConfig,
    ObvCache,
    brute_force_obv,
    build_direction_grid,
    estimate_obv,
)
from .partition import (
    DescentConfig,
    LloydConfig,
    Partition,
    delta_obv,
    flood_partition,
    lloyd_optimize,
    refit_cluster,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "BenchReport",
    "CollisionStats",
    "CostModel",
    "DegenerateRayError",
    "DescentConfig",
    "ErrorReport",
    "EstimatorConfig",
    "HierarchyConfig",
    "LloydConfig",
    "MeshError",
    "NotWatertightError",
    "Obb",
    "ObbNode",
    "ObbParams",
    "ObbTree",
    "ObvCache",
    "Partition",
    "RigidTransform",
    "SolidityReport",
    "TriangleMesh",
    "box_volume",
    "brute_force_hit",
    "brute_force_obv",
    "build_direction_grid",
    "build_mesh",
    "build_pca_tree",
    "delta_obv",
    "estimate_obv",
    "fit_tight",
    "flood_partition",
    "load_mesh",
    "load_tree",
    "lloyd_optimize",
    "mesh_hash",
    "overlap",
    "point_in_solid",
    "reciprocate",
    "refit_cluster",
    "run_bench",
    "save_tree",
    "traverse_pair",
    "tree_error",
    "tri_tri_intersect",
    "validate_solid",
]
