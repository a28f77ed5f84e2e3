import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vobb import obb as obb_mod


def _random_box(rng, scale=1.0):
    center = rng.uniform(-2, 2, size=3)
    rot = Rotation.random(random_state=rng).as_matrix()
    half = rng.uniform(0.2, 1.5, size=3) * scale
    return obb_mod.Obb(center, rot, half)


def _sampled_overlap(a, b, rng, n=200000):
    """Oracle: boxes overlap iff some sample of one lies in the other
    (one-sided; used only to confirm positive SAT results)."""
    u = rng.uniform(-1, 1, size=(n, 3))
    pts = a.center + (u * a.half_extents) @ a.axes.T
    return obb_mod.contains_points(b, pts, eps=1e-12).any()


def test_fit_tight_cube():
    pts = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1)
                    for sz in (-1, 1)], dtype=np.float64)
    params = obb_mod.ObbParams(np.zeros(3), np.zeros(3))
    box = obb_mod.fit_tight(pts, params)
    assert np.allclose(box.half_extents, 1.0)
    assert np.allclose(box.center, 0.0)


def test_fit_tight_respects_offcenter():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    params = obb_mod.ObbParams(np.zeros(3), np.zeros(3))
    box = obb_mod.fit_tight(pts, params)
    assert box.half_extents[0] == pytest.approx(1.0)  # center kept at 0
    box2 = obb_mod.fit_tight(pts, params, recenter=True)
    assert box2.center[0] == pytest.approx(0.5)
    assert box2.half_extents[0] == pytest.approx(0.5)


def test_params_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(100):
        rv = rng.uniform(-1, 1, size=3)
        p = obb_mod.ObbParams(rng.uniform(-1, 1, 3), rv)
        assert np.allclose(p.matrix() @ p.matrix().T, np.eye(3), atol=1e-12)
        q = obb_mod.ObbParams.from_vector(p.as_vector())
        assert np.allclose(q.matrix(), p.matrix(), atol=1e-12)


def test_compose_is_rotation_composition():
    p = obb_mod.ObbParams(np.zeros(3), np.array([0.3, -0.2, 0.1]))
    d = np.array([0.05, 0.0, -0.04])
    q = p.compose(d)
    expect = Rotation.from_rotvec(d).as_matrix() @ p.matrix()
    assert np.allclose(q.matrix(), expect, atol=1e-12)


def test_overlap_axis_aligned_cases():
    a = obb_mod.Obb(np.zeros(3), np.eye(3), np.ones(3))
    b = obb_mod.Obb(np.array([1.5, 0, 0.0]), np.eye(3), np.ones(3))
    assert obb_mod.overlap(a, b)
    c = obb_mod.Obb(np.array([2.0, 0, 0.0]), np.eye(3), np.ones(3))
    assert obb_mod.overlap(a, c)  # touching counts
    d = obb_mod.Obb(np.array([2.0 + 1e-9, 0, 0.0]), np.eye(3), np.ones(3))
    assert not obb_mod.overlap(a, d)


def test_overlap_rotated_case():
    # rotated 45 deg about z: corner reaches sqrt(2) along x
    r = Rotation.from_euler("z", 45, degrees=True).as_matrix()
    a = obb_mod.Obb(np.zeros(3), np.eye(3), np.ones(3))
    b = obb_mod.Obb(np.array([2.3, 0.0, 0.0]), r, np.ones(3))
    assert obb_mod.overlap(a, b)   # 1 + sqrt(2) > 2.3
    c = obb_mod.Obb(np.array([2.5, 0.0, 0.0]), r, np.ones(3))
    assert not obb_mod.overlap(c, a)


def test_overlap_symmetry_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        a = _random_box(rng)
        b = _random_box(rng)
        assert obb_mod.overlap(a, b) == obb_mod.overlap(b, a)


def test_overlap_rigid_invariance():
    rng = np.random.default_rng(8)
    for _ in range(500):
        a = _random_box(rng)
        b = _random_box(rng)
        r = Rotation.random(random_state=rng).as_matrix()
        t = rng.uniform(-5, 5, 3)
        a2 = obb_mod.Obb(r @ a.center + t, r @ a.axes, a.half_extents)
        b2 = obb_mod.Obb(r @ b.center + t, r @ b.axes, b.half_extents)
        assert obb_mod.overlap(a, b) == obb_mod.overlap(a2, b2)


def test_overlap_vs_sampled_oracle():
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 30:
        a = _random_box(rng)
        b = _random_box(rng)
        if _sampled_overlap(a, b, rng):
            assert obb_mod.overlap(a, b)
            checked += 1


def test_disjoint_boxes_never_share_points():
    rng = np.random.default_rng(10)
    checked = 0
    while checked < 30:
        a = _random_box(rng)
        b = _random_box(rng)
        if not obb_mod.overlap(a, b):
            assert not _sampled_overlap(a, b, rng, n=100000)
            checked += 1


def test_ray_exit_distance():
    box = obb_mod.Obb(np.zeros(3), np.eye(3), np.array([1.0, 2.0, 3.0]))
    d = np.array([1.0, 0.0, 0.0])
    assert obb_mod.ray_exit_distance(box, np.zeros(3), d) == pytest.approx(1.0)
    diag = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert obb_mod.ray_exit_distance(box, np.zeros(3), diag) == pytest.approx(
        np.sqrt(2.0)
    )
    with pytest.raises(ValueError):
        obb_mod.ray_exit_distance(box, np.array([5.0, 0, 0]), d)


def test_exit_distances_from_center_matches_scalar():
    rng = np.random.default_rng(11)
    box = _random_box(rng)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    te = obb_mod.exit_distances_from_center(box, dirs)
    for d_local, t in zip(dirs, te):
        world = box.axes @ d_local
        assert t == pytest.approx(
            obb_mod.ray_exit_distance(box, box.center, world), rel=1e-12
        )


def test_box_volume():
    box = obb_mod.Obb(np.zeros(3), np.eye(3), np.array([1.0, 2.0, 0.5]))
    assert obb_mod.box_volume(box) == pytest.approx(8.0)
