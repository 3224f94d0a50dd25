import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from tdcr.assignment import hungarian, linear_assignment
from tdcr.errors import CapacityError, InvalidInputError
from tdcr.pointcloud import (
    PointCloud,
    RigidTransform,
    apply_transform,
    chamfer_distance,
    concat,
    emd_approx,
    emd_exact,
    fps_downsample,
    loss_tendon,
    loss_tendon_gradient,
    nn_spacing_cv,
)

coords = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def cloud_strategy(min_size=1, max_size=12):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(float, (n, 3), elements=coords))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def brute_force_emd(a, b):
    best = np.inf
    for perm in itertools.permutations(range(len(a))):
        best = min(best, np.linalg.norm(a - b[list(perm)], axis=1).sum())
    return best


def brute_force_chamfer(a, b):
    fwd = sum(min(np.sum((x - y) ** 2) for y in b) for x in a)
    bwd = sum(min(np.sum((x - y) ** 2) for x in a) for y in b)
    return fwd + bwd


# -- chamfer -----------------------------------------------------------------

def test_chamfer_examples():
    a = np.array([[0.0, 0, 0]])
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, [[1.0, 0, 0]]) == 2.0
    assert chamfer_distance([[0.0, 0, 0], [2.0, 0, 0]], a) == 4.0


def test_chamfer_rejects_empty():
    with pytest.raises(InvalidInputError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((2, 3)))


@given(cloud_strategy(), cloud_strategy())
def test_chamfer_matches_loops_and_is_symmetric(a, b):
    c = chamfer_distance(a, b)
    assert c == pytest.approx(brute_force_chamfer(a, b), abs=1e-12)
    assert c == chamfer_distance(b, a)
    assert chamfer_distance(a, a) == 0.0


@settings(max_examples=50)
@given(cloud_strategy(2, 10), cloud_strategy(2, 10), st.integers(0, 2**32 - 1))
def test_chamfer_rigid_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    t = RigidTransform(random_rotation(rng), rng.normal(size=3))
    moved = chamfer_distance(apply_transform(t, a), apply_transform(t, b))
    assert moved == pytest.approx(chamfer_distance(a, b), abs=1e-9)


def test_chamfer_large_cloud_chunks():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(1300, 3)), rng.normal(size=(700, 3))
    d = ((a[:, None] - b[None]) ** 2).sum(-1)
    assert chamfer_distance(a, b) == pytest.approx(d.min(1).sum() + d.min(0).sum(), rel=1e-12)


# -- assignment / EMD -----------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 5, 17, 40])
def test_hungarian_matches_scipy(n):
    rng = np.random.default_rng(n)
    cost = rng.random((n, n))
    mine = hungarian(cost)
    ref = linear_assignment(cost, solver="scipy")
    assert cost[np.arange(n), mine].sum() == pytest.approx(cost[np.arange(n), ref].sum(), abs=1e-12)
    assert sorted(mine) == list(range(n))


def test_hungarian_handles_ties():
    cost = np.ones((4, 4))
    assert sorted(hungarian(cost)) == [0, 1, 2, 3]


def test_emd_examples():
    a = np.array([[0.0, 0, 0], [1, 0, 0]])
    cost, plan = emd_exact(a, a)
    assert cost == 0.0
    assert list(plan.pairing) == [0, 1]
    cost, plan = emd_exact(a, [[0.0, 0, 0], [0, 1, 0]])
    assert cost == pytest.approx(np.sqrt(2), abs=1e-12)
    assert list(plan.pairing) == [0, 1]


def test_emd_errors():
    with pytest.raises(InvalidInputError):
        emd_exact(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(CapacityError, match="emd_approx"):
        emd_exact(np.zeros((257, 3)), np.zeros((257, 3)))


@pytest.mark.parametrize("solver", ["scipy", "hungarian"])
@pytest.mark.parametrize("seed", range(10))
def test_emd_matches_permutation_enumeration(seed, solver):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    cost, plan = emd_exact(a, b, solver=solver)
    assert cost == pytest.approx(brute_force_emd(a, b), abs=1e-9)
    assert cost == pytest.approx(np.linalg.norm(a - b[plan.pairing], axis=1).sum(), abs=1e-12)


@settings(max_examples=50)
@given(st.integers(1, 12).flatmap(
    lambda n: st.tuples(arrays(float, (n, 3), elements=coords), arrays(float, (n, 3), elements=coords))))
def test_emd_approx_never_below_exact(pair):
    a, b = pair
    exact, _ = emd_exact(a, b)
    approx, plan = emd_approx(a, b)
    assert approx >= exact - 1e-12
    assert sorted(plan.pairing) == list(range(len(a)))


def test_emd_approx_identical_clouds():
    a = np.random.default_rng(1).normal(size=(30, 3))
    cost, plan = emd_approx(a, a)
    assert cost == pytest.approx(0.0, abs=1e-9)


def test_emd_approx_flags_nonconvergence():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    _, plan = emd_approx(a, b, iters=1, tol=1e-15)
    assert not plan.converged


# -- loss and gradient ----------------------------------------------------------

def test_loss_examples():
    a = np.random.default_rng(3).normal(size=(8, 3))
    assert loss_tendon(a, a) == 0.0
    b = a + 0.1
    assert loss_tendon(a, b, lam=0) == chamfer_distance(a, b)
    assert loss_tendon([[0.0, 0, 0]], [[1.0, 0, 0]], lam=1.0) == pytest.approx(3.0)
    assert not np.any(loss_tendon_gradient(a, a))


def test_singleton_gradient():
    # Chamfer of singletons is 2(x-1)^2, slope -4 at 0; EMD |x-1| has slope -1.
    g = loss_tendon_gradient([[0.0, 0, 0]], [[1.0, 0, 0]], lam=1.0)
    assert_allclose(g, [[-5.0, 0, 0]])


def _tie_margin(x, y):
    d = ((x[:, None] - y[None]) ** 2).sum(-1)
    margins = []
    for mat in (d, d.T):
        s = np.sort(mat, axis=1)
        margins.append((s[:, 1] - s[:, 0]).min())
    return min(margins)


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


@pytest.mark.parametrize("lam", [0.0, 1.0, 0.3])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed, lam):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    assert _tie_margin(x, y) > 1e-6
    g = loss_tendon_gradient(x, y, lam)
    fd = central_difference(lambda p: loss_tendon(p, y, lam), x)
    assert np.abs(g - fd).max() <= 1e-4 * max(1.0, np.abs(fd).max())


# -- FPS, transforms, concat ----------------------------------------------------

def _seed_with_first_index(n, target):
    for seed in range(1000):
        if np.random.default_rng(seed).integers(n) == target:
            return seed
    raise AssertionError


def test_fps_collinear_tie_break():
    pts = np.zeros((10, 3))
    pts[:, 0] = np.arange(10)
    out = fps_downsample(pts, 3, _seed_with_first_index(10, 0))
    assert_allclose(out.points[:, 0], [0, 9, 4])


def test_fps_full_and_single():
    pts = np.random.default_rng(4).normal(size=(20, 3))
    full = fps_downsample(pts, 20, seed=1)
    assert sorted(map(tuple, full.points)) == sorted(map(tuple, pts))
    one = fps_downsample(pts, 1, seed=1)
    assert any(np.array_equal(one.points[0], p) for p in pts)
    with pytest.raises(InvalidInputError):
        fps_downsample(pts, 21, seed=1)


def test_fps_with_duplicates_is_still_a_permutation():
    pts = np.zeros((6, 3))
    pts[3:, 0] = 1.0
    out = fps_downsample(PointCloud(pts, np.arange(6) / 5), 6, seed=0)
    assert sorted(out.arclen) == sorted(np.arange(6) / 5)


@settings(max_examples=25)
@given(cloud_strategy(1, 30), st.integers(0, 2**32 - 1), st.data())
def test_fps_deterministic(pts, seed, data):
    m = data.draw(st.integers(1, len(pts)))
    a = fps_downsample(pts, m, seed)
    b = fps_downsample(pts, m, seed)
    assert np.array_equal(a.points, b.points)


def test_transform_examples():
    pts = np.random.default_rng(5).normal(size=(7, 3))
    assert np.array_equal(apply_transform(RigidTransform.identity(), pts).points, pts)
    moved = apply_transform(RigidTransform(np.eye(3), [1, 2, 3]), [[0.0, 0, 0]])
    assert_allclose(moved.points, [[1, 2, 3]])
    rng = np.random.default_rng(6)
    t = RigidTransform(random_rotation(rng), rng.normal(size=3))
    back = apply_transform(t.inverse(), apply_transform(t, pts))
    assert_allclose(back.points, pts, atol=1e-12)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    moved = apply_transform(t, pts).points
    assert_allclose(np.linalg.norm(moved[:, None] - moved[None], axis=-1), d0, atol=1e-12)


def test_transform_validation_and_serialization():
    with pytest.raises(InvalidInputError):
        RigidTransform(np.diag([1.0, 1, -1]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        RigidTransform(2 * np.eye(3), np.zeros(3))
    t = RigidTransform(random_rotation(np.random.default_rng(7)), [0.1, 0.2, 0.3])
    u = RigidTransform.from_list(t.to_list())
    assert np.array_equal(u.matrix(), t.matrix())


def test_concat():
    rng = np.random.default_rng(8)
    a, b = PointCloud(rng.normal(size=(3, 3))), PointCloud(rng.normal(size=(5, 3)))
    ab = concat(a, b)
    assert ab.size == 8
    assert np.array_equal(ab.points[:3], a.points)
    assert concat(a, a).size == 6
    assert chamfer_distance(ab, ab) == 0.0


def test_pointcloud_validation():
    with pytest.raises(InvalidInputError):
        PointCloud(np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        PointCloud([[np.nan, 0, 0]])
    with pytest.raises(InvalidInputError):
        PointCloud(np.zeros((3, 3)), arclen=[0.0, 1.0])


def test_uniformity_score():
    grid = np.zeros((10, 3))
    grid[:, 0] = np.arange(10)
    assert nn_spacing_cv(grid) == pytest.approx(0.0, abs=1e-12)
    clumped = grid.copy()
    clumped[5:, 0] = 4 + 0.01 * np.arange(5)
    assert nn_spacing_cv(clumped) > 0.5
