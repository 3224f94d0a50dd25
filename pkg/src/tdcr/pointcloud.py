"""Point-cloud container, rigid transforms, and correspondence-free distances.

Chamfer distance uses squared Euclidean distances; EMD uses plain Euclidean
distances over a bijection. Both follow the definitions used by the training
loss, so the blended loss mixes m^2 and m units as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .assignment import linear_assignment
from .errors import CapacityError, InvalidInputError

EXACT_EMD_CAP = 256
_CHUNK = 512


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered (M, 3) array of points in meters.

    ``arclen`` optionally labels each point with the normalized backbone
    arc length of the station that generated it (simulator ground truth only).
    """

    points: np.ndarray
    arclen: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"points must have shape (M, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.arclen is not None:
            lab = np.array(self.arclen, dtype=float).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise InvalidInputError("arclen labels must match the point count")
            lab.flags.writeable = False
            object.__setattr__(self, "arclen", lab)

    @property
    def size(self):
        return self.points.shape[0]

    def __len__(self):
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    def equals(self, other, tol=0.0):
        if self.size != other.size:
            return False
        return bool(np.all(np.abs(self.points - other.points) <= tol))


@dataclass(frozen=True)
class TransportPlan:
    """A bijection ``pairing[i]`` (index into the second cloud) and its cost."""

    pairing: np.ndarray
    cost: float
    converged: bool = True

    def __post_init__(self):
        pairing = np.asarray(self.pairing, dtype=np.intp)
        n = pairing.shape[0]
        if not np.array_equal(np.sort(pairing), np.arange(n)):
            raise InvalidInputError("pairing is not a permutation")
        object.__setattr__(self, "pairing", pairing)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise InvalidInputError("rotation determinant is not +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, inner):
        # (self @ inner) applies inner first, then self.
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_list(self):
        """12 numbers: row-major rotation followed by translation."""
        return [float(x) for x in self.rotation.reshape(-1)] + [float(x) for x in self.translation]

    @classmethod
    def from_list(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (12,):
            raise InvalidInputError("a serialized transform has exactly 12 numbers")
        return cls(values[:9].reshape(3, 3), values[9:])

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def as_points(cloud):
    """Return the (M, 3) float array behind a PointCloud or array-like."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"points must have shape (M, 3), got {pts.shape}")
    return pts


def _nonempty(*clouds):
    pts = [as_points(c) for c in clouds]
    for p in pts:
        if p.shape[0] == 0:
            raise InvalidInputError("point cloud is empty")
    return pts


def sq_dists(a, b):
    """Dense (len(a), len(b)) matrix of squared distances by direct differencing."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], _CHUNK):
        diff = a[start:start + _CHUNK, None, :] - b[None, :, :]
        out[start:start + _CHUNK] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_neighbors(a, b):
    """For each row of ``a``: index of nearest point in ``b`` (lowest index on ties)
    and the squared distance to it. Returns both directions."""
    d = sq_dists(a, b)
    fwd = np.argmin(d, axis=1)
    bwd = np.argmin(d, axis=0)
    return fwd, d[np.arange(d.shape[0]), fwd], bwd, d[bwd, np.arange(d.shape[1])]


def chamfer_distance(a, b):
    a, b = _nonempty(a, b)
    _, fwd_d, _, bwd_d = nearest_neighbors(a, b)
    return float(fwd_d.sum() + bwd_d.sum())


def _equal_sizes(a, b):
    a, b = _nonempty(a, b)
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"EMD needs equal sizes, got {a.shape[0]} and {b.shape[0]}")
    return a, b


def _pair_cost(a, b, pairing):
    return float(np.linalg.norm(a - b[pairing], axis=1).sum())


def emd_exact(a, b, cap=EXACT_EMD_CAP, solver="scipy"):
    """Exact EMD via linear assignment. Returns ``(cost, TransportPlan)``."""
    a, b = _equal_sizes(a, b)
    n = a.shape[0]
    if n > cap:
        raise CapacityError(f"{n} points exceeds the exact EMD cap of {cap}; use emd_approx")
    cost = np.sqrt(sq_dists(a, b))
    pairing = linear_assignment(cost, solver=solver)
    total = _pair_cost(a, b, pairing)
    return total, TransportPlan(pairing, total)


def _round_plan(log_plan, cost):
    """Round a soft plan to a bijection.

    Each row takes its argmax column; a column claimed by several rows keeps
    the row with the largest plan mass. Losing rows are reassigned to the
    leftover columns by an exact assignment on the residual cost block.
    """
    n = cost.shape[0]
    choice = np.argmax(log_plan, axis=1)
    mass = log_plan[np.arange(n), choice]
    pairing = np.full(n, -1, dtype=np.intp)
    taken = np.zeros(n, dtype=bool)
    # Stable sort by descending mass keeps the lowest row index first on ties.
    for i in np.argsort(-mass, kind="stable"):
        j = choice[i]
        if not taken[j]:
            pairing[i] = j
            taken[j] = True
    rows = np.flatnonzero(pairing < 0)
    if rows.size:
        cols = np.flatnonzero(~taken)
        sub = linear_assignment(cost[np.ix_(rows, cols)])
        pairing[rows] = cols[sub]
    return pairing


def _two_opt(cost, pairing, max_passes=50):
    """Improve a bijection by pairwise swaps until no swap lowers the cost."""
    pairing = pairing.copy()
    rows = np.arange(len(pairing))
    for _ in range(max_passes):
        improved = False
        for i in rows:
            gain = (cost[i, pairing[i]] + cost[rows, pairing]) - (cost[i, pairing] + cost[rows, pairing[i]])
            k = int(np.argmax(gain))
            if gain[k] > 1e-15:
                pairing[i], pairing[k] = pairing[k], pairing[i]
                improved = True
        if not improved:
            break
    return pairing


def emd_approx(a, b, reg=None, iters=200, tol=1e-6):
    """Entropic-regularized EMD rounded to a bijection and refined by swaps.

    ``reg`` defaults to 1% of the mean pairwise distance. The reported cost is
    that of the rounded bijection, so it is never below the exact EMD. The
    returned plan's ``converged`` flag reports whether the marginal error fell
    below ``tol`` within ``iters`` scaling iterations.
    """
    a, b = _equal_sizes(a, b)
    n = a.shape[0]
    cost = np.sqrt(sq_dists(a, b))
    if reg is None:
        reg = 0.01 * float(cost.mean())
    if reg <= 0:
        if not np.any(cost):
            return 0.0, TransportPlan(np.arange(n), 0.0)
        raise InvalidInputError("reg must be positive")
    log_k = -cost / reg
    log_w = np.full(n, -np.log(n))
    log_u = np.zeros(n)
    log_v = np.zeros(n)
    converged = False
    for _ in range(iters):
        log_u = log_w - logsumexp(log_k + log_v[None, :], axis=1)
        log_v = log_w - logsumexp(log_k + log_u[:, None], axis=0)
        row_mass = np.exp(logsumexp(log_k + log_v[None, :], axis=1) + log_u)
        if np.abs(row_mass - 1.0 / n).sum() < tol:
            converged = True
            break
    log_plan = log_u[:, None] + log_k + log_v[None, :]
    # Rounding an under-converged plan loses several percent; swaps recover most of it.
    pairing = _two_opt(cost, _round_plan(log_plan, cost))
    total = _pair_cost(a, b, pairing)
    return total, TransportPlan(pairing, total, converged)


def emd(a, b, cap=EXACT_EMD_CAP, **approx_kw):
    """Exact EMD up to ``cap`` points, approximate beyond."""
    if as_points(a).shape[0] <= cap:
        return emd_exact(a, b, cap=cap)
    return emd_approx(a, b, **approx_kw)


def loss_tendon(pred, truth, lam=1.0, cap=EXACT_EMD_CAP):
    """Chamfer distance plus ``lam`` times EMD."""
    value = chamfer_distance(pred, truth)
    if lam == 0:
        return value
    cost, _ = emd(pred, truth, cap=cap)
    return value + lam * cost


def _chamfer_terms(x, y, d):
    fwd = np.argmin(d, axis=1)
    bwd = np.argmin(d, axis=0)
    value = float(d[np.arange(d.shape[0]), fwd].sum() + d[bwd, np.arange(d.shape[1])].sum())
    grad = 2.0 * (x - y[fwd])
    np.add.at(grad, bwd, 2.0 * (x[bwd] - y))
    return value, grad


def _emd_terms(x, y, d, cap, **approx_kw):
    if x.shape[0] <= cap:
        pairing = linear_assignment(np.sqrt(d))
    else:
        pairing = emd_approx(x, y, **approx_kw)[1].pairing
    diff = x - y[pairing]
    norm = np.linalg.norm(diff, axis=1)
    grad = np.zeros_like(x)
    ok = norm >= 1e-12
    grad[ok] = diff[ok] / norm[ok, None]
    return float(norm.sum()), grad


def chamfer_gradient(pred, truth):
    """Subgradient of the Chamfer distance w.r.t. ``pred`` with nearest-neighbor
    pairings held fixed. Returns ``(value, grad)``."""
    x, y = _nonempty(pred, truth)
    return _chamfer_terms(x, y, sq_dists(x, y))


def emd_gradient(pred, truth, cap=EXACT_EMD_CAP):
    """Subgradient of EMD w.r.t. ``pred`` with the transport plan held fixed."""
    x, y = _equal_sizes(pred, truth)
    return _emd_terms(x, y, sq_dists(x, y), cap)


def loss_and_gradient(pred, truth, lam=1.0, cap=EXACT_EMD_CAP):
    """``loss_tendon`` and its gradient, sharing one distance matrix."""
    if lam == 0:
        return chamfer_gradient(pred, truth)
    x, y = _equal_sizes(pred, truth)
    d = sq_dists(x, y)
    value, grad = _chamfer_terms(x, y, d)
    cost, g_emd = _emd_terms(x, y, d, cap)
    return value + lam * cost, grad + lam * g_emd


def loss_tendon_gradient(pred, truth, lam=1.0, cap=EXACT_EMD_CAP):
    """Per-point (M, 3) gradient of ``loss_tendon`` w.r.t. ``pred``."""
    return loss_and_gradient(pred, truth, lam, cap)[1]


def fps_downsample(cloud, m, seed):
    """Farthest-point sampling of ``m`` points.

    The first point is a seeded uniform draw; each later point maximizes the
    distance to the selected set, lowest index on ties.
    """
    pts = as_points(cloud)
    n = pts.shape[0]
    if m < 1 or m > n:
        raise InvalidInputError(f"cannot select {m} points from a cloud of {n}")
    rng = np.random.default_rng(seed)
    idx = np.empty(m, dtype=np.intp)
    idx[0] = rng.integers(n)
    diff = pts - pts[idx[0]]
    mind = np.einsum("ij,ij->i", diff, diff)
    mind[idx[0]] = -1.0
    for k in range(1, m):
        nxt = int(np.argmax(mind))
        idx[k] = nxt
        diff = pts - pts[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", diff, diff), out=mind)
        mind[nxt] = -1.0
    arclen = cloud.arclen if isinstance(cloud, PointCloud) else None
    return PointCloud(pts[idx], None if arclen is None else arclen[idx])


def apply_transform(t, cloud):
    arclen = cloud.arclen if isinstance(cloud, PointCloud) else None
    return PointCloud(t.apply(as_points(cloud)), arclen)


def concat(a, b):
    lab = None
    if isinstance(a, PointCloud) and isinstance(b, PointCloud) \
            and a.arclen is not None and b.arclen is not None:
        lab = np.concatenate([a.arclen, b.arclen])
    return PointCloud(np.vstack([as_points(a), as_points(b)]), lab)


def nn_spacing_cv(cloud):
    """Coefficient of variation of within-cloud nearest-neighbor distances."""
    pts = as_points(cloud)
    d = sq_dists(pts, pts)
    np.fill_diagonal(d, np.inf)
    nn = np.sqrt(d.min(axis=1))
    mean = nn.mean()
    return float(nn.std() / mean) if mean > 0 else 0.0
