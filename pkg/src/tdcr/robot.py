"""Analytic surrogate of a four-tendon continuum robot.

Three straight tendons and one helical tendon bend a flexible backbone. The
local curvature vector is the tendon-weighted sum of routing directions, so
straight tendons give circular arcs and the helical tendon a rotating bend
direction with no local torsion. Nine disks and
a thin tube around the backbone form the surface that is sampled into
point clouds. A directional deadband on tendon displacement makes the shape
depend on the previously commanded configuration.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .optimize import pattern_search
from .pointcloud import PointCloud, as_points, chamfer_distance, fps_downsample

DEFAULT_SEGMENTS = 256
DEFAULT_RAW_POINTS = 4096
DEFAULT_NOISE = 0.0005
DEFAULT_M = 512


@dataclass(frozen=True)
class RobotParams:
    backbone_length: float = 0.2
    tendon_radial_offset: float = 0.01
    straight_tendon_angles: tuple = (0.0, 2 * math.pi / 3, 4 * math.pi / 3)
    helical_turns: float = 1.0
    helical_phase: float = 0.0
    disk_count: int = 9
    disk_spacing: float = 0.02
    disk_thickness: float = 0.003
    backbone_tube_radius: float = 0.002
    q_max: float = 0.02
    curvature_gain: float = 1.0
    base_plate_half_width: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "straight_tendon_angles",
                           tuple(float(a) for a in self.straight_tendon_angles))
        if self.backbone_length <= 0:
            raise InvalidInputError("backbone length must be positive")
        if self.tendon_radial_offset <= 0:
            raise InvalidInputError("tendon radial offset must be positive")
        if self.q_max <= 0:
            raise InvalidInputError("q_max must be positive")
        if self.disk_count * self.disk_spacing > self.backbone_length + self.disk_spacing + 1e-12:
            raise InvalidInputError("disks do not fit on the backbone")

    @property
    def tendon_count(self):
        return len(self.straight_tendon_angles) + 1

    @property
    def disk_diameter(self):
        # Tendons run through the disk rims, so the disk radius is the tendon offset.
        return 2.0 * self.tendon_radial_offset

    def to_dict(self):
        d = asdict(self)
        d["straight_tendon_angles"] = list(self.straight_tendon_angles)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        diameter = d.pop("disk_diameter", None)
        d.pop("tendon_count", None)
        if diameter is not None and "tendon_radial_offset" not in d:
            d["tendon_radial_offset"] = diameter / 2.0
        return cls(**d)


@dataclass(frozen=True)
class HysteresisParams:
    deadband: float = 0.0016
    smoothing_width: float = 0.0005

    def __post_init__(self):
        if self.deadband < 0:
            raise InvalidInputError("deadband must be nonnegative")
        if self.smoothing_width <= 0:
            raise InvalidInputError("smoothing width must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def validate_config(p, q):
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != p.tendon_count:
        raise InvalidInputError(f"expected {p.tendon_count} tendon displacements, got {q.shape[0]}")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > p.q_max + 1e-15):
        raise InvalidInputError(f"tendon displacements must lie in [0, {p.q_max}]: {q}")
    return q


@dataclass(frozen=True, eq=False)
class HysteresisConfig:
    """Previously commanded and current tendon displacements."""

    q_prior: np.ndarray
    q_current: np.ndarray

    def __post_init__(self):
        a = np.array(self.q_prior, dtype=float).reshape(-1)
        b = np.array(self.q_current, dtype=float).reshape(-1)
        if a.shape != b.shape:
            raise InvalidInputError("prior and current configurations differ in length")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "q_prior", a)
        object.__setattr__(self, "q_current", b)

    def as_vector(self):
        return np.concatenate([self.q_prior, self.q_current])

    def __eq__(self, other):
        return (isinstance(other, HysteresisConfig)
                and np.array_equal(self.q_prior, other.q_prior)
                and np.array_equal(self.q_current, other.q_current))

    def __hash__(self):
        return hash((self.q_prior.tobytes(), self.q_current.tobytes()))


@dataclass(frozen=True, eq=False)
class BackboneCurve:
    """Backbone stations: positions (S+1, 3), frames (S+1, 3, 3), arc lengths (S+1,).

    ``curvature`` holds each segment's constant curvature vector in its local
    cross-section plane, so poses between stations can be evaluated exactly.
    """

    positions: np.ndarray
    frames: np.ndarray
    arclen: np.ndarray
    curvature: np.ndarray = field(repr=False)

    @property
    def tip(self):
        return self.positions[-1]

    @property
    def length(self):
        return float(self.arclen[-1])


def _arc_motion(kappa, ds):
    """Local rotation (..., 3, 3) and displacement (..., 3) of constant-curvature
    arcs with in-plane curvature vectors ``kappa`` (..., 2) over lengths ``ds``."""
    kappa = np.asarray(kappa, dtype=float)
    ds = np.broadcast_to(np.asarray(ds, dtype=float), kappa.shape[:-1])
    k = np.hypot(kappa[..., 0], kappa[..., 1])
    theta = k * ds
    bent = k > 0
    safe_k = np.where(bent, k, 1.0)
    dx = np.where(bent, kappa[..., 0] / safe_k, 1.0)
    dy = np.where(bent, kappa[..., 1] / safe_k, 0.0)
    c, s = np.cos(theta), np.sin(theta)
    small = theta < 1e-6
    # (1 - cos)/k and sin/k with series fallbacks near zero curvature.
    lateral = np.where(small, ds * theta / 2 * (1 - theta ** 2 / 12), (1 - c) / safe_k)
    axial = np.where(small, ds * (1 - theta ** 2 / 6), s / safe_k)
    disp = np.stack([lateral * dx, lateral * dy, axial], axis=-1)
    # Rotation about axis (-dy, dx, 0) by theta, tipping +z toward (dx, dy, 0).
    one_c = 1 - c
    rot = np.empty(kappa.shape[:-1] + (3, 3))
    rot[..., 0, 0] = c + dy * dy * one_c
    rot[..., 0, 1] = -dx * dy * one_c
    rot[..., 0, 2] = dx * s
    rot[..., 1, 0] = -dx * dy * one_c
    rot[..., 1, 1] = c + dx * dx * one_c
    rot[..., 1, 2] = dy * s
    rot[..., 2, 0] = -dx * s
    rot[..., 2, 1] = -dy * s
    rot[..., 2, 2] = c
    return rot, disp


def _hat(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -w[..., 2], w[..., 1]
    out[..., 1, 0], out[..., 1, 2] = w[..., 2], -w[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -w[..., 1], w[..., 0]
    return out


def _se3_exp(v, w):
    """Rotation and translation of the SE(3) exponential of body twists (v, w)."""
    th = np.linalg.norm(w, axis=-1)
    small = th < 1e-8
    ts = np.where(small, 1.0, th)
    a = np.where(small, 1 - th ** 2 / 6, np.sin(ts) / ts)
    b = np.where(small, 0.5 - th ** 2 / 24, (1 - np.cos(ts)) / ts ** 2)
    c = np.where(small, 1 / 6 - th ** 2 / 120, (ts - np.sin(ts)) / ts ** 3)
    wh = _hat(w)
    wh2 = wh @ wh
    eye = np.eye(3)
    rot = eye + a[..., None, None] * wh + b[..., None, None] * wh2
    jac = eye + b[..., None, None] * wh + c[..., None, None] * wh2
    return rot, np.einsum("nij,nj->ni", jac, v)


def curvature_at(p, q, s):
    """In-plane curvature vectors (n, 2) at arc lengths ``s``."""
    q = validate_config(p, q)
    length = p.backbone_length
    s = np.asarray(s, dtype=float)
    gain = p.curvature_gain / (p.tendon_radial_offset * length)
    ang = np.asarray(p.straight_tendon_angles)
    straight = np.array([np.dot(q[:-1], np.cos(ang)), np.dot(q[:-1], np.sin(ang))])
    phi_h = p.helical_phase + 2 * np.pi * p.helical_turns * s / length
    kappa = np.empty(s.shape + (2,))
    kappa[..., 0] = straight[0] + q[-1] * np.cos(phi_h)
    kappa[..., 1] = straight[1] + q[-1] * np.sin(phi_h)
    return gain * kappa


def segment_curvatures(p, q, segments):
    """Curvature vectors (segments, 2) at segment midpoints."""
    ds = p.backbone_length / segments
    return curvature_at(p, q, (np.arange(segments) + 0.5) * ds)


def _angular_rate(kappa):
    # Bending toward in-plane direction d rotates about z x d; no torsion.
    return np.stack([-kappa[..., 1], kappa[..., 0], np.zeros(kappa.shape[:-1])], axis=-1)


def backbone_from_config(p, q, segments=DEFAULT_SEGMENTS):
    """Integrate the backbone from the base along +z.

    Each segment is advanced by the exponential map of its body twist. The
    twist comes from a fourth-order Magnus expansion with two Gauss points, so
    piecewise-constant curvature (straight tendons only) is reproduced exactly
    and the rotating helical contribution converges quickly in ``segments``.
    """
    if segments < 16:
        raise InvalidInputError("at least 16 segments are required")
    q = validate_config(p, q)
    ds = p.backbone_length / segments
    start = np.arange(segments) * ds
    g = np.sqrt(3) / 6
    w1 = _angular_rate(curvature_at(p, q, start + (0.5 - g) * ds))
    w2 = _angular_rate(curvature_at(p, q, start + (0.5 + g) * ds))
    axial = np.array([0.0, 0.0, 1.0])
    c = np.sqrt(3) / 12 * ds * ds
    omega = ds / 2 * (w1 + w2) + c * np.cross(w1, w2)
    vel = ds * axial + c * (np.cross(w1, axial) - np.cross(w2, axial))
    rot, disp = _se3_exp(vel, omega)
    positions = np.zeros((segments + 1, 3))
    frames = np.empty((segments + 1, 3, 3))
    frames[0] = np.eye(3)
    pos = np.zeros(3)
    frame = np.eye(3)
    for k in range(segments):
        pos = pos + frame @ disp[k]
        frame = frame @ rot[k]
        positions[k + 1] = pos
        frames[k + 1] = frame
    arclen = np.arange(segments + 1) * ds
    return BackboneCurve(positions, frames, arclen, segment_curvatures(p, q, segments))


def tip_position(p, q, segments=DEFAULT_SEGMENTS):
    return backbone_from_config(p, q, segments).tip


def pose_at(curve, s):
    """Exact position (n, 3) and frame (n, 3, 3) at arc lengths ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n_seg = curve.curvature.shape[0]
    ds = curve.length / n_seg
    idx = np.clip(np.floor(s / ds).astype(int), 0, n_seg - 1)
    local = s - curve.arclen[idx]
    rot, disp = _arc_motion(curve.curvature[idx], local)
    frames = curve.frames[idx]
    pos = curve.positions[idx] + np.einsum("nij,nj->ni", frames, disp)
    return pos, frames @ rot


def surface_cloud(p, curve, n_raw=DEFAULT_RAW_POINTS, noise_sigma=DEFAULT_NOISE, seed=0):
    """Area-weighted uniform samples of the disks and backbone tube.

    Each point is labeled with the normalized arc length of the station that
    generated it: the disk's station for disk points, the sampled station for
    tube points.
    """
    if n_raw < 64:
        raise InvalidInputError("n_raw must be at least 64")
    length = p.backbone_length
    r = p.tendon_radial_offset
    t = p.disk_thickness
    rho = p.backbone_tube_radius
    n_disk = p.disk_count
    # component 0: tube; then per disk: top face, bottom face, rim.
    areas = np.concatenate([[2 * np.pi * rho * length],
                            np.tile([np.pi * r * r, np.pi * r * r, 2 * np.pi * r * t], n_disk)])
    rng = np.random.default_rng(seed)
    comp = rng.choice(areas.size, size=n_raw, p=areas / areas.sum())
    u = rng.random((n_raw, 2))

    tube = comp == 0
    disk = np.where(tube, 0, (comp - 1) // 3 + 1)
    kind = np.where(tube, -1, (comp - 1) % 3)
    station = np.where(tube, u[:, 0] * length, disk * p.disk_spacing)

    ang = 2 * np.pi * np.where(kind == 2, u[:, 0], u[:, 1])
    radius = np.select([tube, kind == 2], [rho, r], default=r * np.sqrt(u[:, 0]))
    height = np.select([kind == 0, kind == 1, kind == 2], [t / 2, -t / 2, (u[:, 1] - 0.5) * t], 0.0)
    local = np.stack([radius * np.cos(ang), radius * np.sin(ang), height], axis=1)

    pos, frames = pose_at(curve, station)
    pts = pos + np.einsum("nij,nj->ni", frames, local)
    if noise_sigma > 0:
        pts = pts + rng.normal(scale=noise_sigma, size=pts.shape)
    return PointCloud(pts, station / length)


def hysteresis_effective_config(h, eta, q_max=RobotParams.q_max):
    """Directional smooth deadband per tendon.

    Pulling from a lower prior undershoots by up to ``deadband``; releasing
    from a higher prior overshoots by the same amount.
    """
    cur = np.asarray(eta.q_current, dtype=float)
    prior = np.asarray(eta.q_prior, dtype=float)
    if h.deadband == 0:
        return cur.copy()
    lag = h.deadband * np.tanh((cur - prior) / h.smoothing_width)
    return np.clip(cur - lag, 0.0, q_max)


def ground_truth_cloud(p, h, eta, M=DEFAULT_M, noise_sigma=DEFAULT_NOISE, seed=0,
                       segments=DEFAULT_SEGMENTS, n_raw=DEFAULT_RAW_POINTS):
    validate_config(p, eta.q_prior)
    validate_config(p, eta.q_current)
    q_eff = hysteresis_effective_config(h, eta, p.q_max)
    curve = backbone_from_config(p, q_eff, segments)
    return fps_downsample(surface_cloud(p, curve, n_raw, noise_sigma, seed), M, seed)


def true_tip(p, h, eta, segments=DEFAULT_SEGMENTS):
    return tip_position(p, hysteresis_effective_config(h, eta, p.q_max), segments)


def perturbed_params(p, gain=0.85, offset_scale=1.10):
    """Systematically biased copy of ``p`` used as the hysteresis-free comparator."""
    return replace(p, curvature_gain=gain,
                   tendon_radial_offset=p.tendon_radial_offset * offset_scale)


def baseline_cloud(p_perturbed, q, M=DEFAULT_M, seed=0, segments=DEFAULT_SEGMENTS,
                   n_raw=DEFAULT_RAW_POINTS):
    q = np.asarray(q, dtype=float)
    eta = HysteresisConfig(q, q)
    return ground_truth_cloud(p_perturbed, HysteresisParams(deadband=0.0), eta, M,
                              noise_sigma=0.0, seed=seed, segments=segments, n_raw=n_raw)


CALIBRATED_FIELDS = ("curvature_gain", "tendon_radial_offset", "helical_phase")


def calibrate_baseline(p_init, training_pairs, max_evals=200, seed_base=0,
                       n_raw=DEFAULT_RAW_POINTS, segments=DEFAULT_SEGMENTS, return_result=False):
    """Fit gain, tendon offset, and helical phase of the baseline by pattern search.

    The objective is the mean Chamfer distance between ``baseline_cloud`` for
    each configuration (seeded ``seed_base + i``) and the given cloud.
    """
    pairs = list(training_pairs)
    if not pairs:
        raise InvalidInputError("calibration needs at least one (config, cloud) pair")
    clouds = [as_points(c) for _, c in pairs]
    configs = [validate_config(p_init, q) for q, _ in pairs]

    # Search in (gamma / r, r, phase): curvature depends on gamma and r only
    # through their ratio, so this keeps coordinate moves off the narrow valley
    # where the ratio is right and only the disk size differs.
    def params_for(x):
        return replace(p_init, curvature_gain=x[0] * x[1], tendon_radial_offset=x[1],
                       helical_phase=x[2])

    def objective(x):
        if x[0] <= 0 or x[1] <= 0:
            return np.inf
        p = params_for(x)
        return np.mean([chamfer_distance(baseline_cloud(p, q, len(c), seed_base + i, segments, n_raw), c)
                        for i, (q, c) in enumerate(zip(configs, clouds))])

    r0 = p_init.tendon_radial_offset
    x0 = np.array([p_init.curvature_gain / r0, r0, p_init.helical_phase])
    # Phase is an angle: scale its steps by pi when it starts at zero.
    scales = np.where(np.abs(x0) > 0, np.abs(x0), [1.0 / r0, r0, np.pi])
    result = pattern_search(objective, x0, scales, max_evals=max_evals)
    best = p_init if result.evals == 0 else params_for(result.x)
    return (best, result) if return_result else best


def export_fiducials(p):
    """Home tip followed by the four base-plate corners, counter-clockwise."""
    w = p.base_plate_half_width
    return np.array([[0.0, 0.0, p.backbone_length],
                     [w, w, 0.0], [-w, w, 0.0], [-w, -w, 0.0], [w, -w, 0.0]])
