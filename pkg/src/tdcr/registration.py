"""Correspondence-based rigid registration and workspace segmentation.

Two camera clouds are brought into the robot base frame with closed-form
(SVD) transforms estimated from fiducial correspondences, cropped to a
hemisphere around the base, and concatenated.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataValidationError, DegenerateInputError, EmptyResultError, InvalidInputError
from .pointcloud import PointCloud, RigidTransform, apply_transform, as_points, concat

PLANE_TOLERANCE = 0.005
DEFAULT_MARGIN = 0.02


@dataclass(frozen=True)
class CorrespondenceSet:
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=float)
        tgt = np.asarray(self.target, dtype=float)
        if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
            raise DegenerateInputError("source and target must be equal-length lists of 3D points")
        if src.shape[0] < 3:
            raise DegenerateInputError("at least 3 correspondences are required")
        centered = src - src.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1.0):
            raise DegenerateInputError("source points are collinear")
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)


@dataclass(frozen=True)
class WorkspaceFilter:
    center: np.ndarray
    radius: float
    halfspace_normal: np.ndarray = (0.0, 0.0, 1.0)
    plane_tolerance: float = PLANE_TOLERANCE

    def __post_init__(self):
        n = np.asarray(self.halfspace_normal, dtype=float)
        if self.radius <= 0:
            raise InvalidInputError("workspace radius must be positive")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise InvalidInputError("halfspace normal must be a unit vector")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "halfspace_normal", n)

    @classmethod
    def for_robot(cls, length, margin=DEFAULT_MARGIN):
        """Hemisphere of radius ``length + margin`` above the base origin."""
        return cls(np.zeros(3), length + margin)


def estimate_rigid_transform(c):
    """Least-squares rotation and translation taking ``c.source`` onto ``c.target``."""
    if not isinstance(c, CorrespondenceSet):
        c = CorrespondenceSet(*c)
    src_mean = c.source.mean(axis=0)
    tgt_mean = c.target.mean(axis=0)
    h = (c.source - src_mean).T @ (c.target - tgt_mean)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    # det == 0 only for rank-deficient h, which the collinearity check excludes.
    rot = v @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ u.T
    # Re-orthonormalize away accumulated rounding.
    w, _, zt = np.linalg.svd(rot)
    rot = w @ zt
    return RigidTransform(rot, tgt_mean - rot @ src_mean)


def compose(outer, inner):
    """Transform equivalent to applying ``inner`` then ``outer``."""
    return outer @ inner


def workspace_mask(points, f):
    rel = as_points(points) - f.center
    inside = np.einsum("ij,ij->i", rel, rel) <= f.radius ** 2
    above = rel @ f.halfspace_normal >= -f.plane_tolerance
    return inside & above


def segment_workspace(cloud, f):
    mask = workspace_mask(cloud, f)
    if not mask.any():
        raise EmptyResultError("workspace segmentation removed every point")
    arclen = cloud.arclen if isinstance(cloud, PointCloud) else None
    return PointCloud(as_points(cloud)[mask], None if arclen is None else arclen[mask])


def merge_views(cam1, t1, cam2, t2, f):
    return concat(segment_workspace(apply_transform(t1, cam1), f),
                  segment_workspace(apply_transform(t2, cam2), f))


def residual_rms(c, t):
    if not isinstance(c, CorrespondenceSet):
        c = CorrespondenceSet(*c)
    r = t.apply(c.source) - c.target
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", r, r))))


def save_scene(path, transforms, fiducials=None):
    """Write named transforms (12 numbers each) and optional named fiducial sets as JSON."""
    doc = {"transforms": {name: t.to_list() for name, t in transforms.items()}}
    if fiducials is not None:
        doc["fiducials"] = {name: as_points(f).tolist() for name, f in fiducials.items()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_scene(path):
    """Inverse of ``save_scene``: ``(transforms, fiducials)`` dictionaries."""
    try:
        doc = json.loads(Path(path).read_text())
        transforms = {name: RigidTransform.from_list(v) for name, v in doc["transforms"].items()}
        fiducials = {name: np.asarray(v, dtype=float) for name, v in doc.get("fiducials", {}).items()}
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise DataValidationError(f"{path}: bad scene file: {exc}") from exc
    return transforms, fiducials
