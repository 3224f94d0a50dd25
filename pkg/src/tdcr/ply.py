"""ASCII PLY reading and writing for point clouds with an optional arclen property."""

from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .pointcloud import PointCloud, as_points


def format_ply(cloud):
    pts = as_points(cloud)
    arclen = cloud.arclen if isinstance(cloud, PointCloud) else None
    lines = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}",
             "property float x", "property float y", "property float z"]
    if arclen is not None:
        lines.append("property float arclen")
    lines.append("end_header")
    if arclen is None:
        body = ["%.9g %.9g %.9g" % tuple(p) for p in pts]
    else:
        body = ["%.9g %.9g %.9g %.9g" % (p[0], p[1], p[2], s) for p, s in zip(pts, arclen)]
    return "\n".join(lines + body) + "\n"


def write_ply(path, cloud):
    Path(path).write_text(format_ply(cloud), newline="\n")


def read_ply(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataValidationError(f"{path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataValidationError(f"{path}: not a PLY file")
    count = None
    props = []
    for n, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise DataValidationError(f"{path}: only ASCII PLY is supported")
        if tok[:2] == ["element", "vertex"]:
            count = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = n
            break
    else:
        raise DataValidationError(f"{path}: missing end_header")
    if count is None or props[:3] != ["x", "y", "z"]:
        raise DataValidationError(f"{path}: expected vertex element with x, y, z")
    rows = [ln for ln in lines[header_end + 1:] if ln.strip()]
    if len(rows) != count:
        raise DataValidationError(f"{path}: header declares {count} vertices, found {len(rows)}")
    try:
        data = np.array([[float(v) for v in ln.split()] for ln in rows], dtype=float)
    except ValueError as exc:
        raise DataValidationError(f"{path}: {exc}") from exc
    if count and data.shape[1] != len(props):
        raise DataValidationError(f"{path}: rows do not match the declared properties")
    data = data.reshape(count, len(props))
    arclen = data[:, props.index("arclen")] if "arclen" in props else None
    return PointCloud(data[:, :3], arclen)
