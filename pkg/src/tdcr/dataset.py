"""Hysteresis-configuration datasets: generation, persistence, and splits.

On disk a dataset is a directory holding ``manifest.jsonl`` (one header line,
then one JSON record per line) and ``clouds/{id:06}.ply``.
"""

from __future__ import annotations

import itertools
import json
import shutil
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataValidationError, InvalidInputError, ManifestParseError
from .parallel import ordered_map
from .ply import read_ply, write_ply
from .robot import (DEFAULT_NOISE, DEFAULT_RAW_POINTS, DEFAULT_SEGMENTS, HysteresisConfig,
                    HysteresisParams, RobotParams, ground_truth_cloud)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.jsonl"
DEFAULT_TEST_COUNT = 50
DEFAULT_VAL_FRACTION = 0.3


def satisfies_constraints(q):
    """At most two straight tendons pulled; the helical tendon only alone."""
    straight = np.count_nonzero(q[:-1])
    return straight <= 2 and (q[-1] == 0 or straight == 0)


def generate_nominal_grid(p, levels):
    if levels < 2:
        raise InvalidInputError("levels must be at least 2")
    values = np.linspace(0.0, p.q_max, levels)
    grid = []
    for combo in itertools.product(values, repeat=p.tendon_count):
        q = np.array(combo)
        if q.any() and satisfies_constraints(q):
            grid.append(q)
    return grid


def build_home_prior_set(nominal):
    if not nominal:
        raise InvalidInputError("nominal set is empty")
    return [HysteresisConfig(np.zeros_like(q), q) for q in nominal]


def augment_random_prior(nominal, copies, seed):
    """``copies`` passes over the nominal set, each pairing every configuration
    with a uniformly drawn different one as its prior."""
    if copies < 1:
        raise InvalidInputError("copies must be at least 1")
    n = len(nominal)
    if n < 2:
        raise InvalidInputError("at least two nominal configurations are required")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(copies):
        draws = rng.integers(n - 1, size=n)
        for i, j in enumerate(draws):
            j = j + 1 if j >= i else j
            out.append(HysteresisConfig(nominal[j], nominal[i]))
    return out


def generate_trajectories(nominal, n_traj, traj_len, seed):
    """Random walks over distinct nominal configurations, starting from home."""
    if traj_len < 2:
        raise InvalidInputError("trajectories need at least two steps")
    if traj_len > len(nominal):
        raise InvalidInputError("trajectory longer than the nominal set")
    rng = np.random.default_rng(seed)
    trajectories = []
    for _ in range(n_traj):
        picks = rng.choice(len(nominal), size=traj_len, replace=False)
        prior = np.zeros_like(nominal[0])
        steps = []
        for k in picks:
            steps.append(HysteresisConfig(prior, nominal[k]))
            prior = nominal[k]
        trajectories.append(steps)
    return trajectories


def standard_recipe(p, levels, copies, seed):
    """Home-prior pass followed by ``copies`` random-prior passes."""
    nominal = generate_nominal_grid(p, levels)
    return build_home_prior_set(nominal) + augment_random_prior(nominal, copies, seed)


@dataclass(frozen=True)
class DatasetRecord:
    id: int
    eta: HysteresisConfig
    cloud_path: str
    split: str
    traj: int | None = None
    step: int | None = None

    def to_json(self):
        d = {"id": self.id, "q_prior": self.eta.q_prior.tolist(),
             "q_current": self.eta.q_current.tolist(), "cloud": self.cloud_path,
             "split": self.split}
        if self.traj is not None:
            d["traj"] = self.traj
            d["step"] = self.step
        return d


@dataclass
class DatasetManifest:
    records: list
    robot: RobotParams
    hysteresis: HysteresisParams
    M: int
    seed: int
    noise_sigma: float = DEFAULT_NOISE
    n_raw: int = DEFAULT_RAW_POINTS
    segments: int = DEFAULT_SEGMENTS
    test_count: int = DEFAULT_TEST_COUNT
    recipe: str | None = None
    root: Path | None = field(default=None, compare=False)

    @property
    def counts(self):
        c = {s: 0 for s in SPLITS}
        for r in self.records:
            c[r.split] += 1
        return c

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def header(self):
        return {"format": "tdcr-dataset", "version": 1, "robot": self.robot.to_dict(),
                "hysteresis": self.hysteresis.to_dict(), "M": self.M, "seed": self.seed,
                "noise_sigma": self.noise_sigma, "n_raw": self.n_raw, "segments": self.segments,
                "test_count": self.test_count, "recipe": self.recipe, "counts": self.counts,
                "total": len(self.records)}

    def cloud(self, record):
        return read_ply(Path(self.root) / record.cloud_path)

    def clouds(self, records):
        """Stacked (n, M, 3) array of the records' clouds."""
        return np.stack([self.cloud(r).points for r in records]) if records else np.zeros((0, self.M, 3))


def assign_splits(n, seed, test_count=DEFAULT_TEST_COUNT, val_fraction=DEFAULT_VAL_FRACTION):
    """Seeded shuffle: the first ``test_count`` go to test, the remainder 70/30."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(test_count, n)
    rest = n - n_test
    n_train = int(np.floor((1.0 - val_fraction) * rest + 0.5))
    split = np.empty(n, dtype=object)
    split[perm[:n_test]] = "test"
    split[perm[n_test:n_test + n_train]] = "train"
    split[perm[n_test + n_train:]] = "val"
    return list(split)


def materialize(etas, robot, hysteresis, M, noise_sigma, seed, out_dir, overwrite=False,
                test_count=DEFAULT_TEST_COUNT, val_fraction=DEFAULT_VAL_FRACTION,
                trajectories=None, recipe=None, n_raw=DEFAULT_RAW_POINTS,
                segments=DEFAULT_SEGMENTS):
    """Render one ground-truth cloud per configuration and write the dataset.

    ``trajectories`` optionally gives ``(traj, step)`` per configuration.
    Cloud ``i`` is seeded with ``seed + i``.
    """
    out = Path(out_dir)
    etas = list(etas)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise DataValidationError(f"{out} is not empty; pass overwrite to replace it")
        (out / MANIFEST_NAME).unlink(missing_ok=True)
        shutil.rmtree(out / "clouds", ignore_errors=True)
    clouds_dir = out / "clouds"
    try:
        clouds_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataValidationError(f"{clouds_dir}: {exc}") from exc

    splits = assign_splits(len(etas), seed, test_count, val_fraction)
    records = []
    for i, eta in enumerate(etas):
        traj, step = trajectories[i] if trajectories is not None else (None, None)
        records.append(DatasetRecord(i, eta, f"clouds/{i:06d}.ply", splits[i], traj, step))

    def render(rec):
        cloud = ground_truth_cloud(robot, hysteresis, rec.eta, M, noise_sigma, seed + rec.id,
                                   segments=segments, n_raw=n_raw)
        path = out / rec.cloud_path
        try:
            write_ply(path, cloud)
        except OSError as exc:
            raise DataValidationError(f"{path}: {exc}") from exc

    ordered_map(render, records)
    manifest = DatasetManifest(records, robot, hysteresis, M, seed, noise_sigma, n_raw, segments,
                               test_count, recipe, out)
    lines = [json.dumps(manifest.header())] + [json.dumps(r.to_json()) for r in records]
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", newline="\n")
    return manifest


def _parse_record(d, lineno):
    try:
        rid = int(d["id"])
        eta = HysteresisConfig(d["q_prior"], d["q_current"])
        path = str(d["cloud"])
        split = d["split"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestParseError(f"malformed record: {exc}", lineno) from exc
    if split not in SPLITS:
        raise ManifestParseError(f"unknown split label {split!r}", lineno)
    traj = d.get("traj")
    step = d.get("step")
    return DatasetRecord(rid, eta, path, split,
                         None if traj is None else int(traj), None if step is None else int(step))


def load_manifest(path, check_clouds=True):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataValidationError(f"{path}: {exc}") from exc
    if not lines:
        raise ManifestParseError("empty manifest", 1)
    parsed = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            parsed.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"invalid JSON: {exc.msg}", lineno) from exc
    (hline, header), body = parsed[0], parsed[1:]
    try:
        manifest = DatasetManifest(
            records=[_parse_record(d, n) for n, d in body],
            robot=RobotParams.from_dict(header["robot"]),
            hysteresis=HysteresisParams.from_dict(header["hysteresis"]),
            M=int(header["M"]), seed=int(header["seed"]),
            noise_sigma=float(header.get("noise_sigma", DEFAULT_NOISE)),
            n_raw=int(header.get("n_raw", DEFAULT_RAW_POINTS)),
            segments=int(header.get("segments", DEFAULT_SEGMENTS)),
            test_count=int(header.get("test_count", DEFAULT_TEST_COUNT)),
            recipe=header.get("recipe"), root=path.parent)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestParseError):
            raise
        raise ManifestParseError(f"malformed header: {exc}", hline) from exc
    validate_manifest(manifest, header, check_clouds)
    return manifest


def validate_manifest(manifest, header=None, check_clouds=True):
    ids = [r.id for r in manifest.records]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DataValidationError(f"record {dup}: duplicate id")
    if header is not None:
        if header.get("total", len(ids)) != len(ids):
            raise DataValidationError(f"header declares {header['total']} records, found {len(ids)}")
        if header.get("counts", manifest.counts) != manifest.counts:
            raise DataValidationError(f"split counts {manifest.counts} disagree with header {header['counts']}")
    expected = assign_splits(len(ids), 0, manifest.test_count)
    want = {s: expected.count(s) for s in SPLITS}
    if manifest.counts != want:
        raise DataValidationError(f"split sizes {manifest.counts} violate the split policy {want}")
    if manifest.recipe == "standard":
        home = defaultdict(int)
        other = defaultdict(int)
        for r in manifest.records:
            key = r.eta.q_current.tobytes()
            if np.any(r.eta.q_prior):
                other[key] += 1
            else:
                home[key] += 1
        for key in set(home) | set(other):
            if home[key] < 1 or other[key] < 2:
                bad = next(r.id for r in manifest.records if r.eta.q_current.tobytes() == key)
                raise DataValidationError(
                    f"record {bad}: configuration lacks one home-prior and two random-prior records")
    if check_clouds:
        for r in manifest.records:
            try:
                cloud = manifest.cloud(r)
            except (DataValidationError, InvalidInputError) as exc:
                raise DataValidationError(f"record {r.id}: {exc}") from exc
            if cloud.size != manifest.M:
                raise DataValidationError(f"record {r.id}: cloud has {cloud.size} points, expected {manifest.M}")
