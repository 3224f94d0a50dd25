"""Evaluation harness: metrics, model comparisons, ablations, and timing.

Models are callables mapping a list of dataset records to an ``(n, M, 3)``
array of predicted clouds, so trained decoders and the physics baseline are
evaluated by the same code.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import permutations
from pathlib import Path

import numpy as np

from .dataset import augment_random_prior, build_home_prior_set
from .errors import InvalidInputError
from .network import NetworkSpec
from .parallel import ordered_map
from .pointcloud import PointCloud, as_points, chamfer_distance, emd_exact, nn_spacing_cv
from .robot import (HysteresisParams, baseline_cloud, ground_truth_cloud, perturbed_params,
                    true_tip)
from .training import model_inputs, predict, train, train_no_hysteresis

# Baseline clouds draw from a seed stream disjoint from the ground-truth clouds.
BASELINE_SEED_OFFSET = 1_000_003
CSV_FIELDS = ("id", "model", "chamfer_m2", "tip_error_m")


def tip_error(pred, truth, true_tip_pos, k=16):
    """Distance from the true tip to the centroid of the predicted points that
    the exact EMD assignment pairs with the ``k`` truth points of largest arclen."""
    if not isinstance(truth, PointCloud) or truth.arclen is None:
        raise InvalidInputError("tip_error needs a truth cloud with arclen labels")
    x = as_points(pred)
    if x.shape[0] != truth.size:
        raise InvalidInputError(f"pred has {x.shape[0]} points, truth has {truth.size}")
    if not 1 <= k <= truth.size:
        raise InvalidInputError(f"k must lie in [1, {truth.size}]")
    # Always exact: the entropic solver's rounded plan can shift whole runs of
    # points along the shape, which moves the tip estimate.
    _, plan = emd_exact(x, truth.points, cap=truth.size)
    # plan.pairing[i] is the truth index matched with pred point i.
    owner = np.empty(truth.size, dtype=int)
    owner[plan.pairing] = np.arange(truth.size)
    tip_truth = np.argsort(-truth.arclen, kind="stable")[:k]
    estimate = x[owner[tip_truth]].mean(axis=0)
    return float(np.linalg.norm(estimate - np.asarray(true_tip_pos, dtype=float)))


@dataclass(frozen=True)
class MetricsRow:
    id: int
    model: str
    chamfer_m2: float
    tip_error_m: float
    traj: int | None = None
    step: int | None = None

    def __post_init__(self):
        if not (self.chamfer_m2 >= 0 and self.tip_error_m >= 0):
            raise InvalidInputError(f"record {self.id}: metrics must be nonnegative")


def write_metrics_csv(rows, path):
    with_traj = any(r.traj is not None for r in rows)
    header = CSV_FIELDS + (("traj", "step") if with_traj else ())
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for r in rows:
            line = [r.id, r.model, repr(r.chamfer_m2), repr(r.tip_error_m)]
            if with_traj:
                line += [r.traj, r.step]
            out.writerow(line)


def read_metrics_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            traj = d.get("traj")
            rows.append(MetricsRow(int(d["id"]), d["model"], float(d["chamfer_m2"]),
                                   float(d["tip_error_m"]),
                                   int(traj) if traj not in (None, "") else None,
                                   int(d["step"]) if traj not in (None, "") else None))
    return rows


@dataclass
class SummaryReport:
    models: dict
    ratios: dict
    runtime: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def mean(self, model, metric="chamfer"):
        return self.models[model][f"{metric}_mean"]

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def summarize(rows, runtime=None, extra=None):
    """Per-model mean and population std of each metric, plus the ratio of
    mean Chamfer for every ordered pair of models ("a/b" = mean_a / mean_b)."""
    by_model = {}
    for r in rows:
        by_model.setdefault(r.model, []).append(r)
    models = {}
    for name, rs in by_model.items():
        c = np.array([r.chamfer_m2 for r in rs])
        t = np.array([r.tip_error_m for r in rs])
        models[name] = {"n": len(rs), "chamfer_mean": float(c.mean()), "chamfer_std": float(c.std()),
                        "tip_error_mean": float(t.mean()), "tip_error_std": float(t.std())}
    ratios = {f"{a}/{b}": models[a]["chamfer_mean"] / models[b]["chamfer_mean"]
              for a, b in permutations(models, 2) if models[b]["chamfer_mean"] > 0}
    return SummaryReport(models, ratios, dict(runtime or {}), dict(extra or {}))


def network_model(w, tendon_count):
    def run(records):
        return predict(w, model_inputs(records, w.spec.input_dim, tendon_count))
    return run


def baseline_model(p_perturbed, M, seed, segments, n_raw):
    """Hysteresis-free comparator driven by each record's current configuration."""
    def run(records):
        clouds = ordered_map(
            lambda r: baseline_cloud(p_perturbed, r.eta.q_current, M, seed + BASELINE_SEED_OFFSET + r.id,
                                     segments, n_raw).points, records)
        return np.stack(clouds)
    return run


def evaluate_models(manifest, records, models, tip_k=None):
    """MetricsRows for every (model, record) in model-then-record order."""
    truths = [manifest.cloud(r) for r in records]
    k = tip_k if tip_k is not None else max(1, manifest.M // 32)
    tips = ordered_map(lambda r: true_tip(manifest.robot, manifest.hysteresis, r.eta, manifest.segments),
                       records)
    rows = []
    for name, model in models.items():
        pred = model(records)

        def score(i):
            return (chamfer_distance(pred[i], truths[i]), tip_error(pred[i], truths[i], tips[i], k))

        for r, (c, t) in zip(records, ordered_map(score, range(len(records)))):
            rows.append(MetricsRow(r.id, name, c, t, r.traj, r.step))
    return rows


def _emit(rows, summary, out_dir):
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(rows, out / "metrics.csv")
        summary.write(out / "summary.json")


def default_models(manifest, weights, eval_cfg=None, baseline_params=None):
    """Model dict for a comparison: ``weights`` maps tags to NetworkWeights;
    the baseline uses ``baseline_params`` or the default perturbation."""
    gain = 0.85 if eval_cfg is None else eval_cfg.baseline_gain
    scale = 1.10 if eval_cfg is None else eval_cfg.baseline_offset_scale
    pb = baseline_params or perturbed_params(manifest.robot, gain, scale)
    models = {"baseline": baseline_model(pb, manifest.M, manifest.seed, manifest.segments, manifest.n_raw)}
    for tag, w in weights.items():
        models[tag] = network_model(w, manifest.robot.tendon_count)
    return models


def run_comparison(manifest, models, out_dir=None, tip_k=None):
    """Score every model on the test split; optionally write metrics.csv and summary.json."""
    records = manifest.split("test")
    if not records:
        raise InvalidInputError("dataset has no test records")
    start = time.perf_counter()
    rows = evaluate_models(manifest, records, models, tip_k)
    summary = summarize(rows, {"eval_seconds": time.perf_counter() - start})
    _emit(rows, summary, out_dir)
    return rows, summary


def check_chaining(records):
    """Group trajectory records and verify each step's prior is the previous current."""
    groups = {}
    for r in records:
        if r.traj is None or r.step is None:
            raise InvalidInputError(f"record {r.id} carries no trajectory tag")
        groups.setdefault(r.traj, []).append(r)
    for traj, steps in groups.items():
        steps.sort(key=lambda r: r.step)
        for a, b in zip(steps, steps[1:]):
            if b.step != a.step + 1 or not np.array_equal(b.eta.q_prior, a.eta.q_current):
                raise InvalidInputError(f"trajectory {traj}: record {b.id} does not continue record {a.id}")
    return groups


def run_trajectory_eval(manifest, models, out_dir=None, tip_k=None):
    """Score models on every step of every trajectory in ``manifest``."""
    groups = check_chaining(manifest.records)
    records = [r for traj in sorted(groups) for r in groups[traj]]
    rows = evaluate_models(manifest, records, models, tip_k)
    per_traj = {}
    for r in rows:
        per_traj.setdefault(r.model, {}).setdefault(str(r.traj), []).append(r.chamfer_m2)
    extra = {"per_trajectory_chamfer_mean": {m: {t: float(np.mean(v)) for t, v in d.items()}
                                             for m, d in per_traj.items()}}
    summary = summarize(rows, extra=extra)
    _emit(rows, summary, out_dir)
    return rows, summary


def quantify_hysteresis(p, h, nominal, M, seed, noise_sigma=0.0, n_raw=4096, segments=256):
    """Home-prior vs random-prior difference for each nominal configuration.

    Both clouds of a pair share the seed ``seed + i``, so with no deadband
    they coincide exactly.
    """
    homes = build_home_prior_set(nominal)
    others = augment_random_prior(nominal, 1, seed)

    def measure(i):
        a = ground_truth_cloud(p, h, homes[i], M, noise_sigma, seed + i, segments, n_raw)
        b = ground_truth_cloud(p, h, others[i], M, noise_sigma, seed + i, segments, n_raw)
        sep = np.linalg.norm(true_tip(p, h, homes[i], segments) - true_tip(p, h, others[i], segments))
        return chamfer_distance(a, b), sep

    res = np.array(ordered_map(measure, range(len(nominal))))
    chamfer, sep = res[:, 0], res[:, 1]
    pct = 100.0 * sep / p.backbone_length
    return {"n": len(nominal), "deadband": h.deadband,
            "chamfer_mean": float(chamfer.mean()), "chamfer_std": float(chamfer.std()),
            "tip_separation_mean": float(sep.mean()), "tip_separation_std": float(sep.std()),
            "tip_separation_pct_mean": float(pct.mean()), "tip_separation_pct_std": float(pct.std())}


def hysteresis_sweep(p, nominal, M, seed, deadbands=(0.0, 0.0008, 0.0016, 0.0032), **kw):
    return [quantify_hysteresis(p, HysteresisParams(deadband=d), nominal, M, seed, **kw)
            for d in deadbands]


def train_pair(manifest, hidden_dims, cfg, log=None):
    """Full model and non-hysteresis ablation trained with the same settings."""
    tendons = manifest[0].robot.tendon_count if isinstance(manifest, (list, tuple)) else manifest.robot.tendon_count
    M = manifest[0].M if isinstance(manifest, (list, tuple)) else manifest.M
    hys = train(NetworkSpec(2 * tendons, hidden_dims, M), manifest, cfg, log=log)
    non = train_no_hysteresis(NetworkSpec(tendons, hidden_dims, M), manifest, cfg, log=log)
    return {"hys": hys, "non-hys": non}


def uniformity_scores(w, manifest, records=None):
    records = manifest.split("test") if records is None else records
    pred = predict(w, model_inputs(records, w.spec.input_dim, manifest.robot.tendon_count))
    return np.array([nn_spacing_cv(p) for p in pred])


def run_loss_ablation(manifest, spec, cfg, trained=None, out_dir=None, log=None):
    """Train one decoder per loss and compare test Chamfer and uniformity.

    ``trained`` may supply already-trained weights keyed by loss name.
    """
    trained = dict(trained or {})
    weights = {}
    runtime = {}
    for loss in ("mse", "chamfer", "chamfer-emd"):
        if loss in trained:
            weights[loss] = trained[loss]
            continue
        start = time.perf_counter()
        weights[loss], _ = train(spec, manifest, replace(cfg, loss=loss), log=log)
        runtime[f"train_{loss}_seconds"] = time.perf_counter() - start
    records = manifest.split("test")
    rows = evaluate_models(manifest, records,
                           {loss: network_model(w, manifest.robot.tendon_count) for loss, w in weights.items()})
    uniformity = {loss: uniformity_scores(w, manifest, records).tolist() for loss, w in weights.items()}
    extra = {"uniformity": {loss: {"mean": float(np.mean(u)), "per_record": u}
                            for loss, u in uniformity.items()}}
    summary = summarize(rows, runtime, extra)
    _emit(rows, summary, out_dir)
    return summary, weights


def bench_timing(w, p_perturbed, q_batch, n_runs=100, segments=256, n_raw=4096, seed=0):
    """Per-shape wall-clock of decoder inference vs baseline generation.

    Each run times one inference on a single configuration and one baseline
    cloud for the same configuration, cycling through ``q_batch``.
    """
    if n_runs < 1:
        raise InvalidInputError("n_runs must be positive")
    q_batch = np.atleast_2d(np.asarray(q_batch, dtype=float))
    tendons = q_batch.shape[1]

    def net_input(q):
        return np.concatenate([np.zeros(tendons), q]) if w.spec.input_dim == 2 * tendons else q

    M = w.spec.M
    predict(w, net_input(q_batch[0]))
    baseline_cloud(p_perturbed, q_batch[0], M, seed, segments, n_raw)
    rows = []
    for i in range(n_runs):
        q = q_batch[i % len(q_batch)]
        x = net_input(q)
        t0 = time.perf_counter()
        predict(w, x)
        t1 = time.perf_counter()
        baseline_cloud(p_perturbed, q, M, seed + i, segments, n_raw)
        t2 = time.perf_counter()
        rows.append({"run": i, "network_s": t1 - t0, "baseline_s": t2 - t1})
    net = np.array([r["network_s"] for r in rows])
    base = np.array([r["baseline_s"] for r in rows])
    return {"n_runs": n_runs, "M": M, "segments": segments, "rows": rows,
            "network_mean_s": float(net.mean()), "network_std_s": float(net.std()),
            "baseline_mean_s": float(base.mean()), "baseline_std_s": float(base.std()),
            "speedup": float(base.mean() / net.mean())}


def chamfer_by_model(summary):
    return {m: v["chamfer_mean"] for m, v in summary.models.items()}

