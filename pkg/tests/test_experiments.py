import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SMALL_RENDER
from tdcr.dataset import generate_nominal_grid, generate_trajectories, materialize
from tdcr.errors import InvalidInputError
from tdcr.experiments import (CSV_FIELDS, MetricsRow, bench_timing, check_chaining, default_models,
                              hysteresis_sweep, quantify_hysteresis, read_metrics_csv,
                              run_comparison, run_loss_ablation, run_trajectory_eval, summarize,
                              tip_error, write_metrics_csv)
from tdcr.pointcloud import PointCloud, emd_approx, emd_exact
from tdcr.robot import (HysteresisConfig, HysteresisParams, RobotParams, ground_truth_cloud,
                        perturbed_params, true_tip)

P = RobotParams()
H = HysteresisParams()


def noiseless(eta, M=512, seed=0):
    return ground_truth_cloud(P, H, eta, M, 0.0, seed, segments=64)


CONFIGS = [np.array([0.02, 0, 0, 0]), np.array([0.01, 0.015, 0, 0]), np.array([0, 0, 0, 0.02]),
           np.array([0, 0.005, 0.0, 0])]


@pytest.fixture(scope="module", params=range(len(CONFIGS)))
def labelled(request):
    eta = HysteresisConfig(np.zeros(4), CONFIGS[request.param])
    return noiseless(eta), true_tip(P, H, eta, 64)


def test_tip_error_floor_on_truth(labelled):
    truth, tip = labelled
    assert tip_error(truth, truth, tip) <= 0.012


def test_tip_error_translation_probe(labelled):
    truth, tip = labelled
    floor = tip_error(truth, truth, tip)
    moved = truth.points + np.array([0.05, 0.0, 0.0])
    assert abs(tip_error(moved, truth, tip) - 0.05) <= floor + 1e-12


def test_tip_error_all_points_gives_centroid():
    truth = noiseless(HysteresisConfig(np.zeros(4), CONFIGS[1]), M=32)
    pred = np.random.default_rng(0).normal(size=(32, 3))
    target = np.array([0.1, -0.2, 0.3])
    expected = np.linalg.norm(pred.mean(axis=0) - target)
    assert tip_error(pred, truth, target, k=32) == pytest.approx(expected, rel=1e-12)


def test_tip_error_rejects_bad_input():
    truth = noiseless(HysteresisConfig(np.zeros(4), CONFIGS[0]), M=16)
    with pytest.raises(InvalidInputError, match="arclen"):
        tip_error(truth.points, PointCloud(truth.points), np.zeros(3))
    with pytest.raises(InvalidInputError):
        tip_error(truth.points[:8], truth, np.zeros(3))
    with pytest.raises(InvalidInputError):
        tip_error(truth.points, truth, np.zeros(3), k=17)


def test_metrics_row_validation():
    with pytest.raises(InvalidInputError):
        MetricsRow(0, "hys", -1e-9, 0.0)
    with pytest.raises(InvalidInputError):
        MetricsRow(0, "hys", float("nan"), 0.0)


rows_strategy = st.lists(
    st.tuples(st.sampled_from(["hys", "non-hys", "baseline"]),
              st.floats(1e-8, 1.0), st.floats(0.0, 0.5)),
    min_size=1, max_size=40)


@settings(max_examples=30, deadline=None)
@given(rows_strategy)
def test_summary_recomputable_from_csv(tmp_path_factory, raw):
    rows = [MetricsRow(i, m, c, t) for i, (m, c, t) in enumerate(raw)]
    path = tmp_path_factory.mktemp("csv") / "metrics.csv"
    write_metrics_csv(rows, path)
    back = read_metrics_csv(path)
    assert back == rows
    summary = summarize(rows)
    with open(path, newline="") as fh:
        table = list(csv.DictReader(fh))
    for model, stats in summary.models.items():
        c = np.array([float(r["chamfer_m2"]) for r in table if r["model"] == model])
        t = np.array([float(r["tip_error_m"]) for r in table if r["model"] == model])
        assert stats["n"] == len(c)
        assert abs(stats["chamfer_mean"] - c.mean()) <= 1e-12
        assert abs(stats["chamfer_std"] - c.std()) <= 1e-12
        assert abs(stats["tip_error_mean"] - t.mean()) <= 1e-12
        assert abs(stats["tip_error_std"] - t.std()) <= 1e-12
    for key, ratio in summary.ratios.items():
        a, b = key.split("/")
        assert ratio == summary.mean(a) / summary.mean(b)


def test_csv_layout(tmp_path):
    rows = [MetricsRow(3, "hys", 0.25, 0.5, traj=1, step=2)]
    write_metrics_csv(rows, tmp_path / "m.csv")
    blob = (tmp_path / "m.csv").read_bytes()
    assert blob == b"id,model,chamfer_m2,tip_error_m,traj,step\n3,hys,0.25,0.5,1,2\n"
    assert read_metrics_csv(tmp_path / "m.csv") == rows


def test_quantify_without_deadband_is_zero():
    nominal = generate_nominal_grid(P, 3)
    rep = quantify_hysteresis(P, HysteresisParams(deadband=0.0), nominal, 16, 0, n_raw=512, segments=32)
    assert rep["n"] == len(nominal)
    assert rep["tip_separation_mean"] == 0.0
    assert rep["chamfer_mean"] == 0.0


def test_quantify_monotone_in_deadband():
    nominal = generate_nominal_grid(P, 3)
    reps = hysteresis_sweep(P, nominal, 16, 0, n_raw=512, segments=32)
    seps = [r["tip_separation_mean"] for r in reps]
    assert seps[0] == 0.0
    assert all(a < b for a, b in zip(seps, seps[1:]))
    assert all(r["tip_separation_pct_mean"] == pytest.approx(100 * r["tip_separation_mean"] / 0.2)
               for r in reps)


def test_emd_approx_close_to_exact_on_simulator_clouds():
    for seed, q in enumerate(CONFIGS):
        a = noiseless(HysteresisConfig(np.zeros(4), q), M=64, seed=seed)
        b = ground_truth_cloud(P, H, HysteresisConfig(CONFIGS[(seed + 1) % 4], q), 64, 0.0005, seed + 7, 64)
        exact, _ = emd_exact(a, b)
        approx, _ = emd_approx(a, b)
        assert exact <= approx <= 1.05 * exact


@pytest.fixture(scope="module")
def trajectories(tmp_path_factory):
    nominal = generate_nominal_grid(P, 4)
    trajs = generate_trajectories(nominal, 6, 5, 3)
    etas = [e for t in trajs for e in t]
    tags = [(i, k + 1) for i, t in enumerate(trajs) for k in range(5)]
    return materialize(etas, robot=P, hysteresis=H, M=16, seed=3, out_dir=tmp_path_factory.mktemp("traj"),
                       test_count=len(etas), trajectories=tags, recipe="traj-test", **SMALL_RENDER)


def zero_model(records):
    return np.zeros((len(records), 16, 3))


def test_trajectory_eval_rows(trajectories, tmp_path):
    models = default_models(trajectories, {})
    models["zero"] = zero_model
    rows, summary = run_trajectory_eval(trajectories, models, out_dir=tmp_path)
    for name in ("baseline", "zero"):
        mine = [r for r in rows if r.model == name]
        assert len(mine) == 30
        assert sorted({r.step for r in mine}) == [1, 2, 3, 4, 5]
        assert len({r.traj for r in mine}) == 6
    per_traj = summary.extra["per_trajectory_chamfer_mean"]["zero"]
    assert len(per_traj) == 6
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_FIELDS + ("traj", "step"))
    assert summary.mean("zero") > summary.mean("baseline")


def test_broken_chaining_rejected(trajectories):
    recs = list(trajectories.records)
    check_chaining(recs)
    broken = [r for r in recs if not (r.traj == 2 and r.step == 3)]
    with pytest.raises(InvalidInputError, match="trajectory 2"):
        check_chaining(broken)
    from dataclasses import replace
    swapped = recs[:]
    swapped[7] = replace(recs[7], eta=HysteresisConfig(recs[7].eta.q_current, recs[7].eta.q_current))
    with pytest.raises(InvalidInputError):
        check_chaining(swapped)


def test_comparison_on_deadband_free_data(delta0_manifest, delta0_pair, tmp_path):
    weights = {tag: w for tag, (w, _) in delta0_pair.items()}
    rows, summary = run_comparison(delta0_manifest, default_models(delta0_manifest, weights), out_dir=tmp_path)
    assert len(rows) == 3 * 30
    assert 0.8 <= summary.ratios["non-hys/hys"] <= 1.25, summary.ratios
    assert summary.mean("baseline") > max(summary.mean("hys"), summary.mean("non-hys"))
    assert (tmp_path / "metrics.csv").read_text().startswith("id,model,chamfer_m2,tip_error_m\n")
    assert (tmp_path / "summary.json").exists()


def test_comparison_is_deterministic(delta0_manifest, delta0_pair):
    weights = {"hys": delta0_pair["hys"][0]}
    a, _ = run_comparison(delta0_manifest, default_models(delta0_manifest, weights))
    b, _ = run_comparison(delta0_manifest, default_models(delta0_manifest, weights))
    assert a == b


def test_loss_ablation_report(delta0_manifest, delta0_pair):
    w = delta0_pair["hys"][0]
    summary, weights = run_loss_ablation(delta0_manifest, w.spec, None,
                                         trained={"mse": w, "chamfer": w, "chamfer-emd": w})
    assert set(weights) == {"mse", "chamfer", "chamfer-emd"}
    assert summary.mean("mse") == summary.mean("chamfer-emd")
    uni = summary.extra["uniformity"]
    assert len(uni["chamfer"]["per_record"]) == 30
    assert uni["chamfer"]["mean"] == pytest.approx(np.mean(uni["chamfer"]["per_record"]))


def test_bench_timing(delta0_pair):
    w = delta0_pair["hys"][0]
    qs = np.stack(CONFIGS)
    rep = bench_timing(w, perturbed_params(P), qs, n_runs=100, segments=256, n_raw=4096)
    assert len(rep["rows"]) == 100
    assert rep["speedup"] > 1
    base = np.array([r["baseline_s"] for r in rep["rows"]])
    assert base.std() / base.mean() < 0.5
    with pytest.raises(InvalidInputError):
        bench_timing(w, perturbed_params(P), qs, n_runs=0)
