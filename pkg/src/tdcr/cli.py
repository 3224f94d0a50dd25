"""Command-line entry point: ``tdcr <command> [options]``.

Exit status is 0 on success, 1 for usage errors, and 2 when input data or
configuration fail validation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .dataset import (generate_nominal_grid, generate_trajectories, load_manifest, materialize,
                      standard_recipe)
from .errors import TDCRError
from .experiments import (bench_timing, default_models, quantify_hysteresis, run_comparison,
                          run_trajectory_eval)
from .network import NetworkSpec, load_weights, save_weights
from .robot import RobotParams, calibrate_baseline, perturbed_params
from .training import train, train_no_hysteresis


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _global_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--out", type=Path, help="output directory")
    return common


def build_parser():
    common = _global_flags()
    parser = _Parser(prog="tdcr", description="Hysteresis-aware shape prediction for tendon-driven continuum robots.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", parents=[common], help="generate a dataset")
    gen.add_argument("--kind", choices=("standard", "traj-train", "traj-test"), default="standard",
                     help="standard recipe, training trajectories, or held-out trajectories")
    gen.add_argument("--overwrite", action="store_true")

    tr = sub.add_parser("train", parents=[common], help="train a decoder")
    tr.add_argument("--data", type=Path, action="append", required=True,
                    help="dataset directory; repeat to pool several")
    tr.add_argument("--loss", choices=("mse", "chamfer", "chamfer-emd"))
    tr.add_argument("--no-hysteresis", action="store_true", help="feed only the current configuration")

    ev = sub.add_parser("eval", parents=[common], help="compare models on the test split")
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--weights", type=Path, action="append", default=[], metavar="TAG=PATH",
                    help="trained decoder to score; repeatable")
    ev.add_argument("--baseline-params", type=Path, help="calibrated robot parameters JSON")

    tj = sub.add_parser("traj", parents=[common], help="evaluate models along trajectories")
    tj.add_argument("--data", type=Path, required=True)
    tj.add_argument("--weights", type=Path, action="append", default=[], metavar="TAG=PATH")
    tj.add_argument("--baseline-params", type=Path)

    sub.add_parser("quantify", parents=[common], help="measure home vs random prior differences")

    cb = sub.add_parser("calibrate-baseline", parents=[common], help="fit the baseline by pattern search")
    cb.add_argument("--data", type=Path, required=True)

    bn = sub.add_parser("bench", parents=[common], help="time inference against baseline generation")
    bn.add_argument("--weights", type=Path, required=True)
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _seed(args, cfg):
    return args.seed if args.seed is not None else cfg.training.seed


def _out(args, default):
    out = args.out if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _weights(items):
    out = {}
    for item in items:
        tag, sep, path = str(item).partition("=")
        if not sep:
            tag, path = Path(item).stem, str(item)
        out[tag] = load_weights(path)
    return out


def _baseline_params(path):
    if path is None:
        return None
    return RobotParams.from_dict(json.loads(Path(path).read_text()))


def cmd_gen(args, cfg):
    ds = cfg.dataset
    seed = _seed(args, cfg)
    out = args.out if args.out is not None else Path("data")
    common = dict(robot=cfg.robot, hysteresis=cfg.hysteresis, M=ds.M, noise_sigma=ds.noise_sigma,
                  seed=seed, out_dir=out, overwrite=args.overwrite, val_fraction=ds.val_fraction,
                  n_raw=ds.n_raw, segments=ds.segments)
    nominal = generate_nominal_grid(cfg.robot, ds.levels)
    if args.kind == "standard":
        man = materialize(standard_recipe(cfg.robot, ds.levels, ds.copies, seed),
                          test_count=ds.test_count, recipe="standard", **common)
    else:
        n = ds.n_traj if args.kind == "traj-train" else ds.n_test_traj
        # Held-out trajectories come from a separate seed stream.
        trajs = generate_trajectories(nominal, n, ds.traj_len, seed if args.kind == "traj-train" else seed + 1)
        etas = [e for t in trajs for e in t]
        tags = [(i, k + 1) for i, t in enumerate(trajs) for k in range(len(t))]
        test_count = 0 if args.kind == "traj-train" else len(etas)
        man = materialize(etas, trajectories=tags, test_count=test_count, recipe=args.kind, **common)
    print(json.dumps({"out": str(out), "counts": man.counts}))
    return 0


def cmd_train(args, cfg):
    manifests = [load_manifest(d) for d in args.data]
    tcfg = cfg.training if args.loss is None else replace(cfg.training, loss=args.loss)
    M = cfg.dataset.M
    tendons = manifests[0].robot.tendon_count
    out = _out(args, "model")
    if args.no_hysteresis:
        w, report = train_no_hysteresis(NetworkSpec(tendons, cfg.network.hidden_dims, M), manifests, tcfg)
    else:
        w, report = train(NetworkSpec(2 * tendons, cfg.network.hidden_dims, M), manifests, tcfg)
    save_weights(w, out / "weights.bin")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(json.dumps({"weights": str(out / "weights.bin"), "best_epoch": report.best_epoch,
                      "best_val_loss": report.best_val_loss}))
    return 0


def _compare(args, cfg, runner):
    man = load_manifest(args.data)
    models = default_models(man, _weights(args.weights), cfg.eval, _baseline_params(args.baseline_params))
    out = _out(args, "results")
    _, summary = runner(man, models, out_dir=out, tip_k=cfg.eval.tip_points(man.M))
    print(json.dumps({m: v["chamfer_mean"] for m, v in summary.models.items()}))
    return 0


def cmd_eval(args, cfg):
    return _compare(args, cfg, run_comparison)


def cmd_traj(args, cfg):
    return _compare(args, cfg, run_trajectory_eval)


def cmd_quantify(args, cfg):
    ds = cfg.dataset
    nominal = generate_nominal_grid(cfg.robot, ds.levels)
    report = quantify_hysteresis(cfg.robot, cfg.hysteresis, nominal, ds.M, _seed(args, cfg),
                                 noise_sigma=0.0, n_raw=ds.n_raw, segments=ds.segments)
    out = _out(args, "results")
    (out / "quantify.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return 0


def cmd_calibrate(args, cfg):
    man = load_manifest(args.data)
    records = man.split("train")[:cfg.eval.calibration_pairs]
    pairs = [(r.eta.q_current, man.cloud(r)) for r in records]
    start = perturbed_params(man.robot, cfg.eval.baseline_gain, cfg.eval.baseline_offset_scale)
    best, result = calibrate_baseline(start, pairs, cfg.eval.calibration_evals, seed_base=man.seed,
                                      n_raw=man.n_raw, segments=man.segments, return_result=True)
    out = _out(args, "results")
    (out / "baseline_params.json").write_text(json.dumps(best.to_dict(), indent=2) + "\n")
    print(json.dumps({"objective": result.fun, "evals": result.evals,
                      "curvature_gain": best.curvature_gain,
                      "tendon_radial_offset": best.tendon_radial_offset,
                      "helical_phase": best.helical_phase}))
    return 0


def cmd_bench(args, cfg):
    w = load_weights(args.weights)
    nominal = generate_nominal_grid(cfg.robot, cfg.dataset.levels)
    rng = np.random.default_rng(_seed(args, cfg))
    qs = np.stack([nominal[i] for i in rng.choice(len(nominal), size=min(len(nominal), 20), replace=False)])
    pb = perturbed_params(cfg.robot, cfg.eval.baseline_gain, cfg.eval.baseline_offset_scale)
    report = bench_timing(w, pb, qs, cfg.eval.bench_runs, cfg.dataset.segments, cfg.dataset.n_raw)
    out = _out(args, "results")
    (out / "bench.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps({k: v for k, v in report.items() if k != "rows"}))
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "traj": cmd_traj,
            "quantify": cmd_quantify, "calibrate-baseline": cmd_calibrate, "bench": cmd_bench}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, _config(args))
    except (TDCRError, OSError, json.JSONDecodeError) as exc:
        print(f"tdcr {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
