"""Augment training with chained trajectories and evaluate on held-out ones."""

from _common import config, parser, standard_dataset
from tdcr.dataset import generate_nominal_grid, generate_trajectories, materialize
from tdcr.experiments import default_models, run_trajectory_eval, train_pair


def trajectory_dataset(cfg, n, seed, out, held_out):
    nominal = generate_nominal_grid(cfg.robot, cfg.dataset.levels)
    trajs = generate_trajectories(nominal, n, cfg.dataset.traj_len, seed)
    etas = [e for t in trajs for e in t]
    tags = [(i, k + 1) for i, t in enumerate(trajs) for k in range(len(t))]
    ds = cfg.dataset
    return materialize(etas, robot=cfg.robot, hysteresis=cfg.hysteresis, M=ds.M, noise_sigma=ds.noise_sigma,
                       seed=cfg.training.seed, out_dir=out, overwrite=True,
                       test_count=len(etas) if held_out else 0, val_fraction=ds.val_fraction,
                       trajectories=tags, recipe="traj-test" if held_out else "traj-train",
                       n_raw=ds.n_raw, segments=ds.segments)


def main():
    args = parser(__doc__).parse_args()
    cfg = config(args)
    seed = cfg.training.seed
    man = standard_dataset(cfg, args.out)
    aug = trajectory_dataset(cfg, cfg.dataset.n_traj, seed, args.out / "traj-train", False)
    held = trajectory_dataset(cfg, cfg.dataset.n_test_traj, seed + 1, args.out / "traj-test", True)
    pair = train_pair([man, aug], cfg.network.hidden_dims, cfg.training)
    models = default_models(held, {tag: w for tag, (w, _) in pair.items()}, cfg.eval)
    _, summary = run_trajectory_eval(held, models, out_dir=args.out / "trajectories",
                                     tip_k=cfg.eval.tip_points(held.M))
    for model, stats in summary.models.items():
        print(f"{model:9s} Chamfer {stats['chamfer_mean']:.5f} +/- {stats['chamfer_std']:.5f}")


if __name__ == "__main__":
    main()
