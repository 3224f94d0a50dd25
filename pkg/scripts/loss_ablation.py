"""Train one decoder per loss (MSE, Chamfer, Chamfer + EMD) and compare
test Chamfer and point uniformity."""

from _common import config, parser, standard_dataset
from tdcr.experiments import run_loss_ablation
from tdcr.network import NetworkSpec


def main():
    args = parser(__doc__).parse_args()
    cfg = config(args)
    man = standard_dataset(cfg, args.out)
    spec = NetworkSpec(2 * man.robot.tendon_count, cfg.network.hidden_dims, man.M)
    summary, _ = run_loss_ablation(man, spec, cfg.training, out_dir=args.out / "ablation")
    for loss, stats in summary.models.items():
        print(f"{loss:12s} Chamfer {stats['chamfer_mean']:.5f}  "
              f"uniformity {summary.extra['uniformity'][loss]['mean']:.3f}")


if __name__ == "__main__":
    main()
