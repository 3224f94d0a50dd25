"""Train the full model and the non-hysteresis ablation on the standard
dataset with the same step budget, then compare both with the baseline."""

from _common import config, dump, parser, standard_dataset
from tdcr.experiments import default_models, run_comparison, train_pair
from tdcr.network import save_weights


def main():
    args = parser(__doc__).parse_args()
    cfg = config(args)
    man = standard_dataset(cfg, args.out)
    pair = train_pair(man, cfg.network.hidden_dims, cfg.training,
                      log=lambda e, r: print(f"epoch {e}: val {r.val_loss[-1]:.5f}", flush=True) if e % 25 == 0 else None)
    for tag, (w, rep) in pair.items():
        save_weights(w, args.out / f"{tag}.bin")
        dump(rep.to_dict(), args.out / f"{tag}_report.json")
    models = default_models(man, {tag: w for tag, (w, _) in pair.items()}, cfg.eval)
    _, summary = run_comparison(man, models, out_dir=args.out / "comparison", tip_k=cfg.eval.tip_points(man.M))
    for model, stats in summary.models.items():
        print(f"{model:9s} Chamfer {stats['chamfer_mean']:.5f} +/- {stats['chamfer_std']:.5f}  "
              f"tip {stats['tip_error_mean'] * 1e3:.1f} mm")
    print(f"non-hys/hys {summary.ratios['non-hys/hys']:.2f}, baseline/hys {summary.ratios['baseline/hys']:.2f}")


if __name__ == "__main__":
    main()
