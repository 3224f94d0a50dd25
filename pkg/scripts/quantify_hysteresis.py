"""Home-prior vs random-prior shape differences, swept over the deadband."""

from _common import config, dump, parser
from tdcr.dataset import generate_nominal_grid
from tdcr.experiments import hysteresis_sweep


def main():
    args = parser(__doc__).parse_args()
    cfg = config(args)
    nominal = generate_nominal_grid(cfg.robot, cfg.dataset.levels)
    reports = hysteresis_sweep(cfg.robot, nominal, cfg.dataset.M, cfg.training.seed,
                               n_raw=cfg.dataset.n_raw, segments=cfg.dataset.segments)
    for r in reports:
        print(f"deadband {r['deadband']:.4f} m: tip separation {r['tip_separation_pct_mean']:.2f} "
              f"+/- {r['tip_separation_pct_std']:.2f} % of length, Chamfer {r['chamfer_mean']:.2e}")
    dump(reports, args.out / "quantify_sweep.json")


if __name__ == "__main__":
    main()
