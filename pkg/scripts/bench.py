"""Per-shape wall-clock of decoder inference vs baseline cloud generation."""

import numpy as np

from _common import dump, parser
from tdcr.dataset import generate_nominal_grid
from tdcr.experiments import bench_timing
from tdcr.network import NetworkSpec, init_xavier
from tdcr.robot import RobotParams, perturbed_params


def main():
    p = parser(__doc__)
    p.add_argument("--runs", type=int, default=100)
    args = p.parse_args()
    robot = RobotParams()
    w = init_xavier(NetworkSpec(2 * robot.tendon_count, (128, 256, 512, 1024), 512), 0).eval()
    qs = np.stack(generate_nominal_grid(robot, 6)[::5])
    rep = bench_timing(w, perturbed_params(robot), qs, n_runs=args.runs)
    print(f"network {rep['network_mean_s'] * 1e3:.3f} +/- {rep['network_std_s'] * 1e3:.3f} ms, "
          f"baseline {rep['baseline_mean_s'] * 1e3:.2f} +/- {rep['baseline_std_s'] * 1e3:.2f} ms, "
          f"speedup {rep['speedup']:.0f}x")
    dump(rep, args.out / "bench.json")


if __name__ == "__main__":
    main()
