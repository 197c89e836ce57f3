"""Mean target accuracy of several ablation modes over a few seeds.

    python3 demos/ablation_sweep.py --modes full,hf_only,single_gcn,adj_fixed --seeds 1,2,3
"""
import argparse

import numpy as np

from agra.experiments import benchmark_run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--modes", default="full,hf_only,single_gcn,adj_fixed")
    parser.add_argument("--seeds", default="1,2,3,4,5")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    print(f"{'mode':12s} {'stage1':>7s} {'final':>7s} {'d_acc':>7s}")
    for mode in args.modes.split(","):
        runs = [benchmark_run(mode, seed) for seed in seeds]
        s1 = np.mean([r.stage1_tgt_acc for r in runs])
        tgt = np.mean([r.tgt_acc for r in runs])
        d = np.mean([r.d_acc for r in runs])
        print(f"{mode:12s} {s1:7.3f} {tgt:7.3f} {d:7.3f}", flush=True)


if __name__ == "__main__":
    main()
