"""Validation MSE after training with SV+DID+FVF inputs vs SDF-only inputs, over several init seeds."""

import argparse
import time

from fvfgraph.experiments import ExperimentSettings, feature_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--lr", type=float, default=0.03)
    args = ap.parse_args()
    t0 = time.perf_counter()
    runs = feature_benefit(range(args.seeds), ExperimentSettings(epochs=args.epochs, lr=args.lr))
    print("seed  sdf_val   geo_val   geo_wins")
    for r in runs:
        print(f"{r.seed:4d}  {r.sdf_val:.5f}  {r.geo_val:.5f}  {r.geo_wins}")
    wins = sum(r.geo_wins for r in runs)
    print(f"geo wins {wins}/{len(runs)} seeds in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
