"""Epochs the residual scheme needs to match the direct scheme's final validation MSE."""

import argparse
import time

from fvfgraph.experiments import ExperimentSettings, residual_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--lr", type=float, default=0.03)
    args = ap.parse_args()
    t0 = time.perf_counter()
    runs = residual_benefit(range(args.seeds), ExperimentSettings(epochs=args.epochs, lr=args.lr))
    print("seed  direct_final  residual_epoch  fraction")
    for r in runs:
        print(f"{r.seed:4d}  {r.direct_final:.5f}       {r.residual_epoch}  {r.fraction:.3f}")
    wins = sum(r.residual_wins() for r in runs)
    print(f"residual within 60% of epochs in {wins}/{len(runs)} seeds, {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
