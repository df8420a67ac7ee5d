#!/usr/bin/env python3
"""Max- vs mean-pooling ablation: identical data, config and seed, pooling
flipped. Reports the final train reconstruction loss of each variant."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from partae.data import chair_spec, synth_dataset
from partae.model import LpmModel, ModelConfig, TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=512)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = synth_dataset(chair_spec(points=256, seed=args.seed), args.samples)
    finals = {}
    for pooling in ("max", "mean"):
        model = LpmModel(ModelConfig(pooling=pooling), seed=args.seed)
        hist = train(model, ds, TrainConfig(epochs=args.epochs, seed=args.seed))
        finals[pooling] = hist.recon[-1]
        print(f"{pooling:>5} pooling: epoch-1 {hist.recon[0]:.3f} -> "
              f"final {hist.recon[-1]:.4f}")
    print(f"mean >= max: {finals['mean'] >= finals['max']}")


if __name__ == "__main__":
    main()
