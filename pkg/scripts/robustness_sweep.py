#!/usr/bin/env python3
"""Input-size robustness sweep: feed the trained model clouds randomly
downsampled to various sizes and zero-padded back (padding labeled part 0),
then measure reconstruction CD against the original full cloud."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from partae.data import chair_spec, resample, split_dataset, synth_dataset
from partae.distances import chamfer
from partae.model import LpmModel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[256, 128, 64, 32])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = LpmModel.load(args.checkpoint)
    n = model.config.points
    full = synth_dataset(chair_spec(points=n, seed=args.seed), 640)
    _, _, test_ds = split_dataset(full, (0.8, 0.0, 0.2), seed=args.seed)
    clouds = test_ds.samples[:args.samples]

    print(f"{'input size':>10}  {'mean CD':>10}")
    for size in args.sizes:
        total = 0.0
        for cloud in clouds:
            sub = resample(cloud, size, seed=1) if size < cloud.n else cloud
            padded = resample(sub, n, seed=1)
            decoded, _ = model.reconstruct(padded, "given")
            total += chamfer(decoded, cloud.real_points())
        print(f"{size:>10}  {total / len(clouds):>10.4f}")


if __name__ == "__main__":
    main()
