"""Holdout accuracy of the full pipeline against the plain margin softmax.

Sweeps noise ratios and seeds; prints one row per (ratio, seed) and the
mean gap per ratio.

    python3 scripts/compare_baseline.py --ratios 0 0.2 0.4 --seeds 0 1 2
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from repface import experiments as xp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.0, 0.2, 0.4])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    print(f"{'ratio':>5} {'seed':>4} {'ours':>6} {'base':>6}")
    with tempfile.TemporaryDirectory() as tmp:
        for ratio in args.ratios:
            gaps = []
            for seed in args.seeds:
                spec = xp.noise_spec(seed, closed=ratio)
                cfg = xp.repface_config(seed)
                ours = xp.run(spec, cfg, Path(tmp) / f"o{ratio}_{seed}").final["holdout_acc"]
                base = xp.run(spec, xp.baseline_config(cfg), Path(tmp) / f"b{ratio}_{seed}").final["holdout_acc"]
                gaps.append(ours - base)
                print(f"{ratio:5.2f} {seed:4d} {ours:6.3f} {base:6.3f}")
            print(f"{ratio:5.2f} mean gap {100 * np.mean(gaps):+.2f} points")


if __name__ == "__main__":
    main()
