"""Train on a 50-class noisy dataset and print per-epoch detection metrics.

    python3 scripts/run_noise_experiment.py --closed 0.2 --open 0.0 --seed 0
"""

import argparse
import tempfile

from repface import experiments as xp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--closed", type=float, default=0.2, help="closed-set flip ratio")
    ap.add_argument("--open", type=float, default=0.0, help="open-set outlier ratio")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--workdir", help="keep dataset and metrics here instead of a temp dir")
    args = ap.parse_args()

    spec = xp.noise_spec(args.seed, closed=args.closed, open_=args.open)
    cfg = xp.repface_config(args.seed, epochs=args.epochs)
    with tempfile.TemporaryDirectory() as tmp:
        out = xp.run(spec, cfg, args.workdir or tmp)
    if out.exit_code:
        raise SystemExit(out.exit_code)
    print(f"{'ep':>3} {'loss':>8} {'acc':>6} {'prec':>6} {'rec':>6} {'corr':>6} {'noise':>6} {'filt':>6}")
    for r in out.records:
        print(f"{r['epoch']:>3} {r['loss']:8.3f} {r['holdout_acc']:6.3f} {r['det_precision']:6.3f} "
              f"{r['det_recall']:6.3f} {r['corr_acc']:6.3f} {r['n_noise']:6d} {r['n_filtered']:6d}")
    f = out.final
    if "open_detected_rate" in f:
        print(f"closed-set precision {f['closed_det_precision']:.3f}, "
              f"open-set detected {f['open_detected_rate']:.3f}")
    print(f"{out.seconds:.1f}s")


if __name__ == "__main__":
    main()
