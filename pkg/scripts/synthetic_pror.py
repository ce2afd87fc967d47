"""ProR on a synthetic corpus with the FBANK upstream, against a least-squares oracle.

    python scripts/synthetic_pror.py --n 200 --steps 10000 --feature pitch
"""

import argparse
import tempfile
import time

import numpy as np

from prosody_probe.probe import ProbeConfig
from prosody_probe.synthetic import write_corpus
from prosody_probe.tasks import run_pror
from prosody_probe.upstream import FbankUpstream


def least_squares_mse(data):
    def stacked(split):
        X = np.concatenate([ex.load()[0][ex.mask] for ex in split]).astype(np.float64)
        y = np.concatenate([ex.target[ex.mask] for ex in split]).astype(np.float64)
        return np.c_[X, np.ones(len(X))], y

    Xtr, ytr = stacked(data.train)
    Xte, yte = stacked(data.test)
    coef, *_ = np.linalg.lstsq(Xtr, ytr, rcond=None)
    return float(np.mean((Xte @ coef - yte) ** 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--feature", choices=["pitch", "energy"], default="pitch")
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--sweep", action="store_true", help="sweep learning rates instead of using --lr")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        manifest, _ = write_corpus(tmp, args.n, seed=args.seed)
        t0 = time.time()
        config = ProbeConfig(learning_rate=args.lr, train_steps=args.steps, seed=args.seed)
        run = run_pror(FbankUpstream(), args.feature, manifest, config=config, sweep=args.sweep)
        print(f"probe test MSE     {run.result.value:.5f}  ({time.time() - t0:.0f}s)")
        print(f"least-squares MSE  {least_squares_mse(run.data):.5f}")
        for row in run.sweep:
            print(f"  lr {row.lr:g}: dev {row.dev_metric}  diverged={row.diverged}")


if __name__ == "__main__":
    main()
