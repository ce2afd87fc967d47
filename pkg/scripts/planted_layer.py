"""Plant standardized log-f0 into one layer of a mock upstream and check that contribution analysis finds it."""

import argparse
import tempfile

import numpy as np

from prosody_probe.analysis import layer_contribution
from prosody_probe.ingest import load_audio
from prosody_probe.probe import ProbeConfig
from prosody_probe.synthetic import planted_pitch_signal, write_corpus
from prosody_probe.tasks import run_pror
from prosody_probe.upstream import MockUpstream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--layers", type=int, default=6)
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--steps", type=int, default=1000)
    args = ap.parse_args()

    hits = 0
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.seeds):
            manifest, _ = write_corpus(f"{tmp}/s{seed}", args.n, seed=100 + seed)
            planted = int(np.random.default_rng(seed).integers(0, args.layers))
            up = MockUpstream(args.layers, seed=seed, planted_layer=planted, planted_fn=planted_pitch_signal)
            run = run_pror(up, "pitch", manifest, config=ProbeConfig(1e-2, args.steps, seed=seed), sweep=False)
            test = [up.extract(load_audio(r, manifest)) for r in manifest.split("test")]
            prof = layer_contribution(test, run.probe)
            hits += prof.best_layer == planted
            print(f"seed {seed}: planted {planted} found {prof.best_layer}  c={np.round(prof.c, 3).tolist()}")
    print(f"recovered {hits}/{args.seeds}")


if __name__ == "__main__":
    main()
