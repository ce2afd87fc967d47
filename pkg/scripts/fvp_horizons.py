"""FVP across all horizons: FBANK+RNN baseline vs. a linear probe on a causal upstream.

Uses a synthetic corpus of 3 s utterances (longer than the largest horizon) unless --manifest is given.
"""

import argparse
import tempfile

from prosody_probe.ingest import load_manifest
from prosody_probe.probe import ProbeConfig
from prosody_probe.synthetic import write_corpus
from prosody_probe.tasks import HORIZONS, check_horizon_monotonicity, run_fvp
from prosody_probe.upstream import FbankUpstream, get_upstream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest")
    ap.add_argument("--upstream", default="mock_transformer", help="registry name of a causal-capable upstream")
    ap.add_argument("--feature", choices=["pitch", "energy"], default="pitch")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--n", type=int, default=60)
    args = ap.parse_args()

    config = ProbeConfig(learning_rate=1e-2, train_steps=args.steps)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = load_manifest(args.manifest) if args.manifest else write_corpus(tmp, args.n, seed=0, duration=3.0)[0]
        up = get_upstream(args.upstream)
        systems = {"fbank+rnn": (FbankUpstream(), "rnn"), up.spec.name: (up, None)}
        print("system\t" + "\t".join(f"{h:.2f}" for h in HORIZONS))
        for name, (upstream, baseline) in systems.items():
            results = [run_fvp(upstream, args.feature, h, manifest, baseline=baseline, config=config,
                               sweep=False).result for h in HORIZONS]
            print(name + "\t" + "\t".join(f"{r.value:.4f}" for r in results))
            check_horizon_monotonicity(results)


if __name__ == "__main__":
    main()
