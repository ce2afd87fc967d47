"""Command-line entry point: extract, run, sweep, analyze, integrate, report.

Settings come from defaults, then environment (cache and results roots),
then an optional config file, then flags. Every command prints the run
fingerprint first and a single-line JSON summary last.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .analysis import ContributionProfile, IntegrationSpec, integrate_layers, integration_table, layer_contribution
from .cache import FeatureCache
from .features import FeatureProvider
from .ingest import load_manifest
from .probe import DEFAULT_STEPS, SARD_STEPS, ProbeConfig, TrainedProbe, write_sweep_table
from .tasks import (
    CLASSIFICATION_TASKS,
    HorizonSpec,
    ResultsStore,
    TaskRun,
    run_classification_task,
    run_crosslingual,
    run_fvp,
    run_pror,
)
from .upstream import get_upstream, load_registry

logger = logging.getLogger("prosody_probe")

CONFIG_HEADER = "prosody-probe-config"
CONFIG_VERSION = 1
ENV_CACHE = "PROSODY_PROBE_CACHE"
ENV_RESULTS = "PROSODY_PROBE_RESULTS"
REGRESSION = ("ProR", "FVP", "XL-ProR")
TASKS = tuple(CLASSIFICATION_TASKS) + REGRESSION
RNN_BASELINE = "fbank_rnn"


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    upstream: str = "fbank"
    task: str = "ProR"
    manifest: str = ""
    feature: str | None = None
    horizon: float | None = None
    lr_sweep: bool = True
    seed: int = 0
    cache_dir: str = "cache"
    results_path: str = "results/results.jsonl"
    report_dir: str = "results/report"
    learning_rate: float = 1e-4
    train_steps: int | None = None
    batch_size: int = 32
    registry: str | None = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.horizon is not None and self.task != "FVP":
            raise UsageError("--horizon is only valid for FVP")
        if self.task == "FVP" and self.horizon is None:
            raise UsageError("FVP needs --horizon (seconds)")
        if self.feature is not None and self.task not in REGRESSION:
            raise UsageError(f"--feature is only valid for {', '.join(REGRESSION)}")
        if self.task in REGRESSION and self.feature not in ("pitch", "energy"):
            raise UsageError(f"{self.task} needs --feature pitch|energy")
        if self.upstream == RNN_BASELINE and self.task != "FVP":
            raise UsageError(f"{RNN_BASELINE} is an FVP baseline")
        if not self.manifest:
            raise UsageError("no manifest given")

    def probe_config(self) -> ProbeConfig:
        steps = self.train_steps or (SARD_STEPS if self.task == "SarD" else DEFAULT_STEPS)
        return ProbeConfig(learning_rate=self.learning_rate, train_steps=steps, batch_size=self.batch_size,
                           seed=self.seed)

    def fingerprint(self, manifest_hash: str = "") -> str:
        """Hash of everything that affects a metric; output locations are left out."""
        skip = {"cache_dir", "results_path", "report_dir", "manifest"}
        payload = {k: v for k, v in asdict(self).items() if k not in skip}
        payload["probe"] = asdict(self.probe_config())
        payload["data"] = manifest_hash
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def results_dir(self) -> Path:
        return Path(self.results_path).parent

    def probe_path(self, fingerprint: str, fold: int | None = None) -> Path:
        suffix = "" if fold is None else f".fold{fold}"
        return self.results_dir / "probes" / f"{fingerprint}{suffix}.npz"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    if value.lower() in ("none", "") and "None" in kind:
        return None
    if kind.startswith("bool"):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{key}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return value


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines after a ``prosody-probe-config <version>`` header."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split()[0] != CONFIG_HEADER:
        raise UsageError(f"{path}: missing '{CONFIG_HEADER} {CONFIG_VERSION}' header")
    head = lines[0].split()
    if len(head) != 2 or head[1] != str(CONFIG_VERSION):
        raise UsageError(f"{path}: unsupported config version {' '.join(head[1:])!r}")
    out = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise UsageError(f"{path}: expected key = value, got {ln!r}")
        key, value = (s.strip() for s in ln.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def write_config_file(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    body = [f"{CONFIG_HEADER} {CONFIG_VERSION}"]
    body += [f"{k} = {'none' if v is None else v}" for k, v in asdict(cfg).items()]
    path.write_text("\n".join(body) + "\n")
    return path


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values: dict = {}
    if environ.get(ENV_CACHE):
        values["cache_dir"] = environ[ENV_CACHE]
    if environ.get(ENV_RESULTS):
        root = Path(environ[ENV_RESULTS])
        values["results_path"] = str(root / "results.jsonl")
        values["report_dir"] = str(root / "report")
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


# ----------------------------------------------------------------------------
# helpers


def _upstream(cfg: RunConfig):
    name = "fbank" if cfg.upstream == RNN_BASELINE else cfg.upstream
    return get_upstream(name, load_registry(cfg.registry))


def _run_task(cfg: RunConfig, upstream, manifest, cache, layers=None, sweep=None) -> TaskRun:
    sweep = cfg.lr_sweep if sweep is None else sweep
    pc = cfg.probe_config()
    if cfg.task in CLASSIFICATION_TASKS:
        return run_classification_task(cfg.task, upstream, manifest, config=pc, cache=cache, sweep=sweep,
                                       layers=layers)
    if cfg.task == "ProR":
        return run_pror(upstream, cfg.feature, manifest, config=pc, cache=cache, sweep=sweep, layers=layers)
    if cfg.task == "FVP":
        if layers is not None:
            raise UsageError("layer-limited runs are not defined for FVP")
        baseline = "rnn" if cfg.upstream == RNN_BASELINE else None
        return run_fvp(upstream, cfg.feature, cfg.horizon, manifest, baseline=baseline, config=pc, cache=cache,
                       sweep=sweep)
    if layers is not None:
        raise UsageError("layer-limited runs are not defined for XL-ProR")
    return run_crosslingual(upstream, cfg.feature, manifest, config=pc, cache=cache, sweep=sweep)


def _save_probes(cfg: RunConfig, run: TaskRun, fp: str) -> list[str]:
    saved = []
    probes = run.fold_probes or [run.probe]
    for i, probe in enumerate(probes):
        if not isinstance(probe, TrainedProbe):
            continue  # the RNN baseline has no layer weights to analyze
        path = cfg.probe_path(fp, i if run.fold_probes and i else None)
        path.parent.mkdir(parents=True, exist_ok=True)
        saved.append(str(probe.save(path)))
    return saved


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _setup(cfg: RunConfig):
    cfg.validate()
    if cfg.horizon is not None:
        stride = 10 if cfg.upstream == RNN_BASELINE else _upstream(cfg).spec.stride
        HorizonSpec(cfg.horizon, stride)  # fail fast on stride divisibility
    manifest = load_manifest(cfg.manifest)
    fp = cfg.fingerprint(manifest.content_hash())
    print(f"fingerprint: {fp}")
    return manifest, fp


# ----------------------------------------------------------------------------
# commands


def cmd_extract(cfg: RunConfig) -> int:
    manifest, fp = _setup(cfg)
    upstream = _upstream(cfg)
    provider = FeatureProvider(upstream, manifest, FeatureCache(cfg.cache_dir))
    modes = ("causal",) if cfg.task == "FVP" else ("full",)
    tracks = (cfg.feature,) if cfg.feature else ()
    summary = provider.populate(modes, tracks)
    for rid, err in summary.errors.items():
        print(f"failed: {rid}: {err}", file=sys.stderr)
    _emit({"command": "extract", "fingerprint": fp, "new": summary.new, "reused": summary.reused,
           "failed": summary.failed})
    return 1 if summary.failed else 0


def cmd_run(cfg: RunConfig, sweep: bool | None = None) -> int:
    manifest, fp = _setup(cfg)
    run = _run_task(cfg, _upstream(cfg), manifest, FeatureCache(cfg.cache_dir), sweep=sweep)
    result = run.result
    result.config_fingerprint = fp
    if result.per_fold:
        for i, v in enumerate(result.per_fold):
            print(f"fold {i}: {result.metric_name} = {v:.6f}")
        print(f"mean {result.metric_name} = {result.value:.6f}")
    else:
        print(f"{result.task} {result.upstream} {result.metric_name} = {result.value:.6f}")
    ResultsStore(cfg.results_path).append(result)
    probes = _save_probes(cfg, run, fp)
    summary = {"command": "sweep" if sweep else "run", "fingerprint": fp, "task": result.task,
               "upstream": result.upstream, "metric": result.metric_name, "value": result.value,
               "per_fold": result.per_fold, "learning_rate": result.learning_rate, "probes": probes}
    if sweep:
        report = Path(cfg.report_dir)
        report.mkdir(parents=True, exist_ok=True)
        table = write_sweep_table(run.sweep, report / f"sweep_{fp}.tsv")
        print(Path(table).read_text(), end="")
        summary["sweep_table"] = str(table)
    _emit(summary)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    return cmd_run(cfg, sweep=True)


def _profile_path(cfg: RunConfig, upstream_name: str) -> Path:
    tag = cfg.task if cfg.feature is None else f"{cfg.task}-{cfg.feature}"
    return Path(cfg.report_dir) / f"contribution_{tag}_{upstream_name}.json"


def cmd_analyze(cfg: RunConfig) -> int:
    manifest, fp = _setup(cfg)
    probe_path = cfg.probe_path(fp)
    if not probe_path.exists():
        raise FileNotFoundError(f"no trained probe for this config: {probe_path} (run 'prosody-probe run' first)")
    probe = TrainedProbe.load(probe_path)
    upstream = _upstream(cfg)
    provider = FeatureProvider(upstream, manifest, FeatureCache(cfg.cache_dir))
    mode = "causal" if cfg.task == "FVP" else "full"
    records = manifest.split("test") or manifest.records
    stacks = (provider.stack(r, mode) for r in records)
    tag = cfg.task if cfg.feature is None else f"{cfg.task}-{cfg.feature}"
    profile = layer_contribution(stacks, probe, upstream=upstream.spec.name, task=tag)
    out = _profile_path(cfg, upstream.spec.name)
    out.parent.mkdir(parents=True, exist_ok=True)
    profile.save(out)
    for i, c in enumerate(profile.c):
        print(f"layer {i:2d}: c = {c:.6g}")
    _emit({"command": "analyze", "fingerprint": fp, "profile": str(out), "best_layer": profile.best_layer,
           "num_layers": len(profile.c)})
    return 0


def cmd_integrate(cfg: RunConfig, best: int | None = None) -> int:
    manifest, fp = _setup(cfg)
    upstream = _upstream(cfg)
    L = upstream.spec.num_layers
    if best is None:
        path = _profile_path(cfg, upstream.spec.name)
        if not path.exists():
            raise FileNotFoundError(f"no contribution profile at {path}; run 'analyze' first or pass --best")
        spec = IntegrationSpec.from_profile(ContributionProfile.load(path))
    else:
        spec = IntegrationSpec.from_best(best, L)
    cache = FeatureCache(cfg.cache_dir)
    runs = integrate_layers(lambda layers: _run_task(cfg, upstream, manifest, cache, layers=layers), spec, L)
    store = ResultsStore(cfg.results_path)
    for r in runs:
        r.result.config_fingerprint = fp
        store.append(r.result)
    table = integration_table(runs, spec)
    print(table, end="")
    report = Path(cfg.report_dir)
    report.mkdir(parents=True, exist_ok=True)
    out = report / f"integration_{cfg.task}_{upstream.spec.name}.tsv"
    out.write_text(table)
    _emit({"command": "integrate", "fingerprint": fp, "layer_sets": [list(s) for s in spec.layer_sets],
           "values": [r.result.value for r in runs], "table": str(out)})
    return 0


def cmd_report(cfg: RunConfig) -> int:
    from .report import render_report

    store = ResultsStore(cfg.results_path)
    if not store.path.exists():
        raise FileNotFoundError(f"results store {store.path} does not exist")
    fp = hashlib.sha256(store.path.read_bytes()).hexdigest()[:16]
    print(f"fingerprint: {fp}")
    profiles = [ContributionProfile.load(p) for p in sorted(Path(cfg.report_dir).glob("contribution_*.json"))]
    written = render_report(store, cfg.report_dir, profiles)
    for p in written:
        print(p)
    _emit({"command": "report", "fingerprint": fp, "files": [str(p) for p in written]})
    return 0


# ----------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser, needs_task: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--results-path", dest="results_path")
    p.add_argument("--report-dir", dest="report_dir")
    if not needs_task:
        return
    p.add_argument("--upstream")
    p.add_argument("--task")
    p.add_argument("--manifest")
    p.add_argument("--feature", choices=("pitch", "energy"))
    p.add_argument("--horizon", type=float, help="FVP look-ahead in seconds")
    p.add_argument("--seed", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--steps", dest="train_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--registry", help="JSON upstream registry merged over the built-ins")
    sweep = p.add_mutually_exclusive_group()
    sweep.add_argument("--sweep", dest="lr_sweep", action="store_const", const=True)
    sweep.add_argument("--no-sweep", dest="lr_sweep", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prosody-probe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("extract", "populate the feature and target cache"),
                           ("run", "train and evaluate one task"),
                           ("sweep", "run with the learning-rate sweep and write the sweep table"),
                           ("analyze", "layer contribution profile from a trained probe"),
                           ("integrate", "compare two layer-limited settings"),
                           ("report", "render charts and tables from the results store")]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p, needs_task=name != "report")
        if name == "integrate":
            p.add_argument("--best", type=int, help="best layer (default: from the saved contribution profile)")
    return parser


COMMANDS = {"extract": cmd_extract, "run": cmd_run, "sweep": cmd_sweep, "analyze": cmd_analyze,
            "integrate": cmd_integrate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "report":
            return cmd_report(cfg)
        if args.command == "integrate":
            return cmd_integrate(cfg, args.best)
        return COMMANDS[args.command](cfg)
    except UsageError as err:
        parser.error(str(err))  # exits with status 2
    except (FileNotFoundError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        _emit({"command": args.command, "error": str(err)})
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
