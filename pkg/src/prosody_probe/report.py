"""Render the results store into charts and tab-separated tables."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import ContributionProfile, profile_heatmap_rows  # noqa: E402
from .tasks import HORIZONS, ResultsStore, TaskResult  # noqa: E402

logger = logging.getLogger(__name__)

BAR_TASKS = ("SA-2", "SA-7", "SarD", "PP", "ProR")
KNOWN_TASKS = set(BAR_TASKS) | {"FVP", "XL-ProR"}


def _latest(results: Sequence[TaskResult]) -> list[TaskResult]:
    """Keep the newest result per (task, upstream, feature, horizon, language, layers)."""
    keep = {}
    for r in sorted(results, key=lambda r: r.timestamp):
        key = (r.task, r.upstream, r.feature, r.horizon, r.language, tuple(r.layers or ()))
        keep[key] = r
    return list(keep.values())


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> Path:
    lines = ["\t".join(header)] + ["\t".join("" if v is None else str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _bar_chart(path: Path, title: str, labels: list[str], values: list[float], ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(labels) + 2), 3.5))
    ax.bar(range(len(labels)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(results_store: str | Path | ResultsStore, output_dir: str | Path,
                  profiles: Sequence[ContributionProfile] = ()) -> list[Path]:
    store = results_store if isinstance(results_store, ResultsStore) else ResultsStore(results_store)
    results = store.read()
    if not results:
        raise ValueError(f"results store {store.path} is empty")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    unknown = sorted({r.task for r in results} - KNOWN_TASKS)
    for task in unknown:
        logger.warning("skipping results for unknown task %r", task)
    results = _latest([r for r in results if r.task in KNOWN_TASKS])
    integration = [r for r in results if r.layers]
    results = [r for r in results if not r.layers]

    # (a) metric by upstream, one chart per task (ProR split by feature)
    groups: dict[str, list[TaskResult]] = defaultdict(list)
    for r in results:
        if r.task in BAR_TASKS:
            key = r.task if r.task != "ProR" else f"ProR-{r.feature}"
            groups[key].append(r)
    for key, rows in sorted(groups.items()):
        rows = sorted(rows, key=lambda r: r.upstream)
        data = out / f"bars_{key}.tsv"
        written.append(_write_tsv(data, ["upstream", "metric", "value"],
                                  [[r.upstream, r.metric_name, f"{r.value:.6g}"] for r in rows]))
        img = out / f"bars_{key}.png"
        _bar_chart(img, key, [r.upstream for r in rows], [r.value for r in rows], rows[0].metric_name)
        written.append(img)

    # (b) contribution heatmap per task
    by_task: dict[str, list[ContributionProfile]] = defaultdict(list)
    for p in profiles:
        by_task[p.task].append(p)
    for task, plist in sorted(by_task.items()):
        width = max(len(p.c) for p in plist)
        rows = [[p.upstream] + [f"{v:.6g}" for v in p.c] + [""] * (width - len(p.c)) for p in plist]
        written.append(_write_tsv(out / f"contribution_{task}.tsv", ["upstream"] + [f"layer{i}" for i in range(width)],
                                  rows))
        names, mat = profile_heatmap_rows(plist)
        fig, ax = plt.subplots(figsize=(0.5 * width + 2, 0.4 * len(names) + 1.5))
        ax.imshow(np.ma.masked_invalid(mat), cmap="Blues", aspect="auto", vmin=0, vmax=1)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.set_xlabel("layer")
        ax.set_title(f"contribution: {task}")
        fig.tight_layout()
        img = out / f"contribution_{task}.png"
        fig.savefig(img)
        plt.close(fig)
        written.append(img)

    # (c) FVP table: systems x horizons, per feature
    fvp = [r for r in results if r.task == "FVP"]
    for feat in sorted({r.feature for r in fvp}):
        horizons = sorted({r.horizon for r in fvp if r.feature == feat} | set(HORIZONS))
        systems = sorted({r.upstream for r in fvp if r.feature == feat})
        cell = {(r.upstream, r.horizon): r.value for r in fvp if r.feature == feat}
        rows = [[s] + [f"{cell[(s, h)]:.4g}" if (s, h) in cell else "" for h in horizons] for s in systems]
        written.append(_write_tsv(out / f"fvp_{feat}.tsv", ["system"] + [f"{h:.2f}" for h in horizons], rows))

    # (d) cross-lingual table
    xl = [r for r in results if r.task == "XL-ProR"]
    if xl:
        cols = sorted({(r.language, r.feature) for r in xl})
        cell = {(r.upstream, r.language, r.feature): r.value for r in xl}
        systems = sorted({r.upstream for r in xl})
        rows = [[s] + [f"{cell[(s, l, f)]:.4g}" if (s, l, f) in cell else "" for l, f in cols] for s in systems]
        header = ["method"] + [f"{l}-{f[0]}" for l, f in cols]
        written.append(_write_tsv(out / "crosslingual.tsv", header, rows))

    # (e) layer-limited integration runs
    if integration:
        rows = [[r.task, r.upstream, ",".join(map(str, r.layers)), r.metric_name, f"{r.value:.4g}"]
                for r in sorted(integration, key=lambda r: (r.task, r.upstream, r.layers))]
        written.append(_write_tsv(out / "integration.tsv", ["task", "upstream", "layers", "metric", "value"], rows))

    return written
