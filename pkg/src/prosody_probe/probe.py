"""Linear probes over a learnable weighted sum of frozen layer features.

Classification heads mean-pool the aggregated frames and project to C classes
(cross-entropy). Regression heads project every aggregated frame to a scalar
and are trained with MSE over voiced frames only.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .metrics import HIGHER_IS_BETTER, compute_metric

logger = logging.getLogger(__name__)

LR_SWEEP = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
SARD_STEPS = 3000
DEFAULT_STEPS = 50000
RESIDENT_LIMIT = 200_000_000  # float32 elements kept padded in memory during training
# Returned by masked_mse when a target has no voiced frame; such utterances are
# left out of batch means.
NO_VOICED_FRAMES = None


class ProbeDivergence(RuntimeError):
    pass


@dataclass
class LayerWeights:
    raw: np.ndarray
    normalization: str = "softmax"

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)

    @classmethod
    def uniform(cls, num_layers: int, normalization: str = "softmax") -> "LayerWeights":
        init = np.zeros(num_layers) if normalization == "softmax" else np.full(num_layers, 1.0 / num_layers)
        return cls(init, normalization)

    def normalized(self) -> np.ndarray:
        return normalize_weights(self.raw, self.normalization)


def normalize_weights(raw, normalization: str = "softmax"):
    if normalization == "softmax":
        if isinstance(raw, torch.Tensor):
            return torch.softmax(raw, dim=0)
        z = np.exp(raw - np.max(raw))
        return z / z.sum()
    if normalization == "none":
        return raw
    raise ValueError(f"unknown normalization {normalization!r}")


def aggregate(layers, raw_weights, normalization: str = "softmax"):
    """y[t] = sum_i w_i x_i[t] for an (L, T, D) stack; works on numpy arrays or torch tensors."""
    if len(raw_weights) != layers.shape[0]:
        raise ValueError(f"{len(raw_weights)} weights for {layers.shape[0]} layers")
    w = normalize_weights(raw_weights, normalization)
    if isinstance(layers, torch.Tensor):
        return torch.einsum("ltd,l->td", layers, w.to(layers.dtype))
    return np.einsum("ltd,l->td", np.asarray(layers, dtype=np.float64), w)


def mean_pool(y, valid_length: int):
    if valid_length < 1 or valid_length > y.shape[0]:
        raise ValueError(f"valid_length must be in [1, {y.shape[0]}], got {valid_length}")
    return y[:valid_length].mean(0)


def masked_mse(pred, target, mask=None):
    """MSE over voiced frames. ``target`` is a ProsodyTrack or an array with ``mask``.

    Returns ``NO_VOICED_FRAMES`` when the mask is empty.
    """
    if mask is None:
        target, mask = target.values, target.voiced
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (pred.shape == target.shape == mask.shape):
        raise ValueError(f"length mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    if not mask.any():
        return NO_VOICED_FRAMES
    return float(np.mean((pred[mask] - target[mask]) ** 2))


@dataclass
class ProbeConfig:
    learning_rate: float = 1e-4
    train_steps: int = DEFAULT_STEPS
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    normalization: str = "softmax"
    horizon: float | None = None
    log_every: int = 100
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.train_steps <= 0:
            raise ValueError("train_steps must be > 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "ProbeConfig":
        steps = SARD_STEPS if task == "SarD" else DEFAULT_STEPS
        return cls(**{"train_steps": steps, **overrides})

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ProbeExample:
    """One utterance: features (L, T, D) or a zero-arg loader returning them, plus its target.

    Classification targets are class indices; regression targets are (T,)
    arrays with a matching boolean ``mask``.
    """

    features: np.ndarray | Callable[[], np.ndarray]
    target: int | np.ndarray
    mask: np.ndarray | None = None
    id: str = ""

    def load(self) -> np.ndarray:
        feats = self.features() if callable(self.features) else self.features
        return np.asarray(feats, dtype=np.float32)


@dataclass
class TaskData:
    train: list[ProbeExample]
    dev: list[ProbeExample]
    test: list[ProbeExample]
    objective: str  # "classification" | "regression"
    metric: str  # "accuracy" | "f1" | "mse"
    num_classes: int = 1
    task: str = ""

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.objective == "classification" else 1

    def shape(self) -> tuple[int, int]:
        L, _, D = self.train[0].load().shape
        return L, D


class ProbeModel(nn.Module):
    def __init__(self, num_layers: int, dim: int, out_dim: int, objective: str, normalization: str = "softmax"):
        super().__init__()
        init = torch.zeros(num_layers) if normalization == "softmax" else torch.full((num_layers,), 1.0 / num_layers)
        self.raw_weights = nn.Parameter(init)
        self.head = nn.Linear(dim, out_dim)
        self.objective = objective
        self.normalization = normalization

    def aggregate(self, feats: torch.Tensor) -> torch.Tensor:
        """(B, L, T, D) padded stacks -> (B, T, D)."""
        w = normalize_weights(self.raw_weights, self.normalization).to(feats.dtype)
        return torch.einsum("bltd,l->btd", feats, w)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        y = self.aggregate(feats)
        if self.objective == "classification":
            valid = (torch.arange(y.shape[1])[None, :] < lengths[:, None]).to(y.dtype)
            pooled = (y * valid[..., None]).sum(1) / lengths[:, None].to(y.dtype)
            return self.head(pooled)
        return self.head(y).squeeze(-1)


def regression_loss(pred: torch.Tensor, targets: torch.Tensor, masks: torch.Tensor) -> torch.Tensor | None:
    """Mean over utterances of per-utterance voiced-frame MSE; None if no utterance has a voiced frame."""
    m = masks.to(pred.dtype)
    counts = m.sum(1)
    keep = counts > 0
    if not keep.any():
        return None
    per_utt = ((pred - targets) ** 2 * m).sum(1)[keep] / counts[keep]
    return per_utt.mean()


def _pad(arrays, dtype) -> torch.Tensor:
    return nn.utils.rnn.pad_sequence([torch.as_tensor(a, dtype=dtype) for a in arrays], batch_first=True)


@dataclass
class Batch:
    feats: torch.Tensor  # (B, L, T, D)
    lengths: torch.Tensor
    labels: torch.Tensor | None = None
    targets: torch.Tensor | None = None
    masks: torch.Tensor | None = None

    def select(self, idx) -> "Batch":
        idx = torch.as_tensor(idx)
        lengths = self.lengths[idx]
        T = int(lengths.max())
        pick = lambda x: None if x is None else x[idx] if x.dim() == 1 else x[idx, :T]
        return Batch(self.feats[idx][:, :, :T], lengths, pick(self.labels), pick(self.targets), pick(self.masks))


def collate(examples: Sequence[ProbeExample], objective: str, dtype=torch.float32) -> Batch:
    """Pad (L, T, D) stacks along time into one (B, L, T_max, D) tensor."""
    stacks = [torch.from_numpy(ex.load()).to(dtype).transpose(0, 1) for ex in examples]
    lengths = torch.tensor([x.shape[0] for x in stacks])
    feats = nn.utils.rnn.pad_sequence(stacks, batch_first=True).transpose(1, 2).contiguous()
    if objective == "classification":
        return Batch(feats, lengths, labels=torch.tensor([int(ex.target) for ex in examples]))
    return Batch(feats, lengths, targets=_pad([ex.target for ex in examples], dtype),
                 masks=_pad([ex.mask for ex in examples], torch.bool))


def batch_loss(model: ProbeModel, batch: Batch | Sequence[ProbeExample], dtype=torch.float32) -> torch.Tensor | None:
    if not isinstance(batch, Batch):
        batch = collate(batch, model.objective, dtype)
    out = model(batch.feats, batch.lengths)
    if model.objective == "classification":
        return nn.functional.cross_entropy(out, batch.labels)
    return regression_loss(out, batch.targets, batch.masks)


@dataclass
class TrainedProbe:
    layer_weights: LayerWeights
    head_weight: np.ndarray  # (C, D)
    head_bias: np.ndarray  # (C,)
    objective: str
    metric: str
    config: ProbeConfig
    task: str = ""
    upstream: str = ""
    train_log: list[tuple[int, float]] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights.raw)

    @property
    def input_dim(self) -> int:
        return self.head_weight.shape[1]

    def to_module(self, dtype=torch.float32) -> ProbeModel:
        C, D = self.head_weight.shape
        model = ProbeModel(self.num_layers, D, C, self.objective, self.layer_weights.normalization)
        with torch.no_grad():
            model.raw_weights.copy_(torch.from_numpy(self.layer_weights.raw))
            model.head.weight.copy_(torch.from_numpy(self.head_weight))
            model.head.bias.copy_(torch.from_numpy(self.head_bias))
        return model.to(dtype).eval()

    def predict(self, examples: Sequence[ProbeExample], batch_size: int = 64) -> list:
        """Class indices (classification) or per-frame arrays (regression)."""
        model = self.to_module()
        preds = []
        with torch.no_grad():
            for i in range(0, len(examples), batch_size):
                chunk = examples[i : i + batch_size]
                b = collate(chunk, self.objective)
                out, lengths = model(b.feats, b.lengths), b.lengths
                if self.objective == "classification":
                    preds.extend(out.argmax(-1).tolist())
                else:
                    preds.extend(out[j, : lengths[j]].numpy().astype(np.float64) for j in range(len(chunk)))
        return preds

    def evaluate(self, examples: Sequence[ProbeExample]) -> float:
        return evaluate_predictions(self.predict(examples), examples, self.metric)

    def parameter_count(self) -> int:
        return self.head_weight.size + self.head_bias.size + self.layer_weights.raw.size

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        meta = {
            "objective": self.objective,
            "metric": self.metric,
            "task": self.task,
            "upstream": self.upstream,
            "normalization": self.layer_weights.normalization,
            "config": asdict(self.config),
            "config_fingerprint": self.config.fingerprint(),
            "train_log": self.train_log,
        }
        with open(path, "wb") as fh:
            np.savez(fh, raw=self.layer_weights.raw, head_weight=self.head_weight,
                     head_bias=self.head_bias, meta=np.array(json.dumps(meta)))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TrainedProbe":
        with np.load(path) as npz:
            meta = json.loads(str(npz["meta"]))
            return cls(
                LayerWeights(npz["raw"], meta["normalization"]),
                npz["head_weight"],
                npz["head_bias"],
                meta["objective"],
                meta["metric"],
                ProbeConfig(**meta["config"]),
                meta["task"],
                meta["upstream"],
                [tuple(x) for x in meta["train_log"]],
            )


def evaluate_predictions(preds, examples: Sequence[ProbeExample], metric: str) -> float:
    if metric == "mse":
        p = np.concatenate(preds)
        r = np.concatenate([np.asarray(ex.target, dtype=np.float64) for ex in examples])
        m = np.concatenate([np.asarray(ex.mask, dtype=bool) for ex in examples])
        return compute_metric(p, r, "mse", mask=m)
    return compute_metric(preds, [int(ex.target) for ex in examples], metric)


def train_probe(data: TaskData, config: ProbeConfig, upstream: str = "") -> TrainedProbe:
    """Train layer weights and a linear head with Adam for a fixed number of steps."""
    if not data.train:
        raise ValueError("empty training set")
    L, D = data.shape()
    gen = torch.Generator().manual_seed(config.seed)
    torch.manual_seed(config.seed)
    model = ProbeModel(L, D, data.output_dim, data.objective, config.normalization)
    with torch.no_grad():
        bound = 1.0 / np.sqrt(D)
        model.head.weight.uniform_(-bound, bound, generator=gen)
        model.head.bias.uniform_(-bound, bound, generator=gen)
    if config.optimizer != "adam":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    rng = np.random.default_rng(config.seed)
    n = len(data.train)
    # small in-memory sets are padded once; otherwise each batch is loaded on demand
    resident = None
    if all(not callable(ex.features) for ex in data.train):
        T_max = max(ex.features.shape[1] for ex in data.train)
        if n * L * T_max * D <= RESIDENT_LIMIT:
            resident = collate(data.train, data.objective)
    order, cursor = rng.permutation(n), 0
    log = []
    model.train()
    for step in range(1, config.train_steps + 1):
        take = min(config.batch_size, n)
        if cursor + take > n:
            order, cursor = rng.permutation(n), 0
        idx = order[cursor : cursor + take]
        cursor += take
        if resident is not None:
            batch = resident.select(idx)
        else:
            batch = collate([data.train[i] for i in idx], data.objective)
        loss = batch_loss(model, batch)
        if loss is None:
            continue
        if not torch.isfinite(loss):
            raise ProbeDivergence(
                f"non-finite loss at step {step} (lr={config.learning_rate:g}, task={data.task or '?'})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % config.log_every == 0 or step == config.train_steps:
            log.append((step, loss.item()))

    head_w = model.head.weight.detach().numpy().astype(np.float32)
    head_b = model.head.bias.detach().numpy().astype(np.float32)
    if not (np.isfinite(head_w).all() and np.isfinite(head_b).all()):
        raise ProbeDivergence(f"non-finite parameters after training (lr={config.learning_rate:g})")
    return TrainedProbe(
        LayerWeights(model.raw_weights.detach().numpy().astype(np.float64), config.normalization),
        head_w,
        head_b,
        data.objective,
        data.metric,
        config,
        data.task,
        upstream,
        log,
    )


@dataclass
class SweepRow:
    lr: float
    dev_metric: float | None
    test_metric: float | None
    steps: int
    seed: int
    diverged: bool = False


def select_best(rows: Sequence[SweepRow], metric: str) -> SweepRow:
    """Best dev metric; ties go to the lower learning rate."""
    ok = [r for r in rows if not r.diverged and r.dev_metric is not None and np.isfinite(r.dev_metric)]
    if not ok:
        raise ProbeDivergence("all learning-rate runs diverged")
    sign = -1.0 if HIGHER_IS_BETTER[metric] else 1.0
    return min(ok, key=lambda r: (sign * r.dev_metric, r.lr))


def lr_sweep(data: TaskData, base_config: ProbeConfig, rates: Sequence[float] = LR_SWEEP,
             upstream: str = "", train_fn=train_probe) -> tuple[TrainedProbe, list[SweepRow]]:
    if not data.dev:
        raise ValueError("learning-rate sweep needs a dev split")
    rows, probes = [], {}
    for lr in rates:
        cfg = replace(base_config, learning_rate=lr)
        try:
            probe = train_fn(data, cfg, upstream=upstream)
            dev = probe.evaluate(data.dev)
            test = probe.evaluate(data.test) if data.test else None
        except ProbeDivergence as err:
            logger.warning("lr %g diverged: %s", lr, err)
            rows.append(SweepRow(lr, None, None, cfg.train_steps, cfg.seed, diverged=True))
            continue
        probes[lr] = probe
        rows.append(SweepRow(lr, dev, test, cfg.train_steps, cfg.seed))
    best = select_best(rows, data.metric)
    return probes[best.lr], rows


def write_sweep_table(rows: Sequence[SweepRow], path: str | Path, sep: str = "\t") -> Path:
    path = Path(path)
    lines = [sep.join(["lr", "dev_metric", "test_metric", "steps", "seed"])]
    for r in rows:
        fmt = lambda v: "diverged" if v is None else f"{v:.6g}"  # noqa: E731
        lines.append(sep.join([f"{r.lr:g}", fmt(r.dev_metric), fmt(r.test_metric), str(r.steps), str(r.seed)]))
    path.write_text("\n".join(lines) + "\n")
    return path
