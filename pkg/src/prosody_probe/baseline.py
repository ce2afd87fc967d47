"""FBANK + RNN baseline for future value prediction.

A one-layer unidirectional recurrent net (hidden size 128) reads FBANK frames
1..i and a linear readout predicts the target at i + offset. Targets are
pre-shifted by the task builder, so the model itself is a plain causal
sequence regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .probe import ProbeConfig, ProbeDivergence, ProbeExample, TaskData, _pad, evaluate_predictions, regression_loss

HIDDEN_SIZE = 128


class RNNRegressor(nn.Module):
    def __init__(self, input_dim: int, hidden: int = HIDDEN_SIZE, cell: str = "gru"):
        super().__init__()
        rnn_cls = {"gru": nn.GRU, "lstm": nn.LSTM, "rnn": nn.RNN}[cell]
        self.rnn = rnn_cls(input_dim, hidden, num_layers=1, batch_first=True)
        self.readout = nn.Linear(hidden, 1)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        # padding sits after each sequence, so it cannot leak into earlier steps
        h, _ = self.rnn(x)
        return self.readout(h).squeeze(-1)


def _inputs(batch: Sequence[ProbeExample]) -> tuple[torch.Tensor, torch.Tensor]:
    seqs = []
    for ex in batch:
        feats = ex.load()
        if feats.ndim == 3:
            if feats.shape[0] != 1:
                raise ValueError("the RNN baseline takes single-layer (FBANK) stacks")
            feats = feats[0]
        seqs.append(torch.from_numpy(feats))
    lengths = torch.tensor([s.shape[0] for s in seqs])
    return nn.utils.rnn.pad_sequence(seqs, batch_first=True), lengths


@dataclass
class TrainedBaseline:
    state: dict
    input_dim: int
    cell: str
    config: ProbeConfig
    metric: str = "mse"
    train_log: list[tuple[int, float]] = field(default_factory=list)
    hidden_size: int = HIDDEN_SIZE

    def to_module(self) -> RNNRegressor:
        model = RNNRegressor(self.input_dim, self.hidden_size, self.cell)
        model.load_state_dict(self.state)
        return model.eval()

    def predict(self, examples: Sequence[ProbeExample], batch_size: int = 64) -> list[np.ndarray]:
        model = self.to_module()
        preds = []
        with torch.no_grad():
            for i in range(0, len(examples), batch_size):
                chunk = examples[i : i + batch_size]
                x, lengths = _inputs(chunk)
                out = model(x, lengths)
                preds.extend(out[j, : lengths[j]].numpy().astype(np.float64) for j in range(len(chunk)))
        return preds

    def evaluate(self, examples: Sequence[ProbeExample]) -> float:
        return evaluate_predictions(self.predict(examples), examples, self.metric)


def rnn_baseline_train(data: TaskData, config: ProbeConfig, upstream: str = "fbank", cell: str = "gru",
                       hidden: int = HIDDEN_SIZE) -> TrainedBaseline:
    if not data.train:
        raise ValueError("empty training set")
    if data.objective != "regression":
        raise ValueError("the RNN baseline is a frame regressor")
    D = data.train[0].load().shape[-1]
    torch.manual_seed(config.seed)
    model = RNNRegressor(D, hidden, cell)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(data.train)
    order, cursor = rng.permutation(n), 0
    log = []
    for step in range(1, config.train_steps + 1):
        take = min(config.batch_size, n)
        if cursor + take > n:
            order, cursor = rng.permutation(n), 0
        batch = [data.train[i] for i in order[cursor : cursor + take]]
        cursor += take
        x, lengths = _inputs(batch)
        out = model(x, lengths)
        loss = regression_loss(out, _pad([ex.target for ex in batch], out.dtype),
                               _pad([ex.mask for ex in batch], torch.bool))
        if loss is None:
            continue
        if not torch.isfinite(loss):
            raise ProbeDivergence(f"RNN baseline: non-finite loss at step {step} (lr={config.learning_rate:g})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % config.log_every == 0 or step == config.train_steps:
            log.append((step, loss.item()))
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return TrainedBaseline(state, D, cell, config, data.metric, log, hidden)
