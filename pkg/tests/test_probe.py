import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prosody_probe.containers import ProsodyTrack
from prosody_probe.probe import (
    DEFAULT_STEPS,
    LR_SWEEP,
    NO_VOICED_FRAMES,
    SARD_STEPS,
    LayerWeights,
    ProbeConfig,
    ProbeDivergence,
    ProbeExample,
    ProbeModel,
    SweepRow,
    TaskData,
    TrainedProbe,
    aggregate,
    batch_loss,
    collate,
    lr_sweep,
    masked_mse,
    mean_pool,
    regression_loss,
    select_best,
    train_probe,
    write_sweep_table,
)

finite = st.floats(-100, 100, allow_nan=False, width=32)


# aggregation


def test_one_hot_limit():
    x = np.random.default_rng(0).standard_normal((5, 7, 4))
    raw = np.zeros(5)
    raw[2] = 60.0
    np.testing.assert_allclose(aggregate(x, raw), x[2], atol=1e-5)


def test_identical_layers():
    v = np.random.default_rng(1).standard_normal((7, 4))
    x = np.stack([v] * 4)
    np.testing.assert_allclose(aggregate(x, np.array([0.3, -2.0, 5.0, 1.0])), v, atol=1e-12)


def test_two_layer_half():
    v = np.random.default_rng(2).standard_normal((3, 4))
    np.testing.assert_allclose(aggregate(np.stack([np.zeros_like(v), v]), np.zeros(2)), v / 2)


def test_weight_length_mismatch():
    with pytest.raises(ValueError):
        aggregate(np.zeros((3, 2, 2)), np.zeros(4))


def test_unnormalized_mode_is_plain_sum():
    x = np.random.default_rng(3).standard_normal((3, 5, 2))
    w = np.array([0.5, 2.0, -1.0])
    np.testing.assert_allclose(aggregate(x, w, "none"), np.einsum("ltd,l->td", x, w))


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5)), elements=finite),
       st.data())
@settings(max_examples=100)
def test_convexity(x, data):
    raw = data.draw(hnp.arrays(np.float64, x.shape[0], elements=st.floats(-20, 20)))
    y = aggregate(x, raw)
    tol = 1e-9 * (1 + np.abs(x).max())
    assert np.all(y >= x.min(axis=0) - tol) and np.all(y <= x.max(axis=0) + tol)


@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)))
def test_normalized_weights_simplex(raw):
    w = LayerWeights(raw).normalized()
    assert abs(w.sum() - 1) < 1e-9 and np.all(w > 0)


# pooling


def test_mean_pool_examples():
    c = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(mean_pool(np.tile(c, (5, 1)), 5), c)
    u, v = np.array([1.0, 2.0]), np.array([3.0, 6.0])
    np.testing.assert_allclose(mean_pool(np.stack([u, v]), 2), (u + v) / 2)
    with pytest.raises(ValueError):
        mean_pool(np.zeros((3, 2)), 0)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 4)), elements=finite),
       hnp.arrays(np.float64, st.tuples(st.integers(0, 6), st.just(1)), elements=finite))
def test_mean_pool_padding_invariance(y, pad):
    padded = np.concatenate([y, np.repeat(pad, y.shape[1], axis=1)]) if len(pad) else y
    np.testing.assert_allclose(mean_pool(padded, len(y)), mean_pool(y, len(y)))


def test_model_pooling_ignores_padding():
    torch.manual_seed(0)
    model = ProbeModel(2, 3, 4, "classification").double()
    short = np.random.default_rng(0).standard_normal((2, 5, 3))
    long = np.random.default_rng(1).standard_normal((2, 9, 3))
    alone = collate([ProbeExample(short, 0)], "classification", torch.float64)
    mixed = collate([ProbeExample(short, 0), ProbeExample(long, 1)], "classification", torch.float64)
    with torch.no_grad():
        a = model(alone.feats, alone.lengths)[0]
        b = model(mixed.feats, mixed.lengths)[0]
    torch.testing.assert_close(a, b)


# masked loss


def test_masked_mse_examples():
    target = np.array([1.0, 2.0, 3.0, 4.0])
    voiced = np.array([True, False, True, False])
    garbage = np.where(voiced, target, 1e6)
    assert masked_mse(garbage, target, voiced) == 0.0
    assert masked_mse(target + 1, target, voiced) == 1.0
    assert masked_mse(target, target, np.zeros(4, bool)) is NO_VOICED_FRAMES
    track = ProsodyTrack("pitch", np.where(voiced, target, 0.0), voiced, 10.0)
    assert masked_mse(garbage, track) == 0.0
    with pytest.raises(ValueError):
        masked_mse(np.zeros(3), target, voiced)


def test_all_unvoiced_utterance_leaves_batch_loss():
    pred = torch.tensor([[1.0, 2.0, 3.0], [9.0, 9.0, 9.0]])
    tgt = torch.tensor([[0.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    m = torch.tensor([[True, True, False], [False, False, False]])
    assert regression_loss(pred, tgt, m).item() == pytest.approx(0.5)
    assert regression_loss(pred[1:], tgt[1:], m[1:]) is None


@given(st.integers(0, 10_000))
@settings(max_examples=40)
def test_unvoiced_perturbation_changes_nothing(seed):
    rng = np.random.default_rng(seed)
    B, T = rng.integers(1, 5), rng.integers(1, 30)
    pred = torch.from_numpy(rng.standard_normal((B, T)))
    tgt = torch.from_numpy(rng.standard_normal((B, T)))
    mask = torch.from_numpy(rng.random((B, T)) < 0.5)
    base = regression_loss(pred, tgt, mask)
    noisy = torch.where(mask, pred, pred + torch.from_numpy(rng.standard_normal((B, T)) * 1e3))
    again = regression_loss(noisy, tgt, mask)
    if base is None:
        assert again is None
    else:
        assert (again - base).item() == 0.0


# gradient check


def _instance(seed):
    rng = np.random.default_rng(seed)
    L, D = rng.integers(2, 6), rng.integers(1, 5)
    exs = []
    for _ in range(3):
        T = rng.integers(3, 9)
        mask = rng.random(T) < 0.7
        mask[0] = True
        exs.append(ProbeExample(rng.standard_normal((L, T, D)), rng.standard_normal(T), mask))
    model = ProbeModel(L, D, 1, "regression").double()
    with torch.no_grad():
        model.raw_weights.copy_(torch.from_numpy(rng.standard_normal(L)))
        model.head.weight.copy_(torch.from_numpy(rng.standard_normal((1, D))))
    return model, collate(exs, "regression", torch.float64)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_check(seed):
    model, batch = _instance(seed)
    loss = batch_loss(model, batch)
    loss.backward()
    analytic = model.raw_weights.grad.clone()
    eps = 1e-6
    numeric = torch.zeros_like(analytic)
    with torch.no_grad():
        for i in range(len(analytic)):
            model.raw_weights[i] += eps
            up = batch_loss(model, batch).item()
            model.raw_weights[i] -= 2 * eps
            down = batch_loss(model, batch).item()
            model.raw_weights[i] += eps
            numeric[i] = (up - down) / (2 * eps)
    rel = (analytic - numeric).norm() / max(analytic.norm(), numeric.norm(), 1e-12)
    assert rel < 1e-4


# training


def _planted_classification(seed=0, n=120, L=6, D=8, layer=3):
    rng = np.random.default_rng(seed)
    exs = []
    for i in range(n):
        label = i % 2
        T = rng.integers(10, 20)
        x = rng.standard_normal((L, T, D))
        x[layer, :, 0] += 2.0 * (2 * label - 1)
        exs.append(ProbeExample(x.astype(np.float32), label))
    a, b = 2 * n // 3, 5 * n // 6
    return TaskData(exs[:a], exs[a:b], exs[b:], "classification", "accuracy", 2, "PP")


def test_planted_layer_classification():
    data = _planted_classification()
    # least-squares oracle on the planted layer alone separates the classes
    X = np.stack([ex.features[3].mean(0) for ex in data.train])
    y = np.array([2 * ex.target - 1 for ex in data.train], float)
    coef, *_ = np.linalg.lstsq(np.c_[X, np.ones(len(X))], y, rcond=None)
    Xt = np.stack([ex.features[3].mean(0) for ex in data.test])
    oracle_acc = np.mean((np.c_[Xt, np.ones(len(Xt))] @ coef > 0) == np.array([ex.target for ex in data.test]))
    assert oracle_acc > 0.95

    probe = train_probe(data, ProbeConfig(learning_rate=1e-2, train_steps=400))
    assert probe.evaluate(data.test) > 0.95
    assert int(np.argmax(probe.layer_weights.normalized())) == 3


def test_step_budgets():
    assert ProbeConfig.for_task("SarD").train_steps == SARD_STEPS == 3000
    assert ProbeConfig.for_task("PP").train_steps == DEFAULT_STEPS == 50000


def test_config_validation():
    with pytest.raises(ValueError):
        ProbeConfig(train_steps=0)
    with pytest.raises(ValueError):
        ProbeConfig(batch_size=0)


def test_seeded_determinism():
    data = _planted_classification(n=40)
    a = train_probe(data, ProbeConfig(1e-2, 50, seed=7))
    b = train_probe(data, ProbeConfig(1e-2, 50, seed=7))
    assert a.head_weight.tobytes() == b.head_weight.tobytes()
    assert a.layer_weights.raw.tobytes() == b.layer_weights.raw.tobytes()
    assert a.evaluate(data.test) == b.evaluate(data.test)


def test_lazy_features_match_in_memory():
    data = _planted_classification(n=40)
    lazy = TaskData([ProbeExample(lambda f=ex.features: f, ex.target) for ex in data.train], data.dev, data.test,
                    "classification", "accuracy", 2)
    a = train_probe(data, ProbeConfig(1e-2, 30))
    b = train_probe(lazy, ProbeConfig(1e-2, 30))
    np.testing.assert_allclose(a.head_weight, b.head_weight, atol=1e-6)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train_probe(TaskData([], [], [], "classification", "accuracy", 2), ProbeConfig(1e-2, 5))


def test_divergence_reported():
    huge = [ProbeExample(np.full((1, 4, 2), 1e30, np.float32), np.full(4, 1.0, np.float32), np.ones(4, bool))]
    data = TaskData(huge, huge, huge, "regression", "mse")
    with pytest.raises(ProbeDivergence, match="lr="):
        train_probe(data, ProbeConfig(1e-2, 5))


def test_save_load_round_trip(tmp_path):
    data = _planted_classification(n=40)
    p = train_probe(data, ProbeConfig(1e-2, 20), upstream="mock")
    q = TrainedProbe.load(p.save(tmp_path / "p.npz"))
    assert q.head_weight.tobytes() == p.head_weight.tobytes()
    assert q.config == p.config and q.upstream == "mock"
    assert q.predict(data.test) == p.predict(data.test)
    assert p.parameter_count() == 2 * 8 + 2 + 6


# learning-rate sweep


def _stub_trainer(dev_by_lr, diverge=()):
    class Stub:
        def __init__(self, lr):
            self.lr = lr
            self.config = ProbeConfig(lr, 1)

        def evaluate(self, examples):
            return dev_by_lr[self.lr]

    def fn(data, cfg, upstream=""):
        if cfg.learning_rate in diverge:
            raise ProbeDivergence("boom")
        return Stub(cfg.learning_rate)

    return fn


def _tiny_data(metric="mse"):
    ex = [ProbeExample(np.zeros((1, 2, 1)), np.zeros(2), np.ones(2, bool))]
    return TaskData(ex, ex, ex, "regression", metric)


def test_sweep_runs_five_rates():
    assert LR_SWEEP == (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    _, rows = lr_sweep(_tiny_data(), ProbeConfig(), train_fn=_stub_trainer({lr: 1.0 for lr in LR_SWEEP}))
    assert [r.lr for r in rows] == list(LR_SWEEP)


def test_sweep_skips_diverged():
    dev = {1e-2: 0.0, 1e-3: 0.5, 1e-4: 0.1, 1e-5: 0.3, 1e-6: 0.9}
    best, rows = lr_sweep(_tiny_data(), ProbeConfig(), train_fn=_stub_trainer(dev, diverge={1e-2}))
    assert best.lr == 1e-4
    assert rows[0].diverged


def test_sweep_tie_prefers_lower_rate():
    dev = {lr: 0.8 for lr in LR_SWEEP}
    best, _ = lr_sweep(_tiny_data("accuracy"), ProbeConfig(), train_fn=_stub_trainer(dev))
    assert best.lr == 1e-6


def test_sweep_all_diverged():
    with pytest.raises(ProbeDivergence):
        lr_sweep(_tiny_data(), ProbeConfig(), train_fn=_stub_trainer({}, diverge=set(LR_SWEEP)))


def test_sweep_needs_dev():
    d = _tiny_data()
    d.dev = []
    with pytest.raises(ValueError):
        lr_sweep(d, ProbeConfig())


def test_select_best_direction():
    rows = [SweepRow(1e-2, 0.9, 0.8, 1, 0), SweepRow(1e-3, 0.7, 0.9, 1, 0)]
    assert select_best(rows, "accuracy").lr == 1e-2
    assert select_best(rows, "mse").lr == 1e-3


def test_sweep_table(tmp_path):
    rows = [SweepRow(1e-2, None, None, 10, 0, True), SweepRow(1e-3, 0.5, 0.25, 10, 0)]
    lines = write_sweep_table(rows, tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["lr", "dev_metric", "test_metric", "steps", "seed"]
    assert lines[1].split("\t")[1] == "diverged"
    assert lines[2].split("\t") == ["0.001", "0.5", "0.25", "10", "0"]
