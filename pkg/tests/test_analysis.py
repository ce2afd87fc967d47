import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from prosody_probe.analysis import (
    ContributionProfile,
    IntegrationSpec,
    integrate_layers,
    integration_table,
    layer_contribution,
    mean_layer_norms,
    profile_heatmap_rows,
)
from prosody_probe.containers import LayerFeatureStack
from prosody_probe.probe import LayerWeights, ProbeConfig, ProbeExample, TaskData, TrainedProbe, train_probe
from prosody_probe.tasks import TaskResult, TaskRun


def _probe(raw, D=4, normalization="softmax"):
    return TrainedProbe(LayerWeights(np.asarray(raw, float), normalization), np.zeros((1, D), np.float32),
                        np.zeros(1, np.float32), "regression", "mse", ProbeConfig(), "ProR", "mock")


def _unit_stack(L, T, D, seed):
    x = np.random.default_rng(seed).standard_normal((L, T, D))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def test_uniform_unit_norm_twelve_layers():
    stacks = [_unit_stack(12, 9, 5, s) for s in range(3)]
    prof = layer_contribution(stacks, _probe(np.zeros(12), D=5))
    np.testing.assert_allclose(prof.c, np.full(12, 1 / 12), rtol=1e-6)


def test_norm_reduction_frames_then_utterances():
    a = np.zeros((1, 2, 1))
    a[0, :, 0] = [3.0, 1.0]  # mean frame norm 2
    b = np.full((1, 4, 1), 5.0)  # mean frame norm 5
    np.testing.assert_allclose(mean_layer_norms([a, b]), [3.5])


def test_identity_is_exact_and_stored():
    stacks = [np.random.default_rng(s).standard_normal((4, 6, 3)) for s in range(2)]
    prof = layer_contribution(stacks, _probe([0.1, -1.0, 2.0, 0.3], D=3))
    assert np.array_equal(prof.c, prof.norms * prof.weights)
    assert prof.consistent()
    assert abs(prof.weights.sum() - 1) < 1e-12


@given(hnp.arrays(np.float64, st.integers(1, 16), elements=st.floats(-5, 5)), st.integers(0, 100))
@settings(max_examples=50, deadline=None)
def test_identity_on_random_profiles(raw, seed):
    L = len(raw)
    stacks = [np.random.default_rng(seed + i).standard_normal((L, 5, 3)) for i in range(2)]
    prof = layer_contribution(stacks, _probe(raw, D=3))
    assert prof.consistent()
    assert np.all(prof.c >= 0)
    back = ContributionProfile(**prof.to_dict())
    assert back.consistent() and np.array_equal(back.c, prof.c)


@given(st.integers(0, 5), st.integers(-6, 6), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_scale_covariance_power_of_two(j, exp, seed):
    k = 2.0**exp
    stacks = [np.random.default_rng(seed + i).standard_normal((6, 7, 4)) for i in range(3)]
    scaled = [s.copy() for s in stacks]
    for s in scaled:
        s[j] *= k
    probe = _probe(np.random.default_rng(seed).standard_normal(6))
    a, b = layer_contribution(stacks, probe), layer_contribution(scaled, probe)
    assert b.norms[j] == k * a.norms[j]
    assert b.c[j] == k * a.c[j]
    others = [i for i in range(6) if i != j]
    assert np.array_equal(a.c[others], b.c[others])


@given(st.floats(0.01, 100.0), st.integers(0, 5))
@settings(max_examples=40, deadline=None)
def test_scale_covariance_general(k, j):
    stacks = [np.random.default_rng(i).standard_normal((6, 7, 4)) for i in range(3)]
    scaled = [s.copy() for s in stacks]
    for s in scaled:
        s[j] *= k
    probe = _probe(np.zeros(6))
    a, b = layer_contribution(stacks, probe), layer_contribution(scaled, probe)
    assert b.c[j] == pytest.approx(k * a.c[j], rel=1e-12)


def test_raw_weight_mode():
    stacks = [np.ones((3, 2, 1))]
    prof = layer_contribution(stacks, _probe([1.0, 2.0, 3.0], D=1), weight_mode="raw")
    np.testing.assert_allclose(prof.c, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        layer_contribution(stacks, _probe([1.0, 2.0, 3.0], D=1), weight_mode="other")


def test_layer_stack_objects_accepted():
    st_ = LayerFeatureStack(np.ones((2, 3, 4)), 20.0)
    np.testing.assert_allclose(layer_contribution([st_], _probe([0.0, 0.0])).c, [1.0, 1.0])


def test_empty_test_set():
    with pytest.raises(ValueError):
        layer_contribution([], _probe([0.0, 0.0]))


def test_layer_count_mismatch():
    with pytest.raises(ValueError):
        layer_contribution([np.ones((3, 2, 4))], _probe([0.0, 0.0]))


def test_profile_save_load(tmp_path):
    prof = ContributionProfile("m", "ProR", [0.1, 0.5, 0.2], [1.0, 1.0, 1.0], [0.1, 0.5, 0.2])
    back = ContributionProfile.load(prof.save(tmp_path / "p.json"))
    assert back.best_layer == 1 and np.array_equal(back.c, prof.c)


def test_heatmap_rows_normalized():
    ps = [ContributionProfile("a", "t", [1.0, 2.0], [1, 1], [1, 2]),
          ContributionProfile("b", "t", [3.0, 1.0, 0.5], [1, 1, 1], [3, 1, 0.5])]
    names, mat = profile_heatmap_rows(ps)
    assert names == ["a", "b"]
    np.testing.assert_allclose(mat[0, :2], [0.5, 1.0])
    assert np.isnan(mat[0, 2]) and mat[1].max() == 1.0


# integration


def test_spec_from_best_interior():
    spec = IntegrationSpec.from_best(8, 13)
    assert spec.layer_sets == ((0, 1, 8), (7, 8, 9))


def test_spec_from_best_edges():
    assert IntegrationSpec.from_best(12, 13).layer_sets == ((0, 1, 12), (10, 11, 12))
    assert IntegrationSpec.from_best(0, 13).layer_sets == ((0, 1, 0), (0, 1, 2))


def test_spec_from_profile():
    prof = ContributionProfile("m", "t", [0, 0, 0, 0, 0.9, 0.1], np.ones(6), [0, 0, 0, 0, 0.9, 0.1])
    assert IntegrationSpec.from_profile(prof).best_layer == 4


def test_spec_validation():
    with pytest.raises(ValueError):
        IntegrationSpec(((0, 1), (2, 3, 4)), 3)
    with pytest.raises(IndexError):
        IntegrationSpec(((0, 1, 13), (11, 12, 13)), 13).validate(13)
    with pytest.raises(IndexError):
        IntegrationSpec.from_best(13, 13)


def _copied_layer_data(seed=0):
    rng = np.random.default_rng(seed)
    exs = []
    for i in range(30):
        x = rng.standard_normal((1, 12, 3))
        exs.append(ProbeExample(np.repeat(x, 5, axis=0).astype(np.float32), i % 2))
    return TaskData(exs[:20], exs[20:25], exs[25:], "classification", "accuracy", 2, "PP")


def test_identical_layers_give_identical_metrics():
    data = _copied_layer_data()

    def run_fn(layers):
        def sel(split):
            return [ProbeExample(LayerFeatureStack(ex.features, 20.0).select(layers).layers, ex.target)
                    for ex in split]

        d = TaskData(sel(data.train), sel(data.dev), sel(data.test), "classification", "accuracy", 2, "PP")
        probe = train_probe(d, ProbeConfig(1e-2, 50))
        return TaskRun(TaskResult("PP", "mock", "accuracy", probe.evaluate(d.test), layers=layers), probe)

    spec = IntegrationSpec.from_best(3, 5)
    a, b = integrate_layers(run_fn, spec, 5)
    assert a.result.value == b.result.value
    assert a.probe.input_dim == 9  # three layers of D=3 concatenated
    table = integration_table((a, b), spec).splitlines()
    assert table[0].split("\t")[-2:] == ["(0, 1, 3)", "(2, 3, 4)"]
    assert len(table) == 2


def test_unequal_head_sizes_detected():
    def run_fn(layers):
        D = 4 if layers[0] == 0 else 5
        p = _probe(np.zeros(1), D=D)
        return TaskRun(TaskResult("PP", "m", "accuracy", 0.5), p)

    with pytest.raises(AssertionError):
        integrate_layers(run_fn, IntegrationSpec.from_best(4, 6), 6)


def test_integration_out_of_range():
    with pytest.raises(IndexError):
        integrate_layers(lambda layers: None, IntegrationSpec(((0, 1, 7), (5, 6, 7)), 7), 6)
