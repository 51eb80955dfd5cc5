import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeplstm.checkpoint import encode_checkpoint
from deeplstm.cooccurrence import RegConfig
from deeplstm.network import (
    LayerSpec,
    Network,
    NetworkConfig,
    SequenceSample,
    loss_and_gradients,
    network_penalty_subgradient,
    total_loss,
)
from deeplstm.training import (
    SgdConfig,
    TrainingDiverged,
    assign_folds,
    check_gradients,
    cross_validate,
    evaluate,
    sgd_update,
    train,
)


def small_config(dropout=True, C=2):
    layers = [LayerSpec("blstm", 3), LayerSpec("feedforward", 3), LayerSpec("blstm", 2, dropout)]
    return NetworkConfig(input_dim=3, num_classes=C, layers=layers, init_scale=0.3)


def toy_dataset(n=12, C=2, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for k in range(n):
        label = k % C
        T = int(rng.integers(3, 7))
        frames = rng.normal(size=(T, 3)) * 0.3 + (label - (C - 1) / 2)
        data.append(SequenceSample(frames, label))
    return data


def snapshot(net):
    return {n: a.copy() for n, a in net.named_parameters()}


# -- sgd_update ----------------------------------------------------------------

def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    v = {}
    sgd_update(p, {"w": np.zeros(2)}, v, SgdConfig())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_plain_step():
    p = {"w": np.array([0.0])}
    sgd_update(p, {"w": np.array([1.0])}, {}, SgdConfig(learning_rate=0.1, momentum=0.0))
    assert p["w"][0] == -0.1


def test_clipped_step_norm():
    p = {"a": np.zeros(2), "b": np.zeros(1)}
    g = {"a": np.array([6.0, 0.0]), "b": np.array([8.0])}  # global norm 10
    applied = sgd_update(p, g, {}, SgdConfig(learning_rate=0.5, momentum=0.0, clip_norm=1.0))
    step = math.sqrt(float((p["a"] ** 2).sum() + (p["b"] ** 2).sum()))
    assert abs(step - 0.5) < 1e-15 and abs(applied - 1.0) < 1e-15


def test_momentum_accumulates():
    p = {"w": np.array([0.0])}
    v = {}
    cfg = SgdConfig(learning_rate=1.0, momentum=0.5, clip_norm=None)
    sgd_update(p, {"w": np.array([1.0])}, v, cfg)
    sgd_update(p, {"w": np.array([1.0])}, v, cfg)
    assert p["w"][0] == -1.0 - 1.5


def test_non_finite_gradient_names_tensor():
    with pytest.raises(FloatingPointError, match="L0.fwd.W_xi"):
        sgd_update({"L0.fwd.W_xi": np.zeros(2)}, {"L0.fwd.W_xi": np.array([np.nan, 0.0])}, {}, SgdConfig())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 10), st.floats(1e-3, 1e3))
def test_clipping_safety(seed, clip, scale):
    rng = np.random.default_rng(seed)
    p = {"a": np.zeros(5), "b": np.zeros((2, 3))}
    g = {k: rng.normal(size=a.shape) * scale for k, a in p.items()}
    applied = sgd_update(p, g, {}, SgdConfig(clip_norm=clip))
    assert applied <= clip + 1e-9


def test_sgd_config_ranges():
    for bad in ({"momentum": 1.0}, {"learning_rate": -1}, {"clip_norm": 0}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            SgdConfig(**bad)


# -- train ------------------------------------------------------------------------

def test_zero_epochs():
    net = Network.initialize(small_config(), np.random.default_rng(0))
    before = snapshot(net)
    report = train(net, toy_dataset(), SgdConfig(epochs=0))
    assert report.epochs == [] and report.final is None
    for n, a in net.named_parameters():
        np.testing.assert_array_equal(a, before[n])


def test_zero_learning_rate_keeps_eval_loss():
    net = Network.initialize(small_config(), np.random.default_rng(1))
    data = toy_dataset()
    reg = RegConfig(1e-3, 1e-3, (0,), (3,))
    start = total_loss(net, data, reg)
    report = train(net, data, SgdConfig(learning_rate=0.0, epochs=3), reg)
    assert len(report.epochs) == 3
    assert total_loss(net, data, reg) == start


def test_single_step_is_vanilla_sgd():
    net = Network.initialize(small_config(dropout=False), np.random.default_rng(2))
    sample = toy_dataset(1)[0]
    reg = RegConfig(1e-3, 2e-3, (0, 1), (3, 3))
    _, grads = loss_and_gradients(net, sample)
    for name, g in network_penalty_subgradient(net, reg).items():
        grads[name] = grads[name] + g
    expected = {n: a - 0.05 * grads[n] for n, a in net.named_parameters()}
    train(net, [sample], SgdConfig(learning_rate=0.05, momentum=0.0, clip_norm=None, batch_size=1,
                                   epochs=1, shuffle=False), reg)
    for n, a in net.named_parameters():
        np.testing.assert_array_equal(a, expected[n])


def run(workers, seed=3, path=None):
    net = Network.initialize(small_config(), np.random.default_rng(seed))
    report = train(net, toy_dataset(), SgdConfig(epochs=3, batch_size=4, seed=seed),
                   RegConfig(1e-3, 1e-3, (0,), (3,)), val=toy_dataset(4, seed=9),
                   metrics_path=path, workers=workers)
    return [r.metrics() for r in report.epochs], encode_checkpoint(net)


def test_training_is_deterministic_across_worker_counts(tmp_path):
    m1, c1 = run(1, path=tmp_path / "a.jsonl")
    m2, c2 = run(1, path=tmp_path / "b.jsonl")
    m3, c3 = run(3, path=tmp_path / "c.jsonl")
    assert m1 == m2 == m3
    assert c1 == c2 == c3
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "c.jsonl").read_bytes()
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2, 3]
    assert set(json.loads(lines[0])) == {"epoch", "train_loss", "train_accuracy", "val_accuracy"}


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_aborts():
    net = Network.initialize(small_config(), np.random.default_rng(4))
    net.classifier.b[0] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(net, toy_dataset(), SgdConfig(epochs=1))


def test_train_rejects_bad_labels():
    net = Network.initialize(small_config(), np.random.default_rng(5))
    with pytest.raises(ValueError):
        train(net, [SequenceSample(np.zeros((2, 3)), 5)], SgdConfig(epochs=1))
    with pytest.raises(ValueError):
        train(net, [], SgdConfig(epochs=1))


def test_training_learns_toy_task():
    net = Network.initialize(small_config(), np.random.default_rng(6))
    data = toy_dataset(16)
    report = train(net, data, SgdConfig(learning_rate=0.05, epochs=20, batch_size=4))
    assert report.final.train_accuracy == 1.0


# -- gradient checking -----------------------------------------------------------

def test_linear_toy_gradient_check():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4))
    params = {"W": rng.normal(size=(3, 4))}
    report = check_gradients(params, lambda: float((A * params["W"]).sum()), {"W": A})
    assert report["W"] < 1e-9


def test_check_gradients_flags_wrong_gradient():
    params = {"w": np.array([1.0, 2.0])}
    report = check_gradients(params, lambda: float((params["w"] ** 2).sum()), {"w": np.array([2.0, 5.0])})
    assert report["w"] > 0.1


# -- evaluation --------------------------------------------------------------------

def constant_net(C, winner):
    net = Network.initialize(small_config(dropout=False, C=C), np.random.default_rng(0))
    net.classifier.W_fwd[...] = 0
    net.classifier.W_bwd[...] = 0
    net.classifier.b[...] = 0
    net.classifier.b[winner] = 1.0
    return net


def test_evaluate_constant_predictor():
    data = toy_dataset(8, C=4)
    acc, conf = evaluate(constant_net(4, 2), data)
    assert acc == 0.25
    np.testing.assert_array_equal(conf.sum(axis=1), [2, 2, 2, 2])
    np.testing.assert_array_equal(conf[:, 2], [2, 2, 2, 2])


def test_evaluate_all_correct():
    data = [s for s in toy_dataset(6, C=2) if s.label == 1]
    acc, conf = evaluate(constant_net(2, 1), data)
    assert acc == 1.0
    np.testing.assert_array_equal(conf, np.diag([0, 3]))
    with pytest.raises(ValueError):
        evaluate(constant_net(2, 1), [])


# -- cross-validation --------------------------------------------------------------

@given(st.integers(2, 60), st.data())
def test_fold_partition(n, data):
    folds = data.draw(st.integers(2, n))
    a = assign_folds(n, folds, seed=data.draw(st.integers(0, 100)))
    assert sorted(set(a.tolist())) == list(range(folds))
    counts = np.bincount(a, minlength=folds)
    assert counts.sum() == n and counts.max() - counts.min() <= 1


def test_leave_one_out():
    a = assign_folds(7, 7)
    assert sorted(a.tolist()) == list(range(7))
    with pytest.raises(ValueError):
        assign_folds(5, 1)


def test_manifest_fold_ids():
    np.testing.assert_array_equal(assign_folds(4, 2, fold_ids=[3, 1, 3, 1]), [1, 0, 1, 0])
    with pytest.raises(ValueError):
        assign_folds(4, 3, fold_ids=[0, 1, 0, 1])


def test_identical_folds_give_identical_accuracies():
    base = toy_dataset(4)
    data, ids = [], []
    for s in base:
        for f in range(3):
            data.append(s)
            ids.append(f)
    res = cross_validate(data, 3, small_config(), SgdConfig(epochs=2, batch_size=4), fold_ids=ids)
    assert res.per_fold[0] == res.per_fold[1] == res.per_fold[2]
    assert res.mean == res.per_fold[0]


def test_missing_class_warns():
    data = toy_dataset(6)
    ids = [0 if s.label == 0 else 1 for s in data]
    with pytest.warns(UserWarning, match="absent"):
        cross_validate(data, 2, small_config(), SgdConfig(epochs=1), fold_ids=ids)
