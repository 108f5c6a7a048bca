import datetime as dt

import numpy as np
import pytest

from fixtures import head_only_toy
from tgf.autodiff import ParameterStore
from tgf.errors import DegenerateSplit, DivergenceDetected, InsufficientHistory
from tgf.features import FeatureTensor
from tgf.model import A3TGCN
from tgf.synthetic import SyntheticSpec, business_days, synthetic_panel
from tgf.train import (
    Adam, OptimSettings, Sample, SplitSpec, chrono_split, config_id, dataset_loss, default_grid,
    learning_curve, make_samples, prepare, run_grid, run_single, train_loop, version_label,
)


def index_tensor(n_nodes=2, T=10):
    """Features and targets equal to the timestamp index, so windows can be read off directly."""
    values = np.broadcast_to(np.arange(T, dtype=float), (n_nodes, 8, T)).copy()
    dates = business_days(dt.date(2021, 1, 4), T)
    return FeatureTensor(values, [f"N{i}" for i in range(n_nodes)], dates), values[:, 0, :].copy()


def test_sample_counts_and_windows_by_enumeration():
    tensor, targets = index_tensor()
    samples = make_samples(tensor, targets, 5, 1)
    assert len(samples) == 5
    for s, t in zip(samples, range(5, 10)):
        assert s.x[:, 0, 0].tolist() == list(range(t - 5, t))
        assert s.y[:, 0].tolist() == [t, t]
        assert s.input_start == tensor.dates[t - 5] and s.target_date == tensor.dates[t]
    three = make_samples(tensor, targets, 3, 3)
    assert [s.y[0, 0] for s in three] == [5.0, 6.0, 7.0, 8.0, 9.0]
    path = make_samples(tensor, targets, 3, 3, target="path")
    assert path[0].y[0].tolist() == [3.0, 4.0, 5.0]
    with pytest.raises(InsufficientHistory):
        make_samples(tensor, targets, 5, 8)


def test_inputs_strictly_precede_targets():
    tensor, targets = index_tensor(T=30)
    for s in make_samples(tensor, targets, 4, 2, target="path"):
        assert s.x[:, 0, 0].max() < min(s.y[0])


def test_split_boundary_on_twenty_day_axis_by_hand():
    tensor, targets = index_tensor(T=20)
    boundary = SplitSpec(0.9).boundary(tensor.dates)
    assert boundary == tensor.dates[17]
    samples = make_samples(tensor, targets, 5, 1)  # anchors 5..19, each targets its own index
    # Hand enumeration: targets 5..17 are on or before the boundary; anchors 18 and 19
    # target the test range but their inputs start on days 13 and 14, so both are dropped.
    train = [s.anchor for s in samples if s.target_date <= boundary]
    straddling = [s.anchor for s in samples if s.target_date > boundary and s.input_start <= boundary]
    assert train == list(range(5, 18)) and straddling == [18, 19]
    with pytest.raises(DegenerateSplit):  # nothing is left for testing on 20 days
        chrono_split(samples, boundary)
    tensor, targets = index_tensor(T=40)
    boundary = SplitSpec(0.9).boundary(tensor.dates)  # index 35
    train, test = chrono_split(make_samples(tensor, targets, 2, 1), boundary)
    assert [s.anchor for s in train] == list(range(2, 36))
    assert [s.anchor for s in test] == [38, 39]  # anchors 36 and 37 straddle and are dropped


def test_split_degenerate():
    tensor, targets = index_tensor(T=20)
    samples = make_samples(tensor, targets, 5, 1)
    with pytest.raises(DegenerateSplit):
        chrono_split(samples, tensor.dates[-1])


def test_hundred_samples_split_roughly_ninety_ten():
    tensor, targets = index_tensor(T=101)
    samples = make_samples(tensor, targets, 1, 1)
    train, test = chrono_split(samples, SplitSpec(0.9).boundary(tensor.dates))
    assert len(train) == 89 and len(test) == 10  # anchor 90 straddles the boundary


def test_grid_ids_and_labels():
    assert len(default_grid()) == 8
    assert [config_id(*g) for g in default_grid()][0] == "5SL1D"
    assert version_label(5, 1) == "Version 1 (5SL1D)"
    assert version_label(30, 8) == "Version 8 (30SL8D)"


def test_adam_first_step_is_learning_rate_sized():
    store = ParameterStore()
    store.add("w", np.array([[1.0, -2.0]]))
    store.grads["w"][:] = [[0.3, -40.0]]
    opt = Adam(store, OptimSettings(weight_decay=0.0))
    opt.step()
    np.testing.assert_allclose(store["w"], [[1.0 - 0.005, -2.0 + 0.005]], atol=1e-9)


def test_weight_decay_is_folded_into_gradient():
    store = ParameterStore()
    store.add("w", np.array([[2.0]]))
    opt = Adam(store, OptimSettings(weight_decay=0.5))
    opt.step()  # gradient is 0, decay term 1.0 drives a full first step
    assert store["w"][0, 0] == pytest.approx(2.0 - 0.005, abs=1e-9)


def test_zero_learning_rate_leaves_parameters_bit_identical():
    cfg, a_hat, samples = head_only_toy(0, n_samples=40)
    model = A3TGCN(cfg, a_hat)
    before = model.store.content_hash()
    train_loop(model, samples, OptimSettings(learning_rate=0.0, epochs=2))
    assert model.store.content_hash() == before


def test_training_is_deterministic_and_reduces_loss():
    cfg, a_hat, samples = head_only_toy(1, n_samples=96)
    curves, hashes = [], []
    for _ in range(2):
        model = A3TGCN(cfg, a_hat)
        initial = dataset_loss(model, samples)
        curves.append(train_loop(model, samples, OptimSettings(epochs=3)))
        hashes.append(model.store.content_hash())
        assert dataset_loss(model, samples) < initial
    assert curves[0] == curves[1] and hashes[0] == hashes[1]
    assert len(curves[0]) == 3


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_divergence_is_detected():
    cfg, a_hat, samples = head_only_toy(2, n_samples=8)
    bad = [Sample(s.x, np.full_like(s.y, 1e200), s.anchor, s.input_start, s.target_dates) for s in samples]
    with pytest.raises(DivergenceDetected):
        train_loop(A3TGCN(cfg, a_hat), bad, OptimSettings(epochs=1))


SMALL = SyntheticSpec(n_nodes=5, n_steps=160)


def test_test_range_sentinel_does_not_touch_training():
    panel = synthetic_panel(0, SMALL)
    settings = OptimSettings(epochs=1)
    base = run_single(prepare(panel), 5, 1, settings)
    spiked = synthetic_panel(0, SMALL)
    spiked.closes[:, -5:] *= 50.0  # anomaly inside the test range only
    other = run_single(prepare(spiked), 5, 1, settings)
    assert base.store.content_hash() == other.store.content_hash()
    assert base.loss_curve == other.loss_curve
    assert base.metrics.mae != other.metrics.mae


def test_run_grid_records_failures_and_continues():
    panel = synthetic_panel(1, SyntheticSpec(n_nodes=4, n_steps=100))
    records = run_grid(panel, grid=[(5, 1), (30, 8)], settings=OptimSettings(epochs=1))
    assert [r.config_id for r in records] == ["5SL1D", "30SL8D"]
    assert records[0].ok and records[0].metrics.n == records[0].n_test * 4
    assert not records[1].ok and records[1].error_kind == "DegenerateSplit"


def test_learning_curve_protocol():
    prep = prepare(synthetic_panel(2, SMALL))
    one = learning_curve(prep, 5, 1, OptimSettings(), max_epochs=1)
    assert len(one.val_mae) == 1 and one.best_epoch == 1
    curve = learning_curve(prep, 5, 1, OptimSettings(), max_epochs=30, patience=3)
    assert curve.best_epoch == int(np.argmin(curve.val_mae)) + 1
    assert len(curve.val_mae) <= 30
    if len(curve.val_mae) < 30:
        assert len(curve.val_mae) - curve.best_epoch == 3
