"""Trainer tests: losses, Adam, offline training, checkpoints, online loop."""

import numpy as np
import pytest

from tripcast import autodiff as ad
from tripcast.checkpoint import load_model
from tripcast.generator import Scenario, generate
from tripcast.model import ModelConfig, TripCastModel
from tripcast.network import RoadNetwork, RoadNode
from tripcast.training import (Adam, OnlineConfig, PretrainConfig, TrafficDataset,
                               TrainConfig, TrainingError, affected_mask_from_ids,
                               mse_loss, offline_train, online_update,
                               pretrain_route, route_fit_loss, weighted_event_loss)
from tripcast.tripgraph import graph_from_trajectories


def two_path_net():
    nodes = [
        RoadNode(0, "segment", 100.0, 10.0, 10.0, (0.0, 0.0)),
        RoadNode(1, "segment", 100.0, 4.0, 10.0, (100.0, 50.0)),
        RoadNode(2, "segment", 200.0, 10.0, 10.0, (100.0, -50.0)),
        RoadNode(3, "segment", 100.0, 10.0, 10.0, (200.0, 0.0)),
    ]
    return RoadNetwork(nodes=nodes, edges=[(0, 1), (0, 2), (1, 3), (2, 3)])


def tiny_config(**overrides):
    base = dict(tau=2, horizons=2, gru_hidden=2, gru_layers=1, att_heads=1, att_dim=3,
                att_out=3, route_mlp_depth=2, route_mlp_hidden=4, temporal_hidden=6,
                temporal_layers=1, head_depth=1, head_hidden=4, demand_scale=5.0, seed=1)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_setup(horizon=40, seed=2, rates=5.0, **config_overrides):
    net = two_path_net()
    sc = Scenario(net=net, od_rates={(0, 3): [rates] * horizon},
                  candidate_paths={(0, 3): [[0, 1, 3], [0, 2, 3]]},
                  logit_theta=0.05, horizon=horizon, seed=seed,
                  interval_seconds=120.0, deterministic=False)
    gt = generate(sc)
    dataset = TrafficDataset.from_groundtruth(gt)
    graph, _ = graph_from_trajectories(gt.trajectories, net, min_support=2)
    model = TripCastModel(tiny_config(**config_overrides), graph, net)
    return model, dataset, gt


# --- losses ---------------------------------------------------------------------

def test_mse_loss_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert mse_loss([0.0, 0.0], [3.0, 4.0]).item() == pytest.approx(12.5)


def test_mse_loss_matches_two_pass_reference():
    rng = np.random.default_rng(3)
    y, yhat = rng.normal(size=17), rng.normal(size=17)
    total = 0.0
    for a, b in zip(y, yhat):
        total += (a - b) ** 2
    assert mse_loss(y, yhat).item() == pytest.approx(total / 17, rel=1e-12)


def test_weighted_event_loss_direct_substitution():
    # |V|=2, L=1, both errors 1, one affected, beta=10 -> (10 + 1) / 2
    y = np.array([[0.0, 0.0]])
    yhat = np.array([[1.0, 1.0]])
    mask = np.array([[True, False]])
    assert weighted_event_loss(y, yhat, mask, beta=10.0).item() == pytest.approx(5.5)


def test_weighted_event_loss_degenerate_cases():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(3, 4))
    yhat = rng.normal(size=(3, 4))
    empty = np.zeros((3, 4), dtype=bool)
    some = rng.random((3, 4)) > 0.5
    plain = mse_loss(y.reshape(-1), yhat.reshape(-1)).item()
    assert weighted_event_loss(y, yhat, empty, beta=10.0).item() == pytest.approx(plain)
    assert weighted_event_loss(y, yhat, some, beta=1.0).item() == pytest.approx(plain)


def test_affected_mask_rejects_unknown_ids():
    mask = affected_mask_from_ids([0, 2], num_segments=3, horizons=2)
    assert mask[:, 0].all() and mask[:, 2].all() and not mask[:, 1].any()
    with pytest.raises(TrainingError):
        affected_mask_from_ids([5], num_segments=3, horizons=2)


# --- Adam -------------------------------------------------------------------------

def test_adam_updates_exactly_the_touched_params():
    x = ad.param(np.array(3.0), "x")
    w = ad.param(np.ones(4), "w")
    params = {"x": x, "w": w}
    grads = ad.backward(ad.mul(x, x), params.values())
    opt = Adam(params, lr=1e-2, clip_norm=None)
    before_x, before_w = x.values.copy(), w.values.copy()
    opt.step(grads)
    assert not np.array_equal(x.values, before_x)
    np.testing.assert_array_equal(w.values, before_w)


def test_adam_zero_lr_is_identity():
    x = ad.param(np.array(2.0), "x")
    params = {"x": x}
    grads = ad.backward(ad.mul(x, x), params.values())
    Adam(params, lr=0.0).step(grads)
    assert x.values == 2.0


# --- checkpoints --------------------------------------------------------------------

def test_checkpoint_round_trip_bit_identical_forecast(tmp_path):
    model, dataset, _ = tiny_setup()
    window = [dataset.features(t) for t in range(model.config.tau)]
    before = model.forecast(window)
    path = tmp_path / "model.ckpt"
    model.save(path, metadata={"seed": 1, "training_step": 0})
    loaded = load_model(path)
    after = loaded.forecast([dataset.features(t) for t in range(model.config.tau)])
    assert before.tobytes() == after.tobytes()


def test_checkpoint_files_byte_identical(tmp_path):
    model, _, _ = tiny_setup()
    model.save(tmp_path / "a.ckpt", metadata={"seed": 1})
    model.save(tmp_path / "b.ckpt", metadata={"seed": 1})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


# --- route pretraining ----------------------------------------------------------------

def test_pretrain_loss_lower_at_true_shares():
    # OD demand 10 split (0.8, 0.2): predicted volumes at the true shares hit
    # the labels exactly, the uniform guess does not
    labels = np.array([8.0, 2.0])
    at_true = mse_loss(labels, 10.0 * np.array([0.8, 0.2])).item()
    at_uniform = mse_loss(labels, 10.0 * np.array([0.5, 0.5])).item()
    assert at_true == pytest.approx(0.0)
    assert at_uniform > at_true


def test_pretrain_reduces_loss_on_two_path_toy():
    model, dataset, _ = tiny_setup(horizon=60, rates=8.0)
    eval_intervals = range(0, 20)
    before = route_fit_loss(model, dataset, eval_intervals)
    pretrain_route(model, dataset, PretrainConfig(steps=200, lr=3e-3, seed=5))
    after = route_fit_loss(model, dataset, eval_intervals)
    assert after < before


def test_pretrain_single_path_degenerate_warns():
    net = two_path_net()
    sc = Scenario(net=net, od_rates={(0, 3): [4.0] * 30},
                  candidate_paths={(0, 3): [[0, 1, 3]]}, logit_theta=0.05,
                  horizon=30, seed=3, interval_seconds=120.0)
    gt = generate(sc)
    dataset = TrafficDataset.from_groundtruth(gt)
    graph, _ = graph_from_trajectories(gt.trajectories, net, min_support=2)
    model = TripCastModel(tiny_config(), graph, net)
    with pytest.warns(UserWarning, match="single path"):
        pretrain_route(model, dataset, PretrainConfig(steps=2, seed=0))


# --- offline training --------------------------------------------------------------------

def test_offline_zero_lr_leaves_params_unchanged():
    model, dataset, _ = tiny_setup()
    before = model.snapshot()
    offline_train(model, dataset, TrainConfig(steps=3, lr=0.0, val_every=100, seed=0,
                                              warm_start_output=False))
    after = model.snapshot()
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


def test_offline_converges_on_constant_volumes():
    model, dataset, _ = tiny_setup(horizon=42)
    dataset.volumes = np.full_like(dataset.volumes, 3.0)
    dataset.speeds = np.full_like(dataset.speeds, 8.0)
    result = offline_train(model, dataset,
                           TrainConfig(steps=500, batch_size=4, lr=3e-3,
                                       val_every=1000, seed=1))
    assert result.curve[-1]["train_loss"] < 0.05


def test_offline_resume_reproduces_next_step_loss(tmp_path):
    config = TrainConfig(steps=6, batch_size=3, lr=1e-3, val_every=100, seed=9)
    model_a, dataset, _ = tiny_setup(seed=4)
    full = offline_train(model_a, dataset, config)

    model_b, _, _ = tiny_setup(seed=4)
    offline_train(model_b, dataset, TrainConfig(steps=5, batch_size=3, lr=1e-3,
                                                val_every=100, seed=9))
    model_b.save(tmp_path / "mid.ckpt", metadata={"training_step": 5})
    resumed_model = load_model(tmp_path / "mid.ckpt")
    resumed = offline_train(resumed_model, dataset,
                            TrainConfig(steps=1, batch_size=3, lr=1e-3,
                                        val_every=100, seed=9), start_step=5)
    assert resumed.curve[0]["train_loss"] == pytest.approx(
        full.curve[5]["train_loss"], rel=1e-12)


# --- online loop ------------------------------------------------------------------------

def test_online_no_updates_when_phi_exceeds_stream():
    model, dataset, _ = tiny_setup(horizon=24)
    stream = [dataset.features(t) for t in range(20)]
    result = online_update(model, stream, OnlineConfig(phi=100))
    assert result.updates == 0
    warm = model.config.tau + model.config.horizons
    for rec in result.records:
        if rec.t < warm:
            assert rec.prediction is None
        else:
            assert rec.prediction is not None and rec.prediction.shape == (2, 4)


def test_online_update_count_floor_t_over_phi():
    model, dataset, _ = tiny_setup(horizon=40)
    stream = [dataset.features(t) for t in range(30)]
    result = online_update(model, stream, OnlineConfig(phi=7))
    assert result.updates == 30 // 7
    assert result.update_times == [7, 14, 21, 28]


def test_online_accumulator_lifecycle():
    model, dataset, _ = tiny_setup(horizon=40)
    stream = [dataset.features(t) for t in range(30)]
    phi = 7
    result = online_update(model, stream, OnlineConfig(phi=phi))
    for t, size in zip(range(1, 31), result.acc_sizes):
        assert size < phi
        if t in result.update_times:
            assert size == 0


def test_online_frozen_mode_never_changes_params():
    model, dataset, _ = tiny_setup(horizon=30)
    before = model.snapshot()
    online_update(model, [dataset.features(t) for t in range(25)],
                  OnlineConfig(phi=6, update=False))
    after = model.snapshot()
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


def test_batched_windows_match_single_window_path():
    model, dataset, _ = tiny_setup(horizon=32)
    tau, L = model.config.tau, model.config.horizons
    starts = [3, 4, 9]
    windows = [[dataset.features(t) for t in range(t0, t0 + tau)] for t0 in starts]
    batched = model.forward_windows(windows)
    for window, outs in zip(windows, batched):
        single = model.forward_window(window)
        for a, b in zip(single, outs):
            np.testing.assert_allclose(b.values, a.values, rtol=1e-9, atol=1e-12)


def test_features_cache_invalidates_on_mutation():
    _, dataset, _ = tiny_setup(horizon=20)
    before = dataset.features(3)
    assert dataset.features(3) is before
    dataset.volumes = dataset.volumes * 2.0
    after = dataset.features(3)
    assert after is not before
    np.testing.assert_array_equal(after.volumes, before.volumes * 2.0)
