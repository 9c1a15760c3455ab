"""HTTP gateway tests via the in-process test client."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tripcast.generator import Scenario, generate
from tripcast.model import ModelConfig, TripCastModel
from tripcast.network import RoadNetwork, RoadNode
from tripcast.server import create_app
from tripcast.service import Session
from tripcast.training import TrafficDataset
from tripcast.tripgraph import graph_from_trajectories


@pytest.fixture(scope="module")
def stack():
    nodes = [
        RoadNode(0, "segment", 100.0, 10.0, 10.0, (0.0, 0.0)),
        RoadNode(1, "segment", 100.0, 4.0, 10.0, (100.0, 50.0)),
        RoadNode(2, "segment", 200.0, 10.0, 10.0, (100.0, -50.0)),
        RoadNode(3, "segment", 100.0, 10.0, 10.0, (200.0, 0.0)),
    ]
    net = RoadNetwork(nodes=nodes, edges=[(0, 1), (0, 2), (1, 3), (2, 3)])
    sc = Scenario(net=net, od_rates={(0, 3): [6.0] * 80},
                  candidate_paths={(0, 3): [[0, 1, 3], [0, 2, 3]]},
                  logit_theta=0.05, horizon=80, seed=9, interval_seconds=120.0)
    gt = generate(sc)
    dataset = TrafficDataset.from_groundtruth(gt)
    graph, _ = graph_from_trajectories(gt.trajectories, net, min_support=2)
    config = ModelConfig(tau=2, horizons=2, gru_hidden=2, gru_layers=1, att_heads=1,
                         att_dim=3, att_out=3, route_mlp_depth=2, route_mlp_hidden=4,
                         temporal_hidden=6, temporal_layers=1, head_depth=1,
                         head_hidden=4, demand_scale=5.0, seed=2)
    model = TripCastModel(config, graph, net)
    return model, dataset


def fresh_client(stack, phi=12, online=True):
    model, dataset = stack
    session = Session(model, phi=phi, online=online)
    return TestClient(create_app(session)), dataset, session


def step_body(dataset, t):
    feats = dataset.features(t)
    return {
        "volumes": feats.volumes.tolist(),
        "speeds": feats.speeds.tolist(),
        "demands": [{"origin": o, "destination": d, "count": c}
                    for (o, d), c in feats.demands.items()],
    }


def test_network_endpoint(stack):
    client, _, _ = fresh_client(stack)
    body = client.get("/network").json()
    assert body["schema_version"] == "1"
    assert len(body["nodes"]) == 4


def test_step_warm_up_409_then_200(stack):
    client, dataset, _ = fresh_client(stack)
    warm = 2 + 2  # tau + L
    for t in range(warm - 1):
        res = client.post("/step", json=step_body(dataset, t))
        assert res.status_code == 409
        assert res.json()["warm_up"] is True
    res = client.post("/step", json=step_body(dataset, warm - 1))
    assert res.status_code == 200
    body = res.json()
    assert body["t"] == warm
    assert np.asarray(body["hindcast"]).shape == (2, 4)


def test_forecast_warm_up_409(stack):
    client, dataset, _ = fresh_client(stack)
    assert client.get("/forecast").status_code == 409
    for t in range(4):
        client.post("/step", json=step_body(dataset, t))
    res = client.get("/forecast")
    assert res.status_code == 200
    body = res.json()
    assert np.asarray(body["forecast"]).shape == (2, 4)
    assert body["model_version"] == 0


def test_step_validation_errors(stack):
    client, dataset, _ = fresh_client(stack)
    res = client.post("/step", json={"volumes": [1, 2], "speeds": [1, 2]})
    assert res.status_code == 400
    res = client.post("/step", json={"volumes": [0] * 4, "speeds": [0] * 4,
                                     "demands": [{"origin": 0, "destination": 99,
                                                  "count": 1}]})
    assert res.status_code == 404
    res = client.post("/step", content=b"not json",
                      headers={"content-type": "application/json"})
    assert res.status_code == 400


def test_whatif_null_event_equals_baseline(stack):
    client, dataset, _ = fresh_client(stack)
    for t in range(6):
        client.post("/step", json=step_body(dataset, t))
    forecast = client.get("/forecast").json()
    res = client.post("/whatif", json={"events": [{"segment": 1, "capacity_factor": 1.0}]})
    assert res.status_code == 200
    body = res.json()
    assert body["baseline"] == forecast["forecast"]
    assert body["whatif"] == body["baseline"]


def test_whatif_is_side_effect_free(stack):
    client, dataset, _ = fresh_client(stack)
    for t in range(6):
        client.post("/step", json=step_body(dataset, t))
    req = {"events": [{"segment": 1, "capacity_factor": 0.1}]}
    first = client.post("/whatif", json=req)
    second = client.post("/whatif", json=req)
    assert first.status_code == second.status_code == 200
    assert first.json() == second.json()
    # and the regular forecast is unchanged by queries
    assert client.get("/forecast").json()["model_version"] == 0


def test_whatif_errors(stack):
    client, dataset, _ = fresh_client(stack)
    res = client.post("/whatif", json={"events": []})
    assert res.status_code == 409  # warm-up first
    for t in range(6):
        client.post("/step", json=step_body(dataset, t))
    assert client.post("/whatif", json={"nope": 1}).status_code == 400
    assert client.post("/whatif", json={"events": [{"segment": 77}]}).status_code == 404
    assert client.post("/whatif", json={"events": [], "horizons": 99}).status_code == 400


def test_version_increments_in_scripted_replay(stack):
    client, dataset, _ = fresh_client(stack, phi=12)
    for t in range(60):
        client.post("/step", json=step_body(dataset, t))
    state = client.get("/state").json()
    assert state["model_version"] == 5
    assert state["cursor"] == 60
    assert state["updates"] == [12, 24, 36, 48, 60]
    forecast = client.get("/forecast").json()
    assert forecast["model_version"] == 5
