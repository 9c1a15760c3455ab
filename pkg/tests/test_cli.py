"""CLI command tests on a miniature scenario."""

import json
from pathlib import Path

import numpy as np
import pytest

from tripcast.cli import main
from tripcast.generator import Scenario
from tripcast.ioutil import dump_json, load_json
from tripcast.network import RoadNetwork, RoadNode


@pytest.fixture(scope="module")
def mini_scenario(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    nodes = [
        RoadNode(0, "segment", 100.0, 10.0, 10.0, (0.0, 0.0)),
        RoadNode(1, "segment", 100.0, 4.0, 10.0, (100.0, 50.0)),
        RoadNode(2, "segment", 200.0, 10.0, 10.0, (100.0, -50.0)),
        RoadNode(3, "segment", 100.0, 10.0, 10.0, (200.0, 0.0)),
    ]
    net = RoadNetwork(nodes=nodes, edges=[(0, 1), (0, 2), (1, 3), (2, 3)])
    sc = Scenario(net=net, od_rates={(0, 3): [6.0] * 60},
                  candidate_paths={(0, 3): [[0, 1, 3], [0, 2, 3]]},
                  logit_theta=0.05, horizon=60, seed=5, interval_seconds=120.0,
                  name="cli-mini")
    path = root / "scenario.json"
    sc.save(path)
    return root, path


@pytest.fixture(scope="module")
def generated(mini_scenario):
    root, scenario_path = mini_scenario
    out = root / "data"
    assert main(["generate", "--scenario", str(scenario_path), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def graph_file(generated, mini_scenario):
    root, _ = mini_scenario
    out = root / "graph.json"
    code = main(["build-graph", "--trajectories", str(generated / "trajectories.csv"),
                 "--network", str(generated / "network.json"), "--out", str(out),
                 "--gap-threshold", "3600"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_ckpt(generated, graph_file, mini_scenario):
    root, _ = mini_scenario
    out = root / "model.ckpt"
    code = main(["train", "--data", str(generated), "--graph", str(graph_file),
                 "--out", str(out), "--steps", "6", "--batch-size", "2",
                 "--tau", "2", "--horizons", "2", "--gru-hidden", "2",
                 "--temporal-hidden", "6", "--route-mlp-depth", "2", "--seed", "3"])
    assert code == 0
    return out


def test_generate_deterministic_bytes(mini_scenario):
    root, scenario_path = mini_scenario
    out_a, out_b = root / "det_a", root / "det_b"
    assert main(["generate", "--scenario", str(scenario_path), "--seed", "7",
                 "--out", str(out_a)]) == 0
    assert main(["generate", "--scenario", str(scenario_path), "--seed", "7",
                 "--out", str(out_b)]) == 0
    for name in ("volumes.csv", "speeds.csv", "trajectories.csv", "route_shares.csv",
                 "path_volumes.csv", "od_demands.csv", "meta.json", "scenario.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_generate_accepts_preset_name(tmp_path):
    out = tmp_path / "preset"
    assert main(["generate", "--scenario", "sy-mini.json", "--seed", "3",
                 "--out", str(out)]) == 0
    meta = load_json(out / "meta.json")
    assert meta["num_segments"] == 30


def test_unknown_command_usage_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_unknown_flag_usage_exit_2():
    with pytest.raises(SystemExit) as err:
        main(["generate", "--scenario", "x", "--nope"])
    assert err.value.code == 2


def test_missing_file_is_one_line_error(capsys):
    code = main(["build-graph", "--trajectories", "/nonexistent.csv",
                 "--network", "/nonexistent.json", "--out", "/tmp/x.json"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.strip().startswith("tripcast build-graph:")


def test_build_graph_reports_structure(graph_file):
    data = load_json(graph_file)
    assert len(data["od_nodes"]) == 1
    assert len(data["path_nodes"]) == 2


def test_train_writes_checkpoint_and_curve(trained_ckpt):
    assert trained_ckpt.exists()
    curve = Path(str(trained_ckpt) + ".curve.csv").read_text()
    assert curve.startswith("step,train_loss,val_loss")
    assert len(curve.strip().splitlines()) == 7


def test_whatif_null_events_equal_forecast(generated, trained_ckpt, tmp_path):
    out_plain = tmp_path / "plain.json"
    out_null = tmp_path / "null.json"
    assert main(["whatif", "--data", str(generated), "--ckpt", str(trained_ckpt),
                 "--out", str(out_plain)]) == 0
    events = tmp_path / "events.json"
    dump_json({"events": []}, events)
    assert main(["whatif", "--data", str(generated), "--ckpt", str(trained_ckpt),
                 "--events", str(events), "--out", str(out_null)]) == 0
    plain = load_json(out_plain)
    null = load_json(out_null)
    assert plain["baseline"] == plain["whatif"]
    assert null["whatif"] == plain["whatif"]


def test_whatif_event_changes_forecast(generated, trained_ckpt, tmp_path):
    events = tmp_path / "events.json"
    dump_json({"events": [{"segment": 1, "capacity_factor": 0.1}]}, events)
    out = tmp_path / "hit.json"
    assert main(["whatif", "--data", str(generated), "--ckpt", str(trained_ckpt),
                 "--events", str(events), "--out", str(out)]) == 0
    body = load_json(out)
    assert body["events"] == [{"segment": 1, "capacity_factor": 0.1}]
    assert np.asarray(body["baseline"]).shape == np.asarray(body["whatif"]).shape


def test_online_command(generated, trained_ckpt, tmp_path):
    out = tmp_path / "online"
    assert main(["online", "--data", str(generated), "--ckpt", str(trained_ckpt),
                 "--out", str(out), "--phi", "10"]) == 0
    summary = load_json(out / "online.json")
    assert summary["updates"] == 60 // 10
    lines = (out / "online.csv").read_text().strip().splitlines()
    assert len(lines) == 61
    assert (out / "updated.ckpt").exists()


def test_eval_command_with_checkpoints(generated, graph_file, trained_ckpt, tmp_path):
    out = tmp_path / "report"
    code = main(["eval", "--data", str(generated), "--graph", str(graph_file),
                 "--out", str(out), "--variants", "tripcast,ha",
                 "--ckpt", f"tripcast={trained_ckpt}",
                 "--tau", "2", "--horizons", "2", "--seed", "3"])
    assert code == 0
    csv = (out / "metrics.csv").read_text()
    assert "tripcast," in csv and "ha," in csv
    report = load_json(out / "report.json")
    assert {r["variant"] for r in report["rows"]} == {"tripcast", "ha"}


def test_pipeline_end_to_end(mini_scenario, generated, graph_file, tmp_path):
    # generate -> build-graph (fixtures above) -> pretrain -> train -> eval
    root, _ = mini_scenario
    pre = tmp_path / "pre.ckpt"
    assert main(["pretrain", "--data", str(generated), "--graph", str(graph_file),
                 "--out", str(pre), "--steps", "4", "--tau", "2", "--horizons", "2",
                 "--gru-hidden", "2", "--temporal-hidden", "6",
                 "--route-mlp-depth", "2", "--seed", "3"]) == 0
    model_ckpt = tmp_path / "fine.ckpt"
    assert main(["train", "--data", str(generated), "--init", str(pre),
                 "--out", str(model_ckpt), "--steps", "4", "--batch-size", "2",
                 "--seed", "3"]) == 0
    out = tmp_path / "report"
    assert main(["eval", "--data", str(generated), "--graph", str(graph_file),
                 "--out", str(out), "--variants", "tripcast,ha",
                 "--ckpt", f"tripcast={model_ckpt}",
                 "--tau", "2", "--horizons", "2", "--seed", "3"]) == 0
    assert (out / "metrics.csv").exists()
