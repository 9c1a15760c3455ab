#!/usr/bin/env python3
"""Record live gateway responses into frontend/fixtures/.

Dev-time tool: spins an in-process gateway session from a trained
checkpoint plus a generated dataset, replays enough intervals to warm up,
and snapshots each endpoint's JSON body. The UI test suite runs purely
against these files.

Usage: record_fixtures.py --ckpt model.ckpt --data DATA_DIR --out fixtures/
"""

import argparse
import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

from tripcast.server import create_app, session_from_checkpoint
from tripcast.training import TrafficDataset


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--intervals", type=int, default=24)
    parser.add_argument("--restrict-segment", type=int, default=1)
    args = parser.parse_args()

    dataset = TrafficDataset.from_dir(args.data)
    session = session_from_checkpoint(args.ckpt, phi=12, online=True)
    client = TestClient(create_app(session))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def snap(name: str, response) -> dict:
        body = response.json()
        (out / name).write_text(json.dumps({"status": response.status_code, "body": body},
                                           indent=1, sort_keys=True) + "\n")
        print(f"{name}: HTTP {response.status_code}")
        return body

    snap("network.json", client.get("/network"))
    snap("state_warmup.json", client.get("/state"))
    snap("forecast_warmup.json", client.get("/forecast"))

    def body_of(t: int) -> dict:
        feats = dataset.features(t)
        return {"volumes": feats.volumes.tolist(), "speeds": feats.speeds.tolist(),
                "demands": [{"origin": o, "destination": d, "count": c}
                            for (o, d), c in feats.demands.items()]}

    last_step = None
    for t in range(args.intervals):
        last_step = client.post("/step", json=body_of(t))
    snap("step.json", last_step)
    snap("state.json", client.get("/state"))
    snap("forecast.json", client.get("/forecast"))
    snap("whatif_null.json", client.post("/whatif", json={
        "events": [{"segment": args.restrict_segment, "capacity_factor": 1.0}]}))
    whatif = snap("whatif_restrict.json", client.post("/whatif", json={
        "events": [{"segment": args.restrict_segment, "capacity_factor": 0.1}]}))

    base = whatif["baseline"]
    hit = whatif["whatif"]
    changed = sorted({seg for h in range(len(hit))
                      for seg in range(len(hit[h])) if hit[h][seg] != base[h][seg]})
    print(f"restriction on segment {args.restrict_segment} changes segments: {changed}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
