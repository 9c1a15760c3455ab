import { describe, expect, it } from "vitest";

import { ConsoleState } from "../src/state.js";
import type {
  ForecastResponse, NetworkResponse, StateResponse, WhatIfResponse,
} from "../src/types.js";
import { fixture } from "./helpers.js";

function loadedState(): ConsoleState {
  const state = new ConsoleState();
  state.setNetwork(fixture<NetworkResponse>("network.json").body);
  state.setSessionState(fixture<StateResponse>("state.json").body);
  state.setForecast(fixture<ForecastResponse>("forecast.json").body);
  return state;
}

describe("ConsoleState", () => {
  it("reports warm-up while no forecast has arrived", () => {
    const state = new ConsoleState();
    state.setSessionState(fixture<StateResponse>("state_warmup.json").body);
    expect(state.warmUp).toBe(true);
    expect(state.displayedForecast()).toBeNull();
  });

  it("displays forecast values byte-equal to the response body", () => {
    const state = loadedState();
    const body = fixture<ForecastResponse>("forecast.json").body;
    for (let h = 1; h <= body.horizons; h++) {
      state.setHorizon(h);
      expect(JSON.stringify(state.displayedForecast()))
        .toBe(JSON.stringify(body.forecast[h - 1]));
    }
  });

  it("rejects horizons outside the response range", () => {
    const state = loadedState();
    expect(() => state.setHorizon(0)).toThrow(RangeError);
    expect(() => state.setHorizon(99)).toThrow(RangeError);
  });

  it("keeps one comparison slot per submission, tagged with model version", () => {
    const state = loadedState();
    const restrict = fixture<WhatIfResponse>("whatif_restrict.json").body;
    const nullCase = fixture<WhatIfResponse>("whatif_null.json").body;
    const a = state.addComparison(restrict);
    const b = state.addComparison(nullCase);
    expect(state.slots.length).toBe(2);
    expect(a.id).not.toBe(b.id);
    expect(a.modelVersion).toBe(restrict.model_version);
    expect(b.modelVersion).toBe(nullCase.model_version);
  });

  it("null-event what-if diffs to exactly zero everywhere", () => {
    const state = loadedState();
    const slot = state.addComparison(fixture<WhatIfResponse>("whatif_null.json").body);
    const diff = state.diff(slot);
    for (const row of diff) {
      for (const value of row) {
        expect(value).toBe(0);
      }
    }
    expect(state.changedSegments(slot)).toEqual([]);
  });

  it("capacity-0.1 what-if shows a nonzero diff on alternate-path segments", () => {
    const state = loadedState();
    const body = fixture<WhatIfResponse>("whatif_restrict.json").body;
    const slot = state.addComparison(body);
    const changed = state.changedSegments(slot);
    expect(changed.length).toBeGreaterThan(0);
    // the recorded restriction hits segment 1 (first leg of the upper path
    // in its corridor); segments 3/4 (lower path) and 5 (middle path) are
    // the alternates that must react
    expect(body.events[0].segment).toBe(1);
    const alternates = changed.filter(seg => [3, 4, 5].includes(seg));
    expect(alternates.length).toBeGreaterThan(0);
  });

  it("segment selection toggles", () => {
    const state = loadedState();
    state.toggleSegment(3);
    state.toggleSegment(5);
    state.toggleSegment(3);
    expect(state.selectedSegments).toEqual([5]);
  });
});
