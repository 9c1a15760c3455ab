/** Console view model. Every displayed number round-trips verbatim from a
 * gateway response body; the only client-side arithmetic is the difference
 * view (whatif minus baseline), derived from one response's two arrays. */

import type {
  ForecastResponse, NetworkResponse, StateResponse, WhatIfEvent, WhatIfResponse,
} from "./types.js";

export interface ComparisonSlot {
  id: number;
  modelVersion: number;
  events: WhatIfEvent[];
  response: WhatIfResponse;
}

export class ConsoleState {
  network: NetworkResponse | null = null;
  session: StateResponse | null = null;
  forecast: ForecastResponse | null = null;
  horizon = 1;
  selectedSegments: number[] = [];
  slots: ComparisonSlot[] = [];
  private nextSlotId = 1;

  get warmUp(): boolean {
    return this.forecast === null;
  }

  setNetwork(response: NetworkResponse): void {
    this.network = response;
  }

  setSessionState(response: StateResponse): void {
    this.session = response;
  }

  setForecast(response: ForecastResponse): void {
    this.forecast = response;
  }

  setHorizon(h: number): void {
    const max = this.forecast?.horizons ?? 1;
    if (h < 1 || h > max) {
      throw new RangeError(`horizon ${h} outside 1..${max}`);
    }
    this.horizon = h;
  }

  toggleSegment(id: number): void {
    const at = this.selectedSegments.indexOf(id);
    if (at >= 0) {
      this.selectedSegments.splice(at, 1);
    } else {
      this.selectedSegments.push(id);
    }
  }

  /** Horizon row of the live forecast, exactly as received. */
  displayedForecast(horizon = this.horizon): number[] | null {
    if (!this.forecast) return null;
    return this.forecast.forecast[horizon - 1];
  }

  addComparison(response: WhatIfResponse): ComparisonSlot {
    const slot: ComparisonSlot = {
      id: this.nextSlotId++,
      modelVersion: response.model_version,
      events: response.events,
      response,
    };
    this.slots.push(slot);
    return slot;
  }

  /** Per-horizon per-segment (whatif - baseline) for one comparison slot. */
  diff(slot: ComparisonSlot): number[][] {
    return slot.response.whatif.map((row, h) =>
      row.map((value, seg) => value - slot.response.baseline[h][seg]));
  }

  /** Segments whose forecast changes anywhere in the horizon range. */
  changedSegments(slot: ComparisonSlot): number[] {
    const diff = this.diff(slot);
    const segments = new Set<number>();
    for (const row of diff) {
      row.forEach((value, seg) => {
        if (value !== 0) segments.add(seg);
      });
    }
    return [...segments].sort((a, b) => a - b);
  }
}
