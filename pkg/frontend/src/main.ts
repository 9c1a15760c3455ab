/** Browser wiring: poll the gateway, render views, submit what-if queries.
 * All rendering goes through the pure builders in render.ts; this module
 * only touches the DOM. */

import { GatewayClient, WarmUpError } from "./api.js";
import { ConsoleState } from "./state.js";
import {
  renderDiffTable, renderForecastTable, renderNetworkSvg, renderRetryBanner,
  renderSeriesSvg, renderWarmUpBanner,
} from "./render.js";
import type { WhatIfEvent } from "./types.js";

const POLL_MS = 3000;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

export function startConsole(baseUrl: string): void {
  const client = new GatewayClient(baseUrl);
  const state = new ConsoleState();
  let inFlightWhatIf = false;

  async function refresh(): Promise<void> {
    try {
      if (!state.network) {
        state.setNetwork(await client.network());
      }
      state.setSessionState(await client.state());
      try {
        state.setForecast(await client.forecast());
      } catch (err) {
        if (!(err instanceof WarmUpError)) throw err;
        state.forecast = null;
      }
      render();
    } catch (err) {
      el("banner").innerHTML = renderRetryBanner(String(err));
    }
  }

  function render(): void {
    const banner = el("banner");
    if (state.warmUp && state.session) {
      banner.innerHTML = renderWarmUpBanner(state.session.buffered,
                                            state.session.warm_up_needed);
    } else {
      banner.innerHTML = "";
    }
    if (state.network) {
      const volumes = state.displayedForecast() ?? state.session?.current_volumes ?? null;
      el("map").innerHTML = renderNetworkSvg(state.network, volumes,
                                             { selected: state.selectedSegments });
    }
    if (state.forecast) {
      el("forecast").innerHTML = renderForecastTable(state.forecast.forecast,
                                                     state.forecast.model_version);
      const horizonPick = el("horizon") as HTMLSelectElement;
      if (horizonPick.options.length !== state.forecast.horizons) {
        horizonPick.innerHTML = Array.from({ length: state.forecast.horizons },
          (_, i) => `<option value="${i + 1}">h+${i + 1}</option>`).join("");
        horizonPick.value = String(state.horizon);
      }
      if (state.selectedSegments.length) {
        const series = state.selectedSegments.map(seg => ({
          label: `segment ${seg}`,
          values: state.forecast!.forecast.map(row => row[seg]),
        }));
        el("chart").innerHTML = renderSeriesSvg(series);
      }
    }
    el("slots").innerHTML = state.slots.map(slot =>
      `<section class="slot" data-slot="${slot.id}">` +
      `<h3>scenario ${slot.id} (model v${slot.modelVersion})</h3>` +
      renderDiffTable(slot.response.baseline, slot.response.whatif,
                      slot.events, slot.modelVersion) +
      "</section>").join("");
  }

  el("map").addEventListener("click", (event) => {
    const target = (event.target as Element).closest("[data-segment]");
    if (!target) return;
    state.toggleSegment(Number(target.getAttribute("data-segment")));
    render();
  });

  (el("horizon") as HTMLSelectElement).addEventListener("change", (event) => {
    state.setHorizon(Number((event.target as HTMLSelectElement).value));
    render();
  });

  el("whatif-form").addEventListener("submit", async (event) => {
    event.preventDefault();
    if (inFlightWhatIf) return;  // one in-flight query per slot
    const factor = Number((el("factor") as HTMLInputElement).value);
    const events: WhatIfEvent[] = state.selectedSegments.map(segment => ({
      segment, capacity_factor: factor,
    }));
    inFlightWhatIf = true;
    try {
      const response = await client.whatif({ events });
      state.addComparison(response);
      render();
    } catch (err) {
      el("banner").innerHTML = renderRetryBanner(String(err));
    } finally {
      inFlightWhatIf = false;
    }
  });

  refresh();
  setInterval(refresh, POLL_MS);
}

declare global {
  interface Window { startConsole: typeof startConsole }
}
if (typeof window !== "undefined") {
  window.startConsole = startConsole;
}
