/** Pure markup builders: SVG network view, series charts, value tables.
 * No DOM access here so the whole module is unit-testable in node. */

import type { NetworkResponse, WhatIfEvent } from "./types.js";

/** Blue-to-red ramp; input clamped to [0, 1]. */
export function heatColor(x: number): string {
  if (!Number.isFinite(x)) x = 0;
  const t = Math.max(0, Math.min(1, x));
  const r = Math.round(40 + 215 * t);
  const g = Math.round(80 + 60 * (1 - Math.abs(t - 0.5) * 2));
  const b = Math.round(255 - 215 * t);
  return `rgb(${r},${g},${b})`;
}

export interface NetworkViewOptions {
  width?: number;
  height?: number;
  selected?: number[];
  affected?: number[];
}

/** Network map: one circle per segment colored by relative volume. */
export function renderNetworkSvg(network: NetworkResponse,
                                 volumes: number[] | null,
                                 opts: NetworkViewOptions = {}): string {
  const width = opts.width ?? 900;
  const height = opts.height ?? 260;
  const xs = network.nodes.map(n => n.centroid[0]);
  const ys = network.nodes.map(n => n.centroid[1]);
  const minX = Math.min(...xs), maxX = Math.max(...xs);
  const minY = Math.min(...ys), maxY = Math.max(...ys);
  const pad = 24;
  const sx = (x: number) =>
    pad + (width - 2 * pad) * (maxX === minX ? 0.5 : (x - minX) / (maxX - minX));
  const sy = (y: number) =>
    height - pad - (height - 2 * pad) * (maxY === minY ? 0.5 : (y - minY) / (maxY - minY));
  const peak = volumes && volumes.length ? Math.max(...volumes, 1e-9) : 1;
  const selected = new Set(opts.selected ?? []);
  const affected = new Set(opts.affected ?? []);

  const parts: string[] = [];
  parts.push(`<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
    `class="network-view">`);
  for (const [a, b] of network.edges) {
    const na = network.nodes[a], nb = network.nodes[b];
    parts.push(`<line x1="${sx(na.centroid[0]).toFixed(1)}" y1="${sy(na.centroid[1]).toFixed(1)}" ` +
      `x2="${sx(nb.centroid[0]).toFixed(1)}" y2="${sy(nb.centroid[1]).toFixed(1)}" ` +
      `stroke="#b8c0cc" stroke-width="1.5"/>`);
  }
  for (const node of network.nodes) {
    const volume = volumes ? volumes[node.id] : null;
    const fill = volume === null || volume === undefined
      ? "#d7dbe0" : heatColor(volume / peak);
    const ring = affected.has(node.id) ? ' stroke="#d8315b" stroke-width="3"'
      : selected.has(node.id) ? ' stroke="#1f2a44" stroke-width="2.5"' : "";
    parts.push(`<circle data-segment="${node.id}" cx="${sx(node.centroid[0]).toFixed(1)}" ` +
      `cy="${sy(node.centroid[1]).toFixed(1)}" r="9" fill="${fill}"${ring}>` +
      `<title>segment ${node.id}${volume === null ? "" : `: ${volume}`}</title></circle>`);
  }
  parts.push("</svg>");
  return parts.join("");
}

/** Simple polyline chart for one or more numeric series. */
export function renderSeriesSvg(series: { label: string; values: number[] }[],
                                width = 420, height = 140): string {
  const all = series.flatMap(s => s.values).filter(Number.isFinite);
  const lo = Math.min(...all, 0);
  const hi = Math.max(...all, 1e-9);
  const pad = 10;
  const colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
  const parts = [`<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
    `class="series-chart">`];
  series.forEach((s, i) => {
    const n = Math.max(s.values.length - 1, 1);
    const points = s.values.map((v, k) => {
      const x = pad + (width - 2 * pad) * (k / n);
      const y = height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo));
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    }).join(" ");
    parts.push(`<polyline fill="none" stroke="${colors[i % colors.length]}" ` +
      `stroke-width="1.8" points="${points}"><title>${s.label}</title></polyline>`);
  });
  parts.push("</svg>");
  return parts.join("");
}

/** Forecast values rendered verbatim (JSON number serialization). */
export function renderForecastRow(values: number[]): string {
  const cells = values
    .map((v, i) => `<td data-segment="${i}">${JSON.stringify(v)}</td>`)
    .join("");
  return `<tr>${cells}</tr>`;
}

export function renderForecastTable(forecast: number[][], modelVersion: number): string {
  const rows = forecast
    .map((row, h) => `<tr><th>h+${h + 1}</th>${row.map((v, i) =>
      `<td data-h="${h + 1}" data-segment="${i}">${JSON.stringify(v)}</td>`).join("")}</tr>`)
    .join("");
  return `<table class="forecast" data-model-version="${modelVersion}">` +
    `<tbody>${rows}</tbody></table>`;
}

/** Difference view: whatif minus baseline, zero cells muted. */
export function renderDiffTable(baseline: number[][], whatif: number[][],
                                events: WhatIfEvent[], modelVersion: number): string {
  const header = events.map(e =>
    `segment ${e.segment} x${JSON.stringify(e.capacity_factor)}`).join(", ") || "no events";
  const rows = whatif.map((row, h) => {
    const cells = row.map((value, seg) => {
      const delta = value - baseline[h][seg];
      const cls = delta === 0 ? "zero" : delta > 0 ? "up" : "down";
      return `<td class="${cls}" data-h="${h + 1}" data-segment="${seg}">` +
        `${JSON.stringify(delta)}</td>`;
    }).join("");
    return `<tr><th>h+${h + 1}</th>${cells}</tr>`;
  }).join("");
  return `<table class="diff" data-model-version="${modelVersion}">` +
    `<caption>${header}</caption><tbody>${rows}</tbody></table>`;
}

export function renderWarmUpBanner(buffered: number, needed: number): string {
  return `<div class="warm-up" role="status">warming up: ${buffered}/${needed} ` +
    `intervals buffered; no forecast yet</div>`;
}

export function renderRetryBanner(message: string): string {
  return `<div class="retry" role="alert">gateway unreachable: ${message} ` +
    `<button data-action="retry">retry</button></div>`;
}
