/** SVG error chart: error polyline, a horizontal threshold line at the
 * exact API-provided value, and highlighted flagged points. */

import type { ErrorChartModel } from "./model.js";

export interface ChartGeometry {
  width: number;
  height: number;
  padding: number;
}

export const DEFAULT_GEOMETRY: ChartGeometry = { width: 720, height: 240, padding: 28 };

export function valueRange(model: ErrorChartModel): { min: number; max: number } {
  const values = model.points.map((p) => p.value).concat([model.threshold]);
  const min = Math.min(...values, 0);
  const max = Math.max(...values);
  return max > min ? { min, max } : { min, max: min + 1 };
}

export function scaleY(value: number, model: ErrorChartModel, geometry: ChartGeometry): number {
  const { min, max } = valueRange(model);
  const usable = geometry.height - 2 * geometry.padding;
  return geometry.height - geometry.padding - ((value - min) / (max - min)) * usable;
}

export function scaleX(index: number, count: number, geometry: ChartGeometry): number {
  const usable = geometry.width - 2 * geometry.padding;
  const denom = Math.max(count - 1, 1);
  return geometry.padding + (index / denom) * usable;
}

export function renderErrorChartSvg(
  model: ErrorChartModel,
  geometry: ChartGeometry = DEFAULT_GEOMETRY,
): string {
  if (model.points.length === 0) {
    return (
      `<svg class="error-chart" viewBox="0 0 ${geometry.width} ${geometry.height}">` +
      `<text class="placeholder" x="${geometry.width / 2}" y="${geometry.height / 2}"` +
      ` text-anchor="middle">no error series available</text></svg>`
    );
  }
  const count = model.points.length;
  const path = model.points
    .map((p) => `${scaleX(p.index, count, geometry).toFixed(2)},${scaleY(p.value, model, geometry).toFixed(2)}`)
    .join(" ");
  const thresholdY = scaleY(model.threshold, model, geometry);
  const markers = model.flagged
    .map((w) => {
      const x = scaleX(w, count, geometry).toFixed(2);
      const y = scaleY(model.points[w].value, model, geometry).toFixed(2);
      return `<circle class="flagged" cx="${x}" cy="${y}" r="4"></circle>`;
    })
    .join("");
  // the label carries the API value verbatim; no client-side rounding
  return (
    `<svg class="error-chart" viewBox="0 0 ${geometry.width} ${geometry.height}">` +
    `<polyline class="errors" fill="none" points="${path}"></polyline>` +
    `<line class="threshold" x1="${geometry.padding}" x2="${geometry.width - geometry.padding}"` +
    ` y1="${thresholdY}" y2="${thresholdY}"></line>` +
    `<text class="threshold-label" x="${geometry.width - geometry.padding}" y="${thresholdY - 6}"` +
    ` text-anchor="end">threshold ${String(model.threshold)}</text>` +
    markers +
    `</svg>`
  );
}
