/** Pure view-model builders. Every number comes verbatim from the API;
 * nothing is recomputed client-side. */

import type { ApiAnomaly, ErrorSeries } from "./types.js";

export interface QueueRow {
  id: string;
  track: string;
  timestampUs: number;
  severity: string;
  error: number;
  threshold: number;
  status: string;
  action: string;
  runId: string | null;
}

export interface QueueView {
  rows: QueueRow[];
}

export function buildQueueView(anomalies: ApiAnomaly[]): QueueView {
  const rows = anomalies.map((a) => ({
    id: a.id,
    track: `DSS-${a.dss} / SCID ${a.scid}`,
    timestampUs: a.timestamp_us,
    severity: a.severity ?? "-",
    error: a.error,
    threshold: a.threshold,
    status: a.status,
    action: a.chosen_action ?? "-",
    runId: a.run_id ?? null,
  }));
  rows.sort((a, b) => a.timestampUs - b.timestampUs || a.id.localeCompare(b.id));
  return { rows };
}

export interface ErrorChartModel {
  points: { index: number; value: number }[];
  threshold: number;
  flagged: number[];
}

export function buildErrorChartModel(series: ErrorSeries): ErrorChartModel {
  const flagged = series.flagged_windows.filter((w) => series.errors[w] > series.threshold);
  return {
    points: series.errors.map((value, index) => ({ index, value })),
    threshold: series.threshold,
    flagged,
  };
}

export function formatInstant(timestampUs: number): string {
  return new Date(timestampUs / 1000).toISOString().replace(".000Z", "Z");
}
