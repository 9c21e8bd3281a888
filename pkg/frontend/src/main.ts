/** Dashboard wiring: poll the queue, dispatch feedback, draw charts. */

import { ApiClient } from "./api.js";
import { renderErrorChartSvg } from "./chart.js";
import { QueueController } from "./controller.js";
import { buildErrorChartModel } from "./model.js";
import { renderDelta, renderQueue, renderReport } from "./view.js";

const POLL_MS = 5000;

const api = new ApiClient();
const controller = new QueueController(api);

const queueEl = document.getElementById("queue")!;
const deltaEl = document.getElementById("delta")!;
const chartEl = document.getElementById("chart")!;
const reportEl = document.getElementById("report")!;

function paint(): void {
  queueEl.innerHTML = renderQueue(controller);
  deltaEl.innerHTML = renderDelta(controller);
}

async function refresh(): Promise<void> {
  await controller.load();
  paint();
}

async function showChart(eventId: string): Promise<void> {
  const row = controller.rows.find((r) => r.id === eventId);
  if (!row || !row.runId) {
    chartEl.innerHTML = `<div class="empty-state">no run attached to this event</div>`;
    return;
  }
  const match = row.track.match(/DSS-(\d+) \/ SCID (\d+)/);
  try {
    const series = await api.getErrors(
      row.runId,
      match ? Number(match[1]) : undefined,
      match ? Number(match[2]) : undefined,
    );
    if (series.length === 0) {
      chartEl.innerHTML = renderErrorChartSvg({ points: [], threshold: 0, flagged: [] });
      return;
    }
    chartEl.innerHTML = renderErrorChartSvg(buildErrorChartModel(series[0]));
  } catch (error) {
    chartEl.innerHTML = `<div class="banner error">error series unavailable: ${String(error)}</div>`;
  }
  try {
    reportEl.innerHTML = renderReport(await api.getReport(eventId));
  } catch {
    reportEl.innerHTML = "";
  }
}

queueEl.addEventListener("click", (event) => {
  const button = (event.target as HTMLElement).closest("button");
  if (!button) return;
  const action = button.dataset.action;
  const id = button.dataset.id;
  if (action === "retry") {
    void refresh();
  } else if (action === "agree" && id) {
    void controller.submit(id, "Agree").then(paint);
  } else if (action === "disagree" && id) {
    void controller.submit(id, "Disagree").then(paint);
  } else if (action === "chart" && id) {
    void showChart(id);
  }
});

void refresh();
setInterval(() => void refresh(), POLL_MS);
