/** HTML renderers for the triage dashboard (string-based, event wiring
 * happens in main.ts via delegation). */

import type { QueueController } from "./controller.js";
import { formatInstant } from "./model.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBanner(controller: QueueController): string {
  if (!controller.banner) return "";
  return (
    `<div class="banner error">${escapeHtml(controller.banner)} ` +
    `<button data-action="retry">retry</button></div>`
  );
}

export function renderDelta(controller: QueueController): string {
  const delta = controller.lastDelta;
  if (!delta) return "";
  const sign = delta.delta >= 0 ? "+" : "";
  return (
    `<div class="delta-badge">Q(${escapeHtml(delta.state)}, ${escapeHtml(delta.action)}) ` +
    `${delta.old.toFixed(4)} &rarr; ${delta.new.toFixed(4)} (${sign}${delta.delta.toFixed(4)})</div>`
  );
}

export function renderQueue(controller: QueueController): string {
  if (controller.banner) return renderBanner(controller);
  if (controller.empty) {
    return `<div class="empty-state">No pending anomalies. The queue is clear.</div>`;
  }
  const rows = controller.rows
    .map((row) => {
      const rowError = controller.rowErrors.get(row.id);
      return (
        `<tr data-id="${row.id}" data-run="${row.runId ?? ""}">` +
        `<td class="mono">${row.id}</td>` +
        `<td>${escapeHtml(row.track)}</td>` +
        `<td>${formatInstant(row.timestampUs)}</td>` +
        `<td><span class="severity severity-${row.severity.toLowerCase()}">${escapeHtml(row.severity)}</span></td>` +
        `<td class="mono">${row.error.toPrecision(6)}</td>` +
        `<td class="mono">${row.threshold.toPrecision(6)}</td>` +
        `<td>${escapeHtml(row.status)}</td>` +
        `<td>${escapeHtml(row.action)}</td>` +
        `<td>` +
        `<button data-action="agree" data-id="${row.id}">Agree</button> ` +
        `<button data-action="disagree" data-id="${row.id}">Disagree</button> ` +
        `<button data-action="chart" data-id="${row.id}">Chart</button>` +
        (rowError ? `<div class="row-error">${escapeHtml(rowError)}</div>` : "") +
        `</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="queue"><thead><tr>` +
    `<th>event</th><th>track</th><th>instant</th><th>severity</th>` +
    `<th>error</th><th>threshold</th><th>status</th><th>verifier</th><th></th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderReport(report: Record<string, unknown> | null): string {
  if (!report) return "";
  // the rendered artifact is displayed as-is when the service provides it
  if (typeof report.markdown === "string") {
    return `<div class="report"><pre>${escapeHtml(report.markdown)}</pre></div>`;
  }
  const fields = ["severity", "verdict", "description", "suggested_action", "backend_tag"];
  const body = fields
    .filter((f) => report[f] !== undefined)
    .map(
      (f) =>
        `<dt>${escapeHtml(f)}</dt><dd>${escapeHtml(String(report[f]))}</dd>`,
    )
    .join("");
  return `<div class="report"><h3>Discrepancy report ${escapeHtml(String(report.event_id ?? ""))}</h3><dl>${body}</dl></div>`;
}
