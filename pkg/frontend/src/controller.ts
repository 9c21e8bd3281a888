/** Queue state machine. The UI owns no authoritative state: rows change
 * only after the server confirms, and a reload reproduces the view. */

import { ApiClient, ApiError } from "./api.js";
import { buildQueueView, QueueRow } from "./model.js";
import type { FeedbackResult } from "./types.js";

const RESOLVED = new Set(["confirmed", "rejected"]);

export class QueueController {
  rows: QueueRow[] = [];
  banner: string | null = null;
  lastDelta: FeedbackResult["q_delta"] | null = null;
  rowErrors = new Map<string, string>();
  loaded = false;

  constructor(
    private api: ApiClient,
    private statusFilter: string = "pending",
  ) {}

  async load(): Promise<void> {
    try {
      const anomalies = await this.api.listAnomalies(this.statusFilter);
      this.rows = buildQueueView(anomalies).rows;
      this.banner = null;
      this.loaded = true;
    } catch (error) {
      // no stale rows behind an error banner
      this.rows = [];
      this.loaded = true;
      this.banner = error instanceof ApiError
        ? `queue load failed (${error.status}): ${error.message}`
        : `queue load failed: ${String(error)}`;
    }
  }

  get empty(): boolean {
    return this.loaded && this.rows.length === 0 && this.banner === null;
  }

  async submit(eventId: string, verdict: "Agree" | "Disagree", note?: string): Promise<void> {
    this.rowErrors.delete(eventId);
    let result: FeedbackResult;
    try {
      result = await this.api.submitFeedback(eventId, verdict, note);
    } catch (error) {
      // the row is untouched on any failure
      const message = error instanceof ApiError
        ? error.status === 409
          ? `already resolved: ${error.message}`
          : `feedback failed (${error.status}): ${error.message}`
        : `feedback failed: ${String(error)}`;
      this.rowErrors.set(eventId, message);
      return;
    }
    this.lastDelta = result.q_delta;
    if (RESOLVED.has(result.new_status)) {
      this.rows = this.rows.filter((row) => row.id !== eventId);
    } else {
      this.rows = this.rows.map((row) =>
        row.id === eventId ? { ...row, status: result.new_status } : row,
      );
    }
  }
}
