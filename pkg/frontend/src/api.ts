/** Thin typed client over the service HTTP API. The fetch function is
 * injectable so tests can script responses. */

import type { ApiAnomaly, ErrorSeries, FeedbackResult, RunRecord } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    detail = body.error ?? body.detail ?? detail;
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  listAnomalies(status = "pending", runId?: string): Promise<ApiAnomaly[]> {
    const params = new URLSearchParams({ status });
    if (runId) params.set("run_id", runId);
    return this.get(`/api/anomalies?${params}`);
  }

  getRun(runId: string): Promise<RunRecord> {
    return this.get(`/api/runs/${runId}`);
  }

  getErrors(runId: string, dss?: number, scid?: number): Promise<ErrorSeries[]> {
    const params = new URLSearchParams();
    if (dss !== undefined) params.set("dss", String(dss));
    if (scid !== undefined) params.set("scid", String(scid));
    const query = params.toString();
    return this.get(`/api/runs/${runId}/errors${query ? `?${query}` : ""}`);
  }

  getReport(eventId: string): Promise<Record<string, unknown>> {
    return this.get(`/api/reports/${eventId}`);
  }

  async submitFeedback(
    eventId: string,
    verdict: "Agree" | "Disagree",
    note?: string,
  ): Promise<FeedbackResult> {
    const response = await this.fetchFn(`${this.baseUrl}/api/anomalies/${eventId}/feedback`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ verdict, note, operator: "dashboard" }),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as FeedbackResult;
  }
}
