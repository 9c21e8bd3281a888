/** Payload shapes mirrored verbatim from the service API. */

export interface ApiAnomaly {
  id: string;
  dss: number;
  scid: number;
  timestamp_us: number;
  window_index: number;
  error: number;
  threshold: number;
  model_kind: string;
  severity: string | null;
  chosen_action: string | null;
  status: string;
  run_id?: string | null;
}

export interface QDelta {
  state: string;
  action: string;
  old: number;
  new: number;
  delta: number;
}

export interface FeedbackResult {
  event_id: string;
  new_status: string;
  q_delta: QDelta;
}

export interface ErrorSeries {
  dss: number;
  scid: number;
  threshold: number;
  errors: number[];
  timestamps_us: number[];
  flagged_windows: number[];
}

export interface RunRecord {
  run_id: string;
  dataset: string;
  status: string;
  decision: string | null;
}
