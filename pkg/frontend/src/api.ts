/** Typed client for the session HTTP API. */

export interface SessionSummary {
  cycle_index: number;
  n_records: number;
  n_labelled: number;
  n_unlabelled: number;
  n_normal_labels: number;
  n_anomaly_labels: number;
  training: boolean;
  train_progress: number;
  queued_labels: number;
  config: Record<string, unknown>;
}

export interface Candidate {
  id: string;
  score: number;
  rank: number;
  gt_label: number | null;
  thumbnail_png_base64: string;
}

export interface CandidatesResponse {
  candidates: Candidate[];
  shortfall: boolean;
}

export interface CycleMetrics {
  cycle: number;
  report: MetricsReport;
}

export interface MetricsReport {
  auroc: number;
  auprc: number;
  efficiency: [number, number][];
  precision_at: Record<string, number>;
  n_anomalies: number;
  n_total: number;
}

export interface MetricsResponse {
  latest: MetricsReport | null;
  history: CycleMetrics[];
}

export class HttpError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && body.detail) detail = JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new HttpError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  getSession(): Promise<SessionSummary> {
    return fetch(`${this.base}/api/session`).then((r) => asJson<SessionSummary>(r));
  }

  getCandidates(count: number): Promise<CandidatesResponse> {
    return fetch(`${this.base}/api/candidates?count=${count}`).then((r) =>
      asJson<CandidatesResponse>(r),
    );
  }

  postLabel(id: string, label: 0 | 1): Promise<{ queued: boolean; n_labelled: number }> {
    return fetch(`${this.base}/api/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, label }),
    }).then((r) => asJson(r));
  }

  postTrain(iterations?: number): Promise<{ started: boolean }> {
    return fetch(`${this.base}/api/train`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(iterations ? { iterations } : {}),
    }).then((r) => asJson(r));
  }

  getMetrics(): Promise<MetricsResponse> {
    return fetch(`${this.base}/api/metrics`).then((r) => asJson<MetricsResponse>(r));
  }

  saveSession(): Promise<{ path: string }> {
    return fetch(`${this.base}/api/session/save`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: "{}",
    }).then((r) => asJson(r));
  }
}
