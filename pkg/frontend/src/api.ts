/** Typed client for the segmentation/study JSON API. */

export interface SegmentResponse {
  mask: string; // base64 PNG, single channel, 0/255
  coverage_fraction: number;
  particle_count: number;
  threshold_used: number;
  model_id: string;
  elapsed_ms: number;
}

export interface Progress {
  answered: number;
  total: number;
}

export interface TrialPayload {
  trial_index: number;
  image: string; // base64 PNG, intentionally the only trial content
  progress: Progress;
}

export interface DoneSignal {
  done: true;
  answered: number;
  total: number;
}

export type NextTrialResult = TrialPayload | DoneSignal;

export function isDone(result: NextTrialResult): result is DoneSignal {
  return (result as DoneSignal).done === true;
}

export interface StudyReport {
  accuracy: number;
  per_class: { real_correct_rate: number; generated_correct_rate: number };
  n_trials: number;
  confusion: Record<string, Record<string, number>>;
}

export interface SessionInfo {
  session_id: string;
  n_trials: number;
}

export type Answer = "real" | "generated";

/** Server errors carry {error, detail}; both surface on the thrown object. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly base: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    if (!response.ok) {
      const err = (body ?? {}) as { error?: string; detail?: string };
      throw new ApiError(
        response.status,
        err.error ?? `HTTP_${response.status}`,
        err.detail ?? response.statusText,
      );
    }
    return body as T;
  }

  health(): Promise<{ status: string; model_id: string; version: string }> {
    return this.request("/api/health");
  }

  segment(image: Blob, threshold?: number): Promise<SegmentResponse> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    const query =
      threshold === undefined ? "" : `?threshold=${encodeURIComponent(threshold)}`;
    return this.request(`/api/segment${query}`, { method: "POST", body: form });
  }

  createSession(nPerClass: number, seed: number): Promise<SessionInfo> {
    return this.request("/api/study/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ n_per_class: nPerClass, seed }),
    });
  }

  nextTrial(sessionId: string): Promise<NextTrialResult> {
    return this.request(`/api/study/sessions/${sessionId}/next`);
  }

  submitResponse(
    sessionId: string,
    trialIndex: number,
    answer: Answer,
  ): Promise<{ recorded: number }> {
    return this.request(`/api/study/sessions/${sessionId}/responses`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ trial_index: trialIndex, answer }),
    });
  }

  report(sessionId: string): Promise<StudyReport> {
    return this.request(`/api/study/sessions/${sessionId}/report`);
  }
}
