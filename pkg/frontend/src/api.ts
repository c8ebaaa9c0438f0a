/**
 * Typed client for the annotation service REST API.
 *
 * The console never computes statistics itself: every number the UI shows
 * is a field read verbatim from one of these responses.
 */

export interface TaskPayload {
  product_a_title: string;
  product_b_title: string;
  product_a_images: string[];
  product_b_images: string[];
  intention: string;
  relation: string;
  verdict_accept: boolean;
  verdict_rationale: string;
}

export interface Task {
  task_id: string;
  record_id: number;
  status: 'open' | 'complete';
  raters: string[];
  payload: TaskPayload;
}

export interface Ratings {
  plausibility: 0 | 1;
  typicality: 0 | 1;
  human_centric: 0 | 1;
  filter_rationale: 0 | 1;
}

export interface SubmitAck {
  task_id: string;
  status: string;
  raters: number;
}

export interface AgreementReport {
  aspect: string;
  pairwise_agreement: number | null;
  fleiss_kappa: number | null;
  n_items: number;
  n_raters: number;
  n_categories: number;
}

export interface Summary {
  tasks_open: number;
  tasks_complete: number;
  positive_rates: Record<string, number | null>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

/** Raised for 409s: someone else completed the task first. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = 'ConflictError';
  }
}

export class AnnotationApi {
  private readonly fetchFn: FetchLike;

  constructor(private readonly baseUrl: string, fetchFn?: FetchLike) {
    this.fetchFn = fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, '')}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.url(path), init);
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = await response.json();
        if (body && typeof body.detail === 'string') detail = body.detail;
      } catch {
        // keep the generic detail
      }
      if (response.status === 409) throw new ConflictError(detail);
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  /** Next open task for this rater, or null when the queue is empty. */
  async nextTask(raterId: string): Promise<Task | null> {
    try {
      return await this.request<Task>(`/tasks/next?rater=${encodeURIComponent(raterId)}`);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) return null;
      throw error;
    }
  }

  async getTask(taskId: string): Promise<Task> {
    return this.request<Task>(`/tasks/${encodeURIComponent(taskId)}`);
  }

  async submitRatings(taskId: string, raterId: string, ratings: Ratings): Promise<SubmitAck> {
    return this.request<SubmitAck>(`/tasks/${encodeURIComponent(taskId)}/ratings`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ rater_id: raterId, ...ratings }),
    });
  }

  async agreement(aspect = 'all'): Promise<AgreementReport> {
    return this.request<AgreementReport>(`/reports/agreement?aspect=${encodeURIComponent(aspect)}`);
  }

  async summary(): Promise<Summary> {
    return this.request<Summary>('/reports/summary');
  }
}
