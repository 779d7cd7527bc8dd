/**
 * Typed client for the review service.
 *
 * This is the only layer in the frontend allowed to talk to the network;
 * every dataset mutation goes through submitDecision. A 409 from the
 * service means the card's revision counter went stale and the caller
 * must refetch before retrying.
 */

import type {
  DecisionRequest,
  QueueFilters,
  RecordsPage,
  RecordSummary,
  StatsPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The decision raced another reviewer; refetch and re-decide. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = "ConflictError";
  }
}

/** The decision payload was rejected (e.g. revision without text). */
export class RequestInvalidError extends ApiError {
  constructor(message: string) {
    super(422, message);
    this.name = "RequestInvalidError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly token: string | null = null,
  ) {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["content-type"] = "application/json";
    if (this.token) headers["x-review-token"] = this.token;
    return headers;
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (response.status === 409) {
      throw new ConflictError(await detailOf(response));
    }
    if (response.status === 422) {
      throw new RequestInvalidError(await detailOf(response));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return response.json();
  }

  async fetchQueue(filters: QueueFilters = {}): Promise<RecordsPage> {
    const params = new URLSearchParams();
    for (const key of ["status", "branch", "category", "page", "page_size"] as const) {
      const value = filters[key];
      if (value !== undefined && value !== null) params.set(key, String(value));
    }
    const query = params.toString();
    const path = query ? `/api/v1/records?${query}` : "/api/v1/records";
    return (await this.request(path, { headers: this.headers(false) })) as RecordsPage;
  }

  async fetchRecord(id: string): Promise<RecordSummary> {
    return (await this.request(`/api/v1/records/${encodeURIComponent(id)}`, {
      headers: this.headers(false),
    })) as RecordSummary;
  }

  async submitDecision(id: string, decision: DecisionRequest): Promise<RecordSummary> {
    return (await this.request(`/api/v1/records/${encodeURIComponent(id)}/decision`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(decision),
    })) as RecordSummary;
  }

  async fetchStats(): Promise<StatsPayload> {
    return (await this.request("/api/v1/stats", { headers: this.headers(false) })) as StatsPayload;
  }
}

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `request failed with status ${response.status}`;
  }
}
