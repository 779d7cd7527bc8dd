/** Stubbed API server + request interception shared by the suites. */

import type { RecordSummary, StatsPayload } from "../src/types.js";

export interface SeenRequest {
  method: string;
  url: string;
  body: unknown;
}

export function makeRecord(overrides: Partial<RecordSummary> = {}): RecordSummary {
  const id = overrides.id ?? "rec-0001";
  return {
    id,
    instruction: "What would happen if the balloon popped?",
    output_description: "a burst balloon in a park",
    category: "PhysicalTrans",
    branch: "TextToImage",
    keywords: ["balloon"],
    review: "Pending",
    review_note: null,
    revision: 0,
    input_image_url: `/images/images/${id}_in.png`,
    output_image_url: `/images/images/${id}_out.png`,
    provenance: { seed: 7 },
    ...overrides,
  };
}

export const emptyStats: StatsPayload = {
  total: 0,
  by_status: {},
  by_category: {},
  by_branch: {},
  pending_jobs: 0,
};

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

/**
 * In-memory stand-in for the review service. Every outbound request is
 * recorded so tests can assert that no mutation bypasses the decision
 * endpoint.
 */
export class StubServer {
  requests: SeenRequest[] = [];
  records: RecordSummary[];
  stats: StatsPayload;
  failQueue = false;
  conflictOnce = false;

  constructor(records: RecordSummary[] = [], stats: StatsPayload = emptyStats) {
    this.records = records;
    this.stats = stats;
  }

  get mutations(): SeenRequest[] {
    return this.requests.filter((r) => r.method !== "GET");
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = (init?.method ?? "GET").toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    this.requests.push({ method, url, body });

    const decisionMatch = url.match(/^\/api\/v1\/records\/([^/]+)\/decision$/);
    if (decisionMatch && method === "POST") {
      return this.handleDecision(decodeURIComponent(decisionMatch[1]), body);
    }
    const recordMatch = url.match(/^\/api\/v1\/records\/([^/]+)$/);
    if (recordMatch && method === "GET") {
      const record = this.records.find((r) => r.id === decodeURIComponent(recordMatch[1]));
      return record ? json(200, record) : json(404, { detail: "no such record" });
    }
    if (url.startsWith("/api/v1/records") && method === "GET") {
      if (this.failQueue) throw new TypeError("network down");
      const pending = this.records.filter((r) => r.review === "Pending");
      return json(200, {
        items: pending,
        total: pending.length,
        page: 1,
        page_size: 10,
      });
    }
    if (url === "/api/v1/stats" && method === "GET") {
      return json(200, this.stats);
    }
    return json(404, { detail: `unhandled ${method} ${url}` });
  };

  private handleDecision(id: string, body: Record<string, unknown> | null): Response {
    const record = this.records.find((r) => r.id === id);
    if (!record) return json(404, { detail: "no such record" });
    if (this.conflictOnce) {
      this.conflictOnce = false;
      record.revision += 1; // another reviewer got there first
      return json(409, { detail: `record ${id} is at revision ${record.revision}` });
    }
    if (body?.expected_revision !== record.revision) {
      return json(409, { detail: `record ${id} is at revision ${record.revision}` });
    }
    const action = body?.action;
    if (action === "ReviseInstruction" && !body?.revised_instruction) {
      return json(422, { detail: "revised_instruction: required" });
    }
    record.revision += 1;
    if (action === "Approve") record.review = "Approved";
    else if (action === "Reject") record.review = "Rejected";
    else if (action === "ReviseInstruction") {
      record.review = "Revised";
      record.instruction = String(body?.revised_instruction);
    }
    return json(200, record);
  }
}

export async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
  await new Promise((resolve) => setTimeout(resolve, 0));
}
