/** Wire types mirroring the review service's /api/v1 payloads. */

export type ReviewStatus = "Pending" | "Approved" | "Rejected" | "Revised";

export type ReviewAction =
  | "Approve"
  | "Reject"
  | "ReviseInstruction"
  | "RequestRegeneration";

export interface RecordSummary {
  id: string;
  instruction: string;
  output_description: string;
  category: string;
  branch: string;
  keywords: string[];
  review: ReviewStatus;
  review_note: string | null;
  revision: number;
  input_image_url: string;
  output_image_url: string;
  provenance: Record<string, unknown>;
}

export interface RecordsPage {
  items: RecordSummary[];
  total: number;
  page: number;
  page_size: number;
}

export interface StatsPayload {
  total: number;
  by_status: Record<string, number>;
  by_category: Record<string, number>;
  by_branch: Record<string, number>;
  pending_jobs: number;
}

export interface DecisionRequest {
  action: ReviewAction;
  expected_revision: number;
  reviewer?: string;
  revised_instruction?: string | null;
  regeneration_hint?: string | null;
}

export interface QueueFilters {
  status?: ReviewStatus;
  branch?: string;
  category?: string;
  page?: number;
  page_size?: number;
}
