/** Polling stats panel; degrades to a notice when the endpoint is down. */

import type { ApiClient } from "./api.js";
import type { StatsPayload } from "./types.js";

export class StatsPanel {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly intervalMs: number = 10_000,
  ) {}

  start(): void {
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refresh(): Promise<void> {
    try {
      const stats = await this.api.fetchStats();
      this.render(stats);
    } catch {
      this.root.innerHTML = `<span class="stats-unavailable" data-testid="stats-unavailable">stats unavailable</span>`;
    }
  }

  private render(stats: StatsPayload): void {
    const statuses = ["Pending", "Approved", "Rejected", "Revised"];
    const badges = statuses
      .map((status) => {
        const count = stats.by_status[status] ?? 0;
        return `<span class="stat-badge stat-${status.toLowerCase()}" data-testid="stat-${status}">${status}: <b>${count}</b></span>`;
      })
      .join(" ");
    this.root.innerHTML = `${badges} <span class="stat-badge" data-testid="stat-jobs">regen jobs: <b>${stats.pending_jobs}</b></span>`;
  }
}
