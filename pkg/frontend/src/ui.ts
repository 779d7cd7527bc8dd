/**
 * Review queue UI.
 *
 * Reviewers page through Pending triplets (input image, instruction,
 * output image), pick an action per card, and submit. The UI never edits
 * dataset state itself: every mutation is a POST to the decision endpoint
 * carrying the card's revision counter, and a 409 always surfaces as a
 * refresh dialog rather than being retried silently.
 */

import { ApiClient, ConflictError, RequestInvalidError } from "./api.js";
import { StatsPanel } from "./stats.js";
import type { QueueFilters, RecordSummary, ReviewAction } from "./types.js";

const PAGE_SIZE = 10;

interface CardState {
  record: RecordSummary;
  action: ReviewAction | null;
  revisedText: string;
  hint: string;
  error: string | null;
}

export interface ReviewAppOptions {
  reviewer?: string;
  statsIntervalMs?: number;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export class ReviewApp {
  private cards: CardState[] = [];
  private total = 0;
  private page = 1;
  private selected = 0;
  private queueError: string | null = null;
  private conflict: { card: CardState; message: string } | null = null;
  private filters: QueueFilters = {};
  private readonly reviewer: string;
  readonly stats: StatsPanel;
  private keyHandler = (event: KeyboardEvent) => this.onKey(event);

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    options: ReviewAppOptions = {},
  ) {
    this.reviewer = options.reviewer ?? "reviewer";
    this.renderShell();
    this.stats = new StatsPanel(
      api,
      this.root.querySelector("#stats-panel") as HTMLElement,
      options.statsIntervalMs ?? 10_000,
    );
  }

  async start(): Promise<void> {
    this.stats.start();
    document.addEventListener("keydown", this.keyHandler);
    await this.loadQueue();
  }

  stop(): void {
    this.stats.stop();
    document.removeEventListener("keydown", this.keyHandler);
  }

  setFilters(filters: QueueFilters): Promise<void> {
    this.filters = { ...filters };
    this.page = 1;
    return this.loadQueue();
  }

  async loadQueue(): Promise<void> {
    this.queueError = null;
    this.renderQueue(true);
    try {
      const pageData = await this.api.fetchQueue({
        status: "Pending",
        page: this.page,
        page_size: PAGE_SIZE,
        ...this.filters,
      });
      this.cards = pageData.items.map((record) => ({
        record,
        action: null,
        revisedText: record.instruction,
        hint: "",
        error: null,
      }));
      this.total = pageData.total;
      this.selected = 0;
    } catch (error) {
      this.queueError = error instanceof Error ? error.message : String(error);
    }
    this.renderQueue(false);
  }

  // -- rendering -------------------------------------------------------------

  private renderShell(): void {
    this.root.innerHTML = `
      <header class="topbar">
        <h1>review queue</h1>
        <div id="stats-panel" class="stats" data-testid="stats-panel"></div>
      </header>
      <div id="queue-banner"></div>
      <main id="queue" data-testid="queue"></main>
      <div id="conflict-dialog-host"></div>
    `;
  }

  private renderQueue(loading: boolean): void {
    const queue = this.root.querySelector("#queue") as HTMLElement;
    const banner = this.root.querySelector("#queue-banner") as HTMLElement;
    if (loading) {
      banner.innerHTML = `<div class="banner loading" data-testid="loading">loading…</div>`;
      return;
    }
    if (this.queueError !== null) {
      banner.innerHTML = `
        <div class="banner error" data-testid="retry-banner">
          queue unavailable: ${escapeHtml(this.queueError)}
          <button data-testid="retry-button">retry</button>
        </div>`;
      banner.querySelector("button")?.addEventListener("click", () => void this.loadQueue());
      queue.innerHTML = "";
      return;
    }
    banner.innerHTML = "";
    if (this.cards.length === 0) {
      queue.innerHTML = `<div class="empty" data-testid="empty-queue">nothing pending; the queue is clear</div>`;
      this.renderConflict();
      return;
    }
    queue.innerHTML = "";
    this.cards.forEach((card, index) => queue.appendChild(this.buildCard(card, index)));
    this.renderConflict();
  }

  private buildCard(card: CardState, index: number): HTMLElement {
    const el = document.createElement("section");
    el.className = `card${index === this.selected ? " selected" : ""}`;
    el.dataset.testid = "card";
    el.dataset.recordId = card.record.id;
    const rec = card.record;
    const provenance = escapeHtml(JSON.stringify(rec.provenance));
    el.innerHTML = `
      <div class="card-head">
        <span class="card-id">${escapeHtml(rec.id)}</span>
        <span class="tag">${escapeHtml(rec.branch)}</span>
        <span class="tag">${escapeHtml(rec.category)}</span>
        <span class="tag rev" data-testid="revision">rev ${rec.revision}</span>
      </div>
      <div class="triplet">
        <figure><img src="${rec.input_image_url}" alt="input image"><figcaption>input</figcaption></figure>
        <div class="instruction" data-testid="instruction">${escapeHtml(rec.instruction)}</div>
        <figure><img src="${rec.output_image_url}" alt="output image"><figcaption>output</figcaption></figure>
      </div>
      <div class="description">${escapeHtml(rec.output_description)}</div>
      <div class="provenance" title="${provenance}">provenance: ${provenance.slice(0, 120)}</div>
      <form class="controls">
        <label><input type="radio" name="action" value="Approve"> approve</label>
        <label><input type="radio" name="action" value="Reject"> reject</label>
        <label><input type="radio" name="action" value="ReviseInstruction"> revise</label>
        <label><input type="radio" name="action" value="RequestRegeneration"> regenerate</label>
        <textarea class="revise-text" data-testid="revise-text" rows="2" hidden></textarea>
        <input class="hint-text" data-testid="hint-text" placeholder="prompt hint for regeneration" hidden>
        <button type="submit" data-testid="submit" disabled>submit</button>
        <span class="card-error" data-testid="card-error">${card.error ? escapeHtml(card.error) : ""}</span>
      </form>
    `;
    const form = el.querySelector("form") as HTMLFormElement;
    const revise = el.querySelector(".revise-text") as HTMLTextAreaElement;
    const hint = el.querySelector(".hint-text") as HTMLInputElement;
    const submit = el.querySelector("[data-testid=submit]") as HTMLButtonElement;
    revise.value = card.revisedText;
    hint.value = card.hint;

    const sync = () => {
      revise.hidden = card.action !== "ReviseInstruction";
      hint.hidden = card.action !== "RequestRegeneration";
      submit.disabled = !this.submittable(card);
    };
    form.querySelectorAll<HTMLInputElement>("input[name=action]").forEach((radio) => {
      radio.checked = radio.value === card.action;
      radio.addEventListener("change", () => {
        card.action = radio.value as ReviewAction;
        sync();
      });
    });
    revise.addEventListener("input", () => {
      card.revisedText = revise.value;
      sync();
    });
    hint.addEventListener("input", () => {
      card.hint = hint.value;
    });
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitCard(card);
    });
    el.addEventListener("click", () => {
      this.selected = index;
    });
    sync();
    return el;
  }

  private submittable(card: CardState): boolean {
    if (card.action === null) return false;
    if (card.action === "ReviseInstruction" && card.revisedText.trim() === "") return false;
    return true;
  }

  // -- decisions ----------------------------------------------------------------

  async submitCard(card: CardState): Promise<void> {
    if (!this.submittable(card) || card.action === null) return;
    const action = card.action;
    try {
      await this.api.submitDecision(card.record.id, {
        action,
        expected_revision: card.record.revision,
        reviewer: this.reviewer,
        revised_instruction: action === "ReviseInstruction" ? card.revisedText.trim() : null,
        regeneration_hint:
          action === "RequestRegeneration" && card.hint.trim() !== "" ? card.hint.trim() : null,
      });
      this.cards = this.cards.filter((c) => c !== card);
      this.total = Math.max(0, this.total - 1);
      this.selected = Math.min(this.selected, Math.max(0, this.cards.length - 1));
      void this.stats.refresh();
    } catch (error) {
      if (error instanceof ConflictError) {
        await this.surfaceConflict(card, error.message);
      } else if (error instanceof RequestInvalidError) {
        card.error = error.message;
      } else {
        card.error = error instanceof Error ? error.message : String(error);
      }
    }
    this.renderQueue(false);
  }

  /** A 409 always reaches the reviewer: refetch, swap in the fresh card,
   * and show a dialog explaining that someone else got there first. */
  private async surfaceConflict(card: CardState, message: string): Promise<void> {
    let refreshed: RecordSummary | null = null;
    try {
      refreshed = await this.api.fetchRecord(card.record.id);
    } catch {
      refreshed = null;
    }
    if (refreshed === null || refreshed.review !== "Pending") {
      this.cards = this.cards.filter((c) => c !== card);
      this.total = Math.max(0, this.total - 1);
    } else {
      card.record = refreshed;
      card.action = null;
      card.revisedText = refreshed.instruction;
      card.error = null;
    }
    this.conflict = { card, message };
  }

  private renderConflict(): void {
    const host = this.root.querySelector("#conflict-dialog-host") as HTMLElement;
    if (this.conflict === null) {
      host.innerHTML = "";
      return;
    }
    const { card, message } = this.conflict;
    host.innerHTML = `
      <div class="dialog-backdrop" data-testid="conflict-dialog">
        <div class="dialog">
          <h2>decision conflict</h2>
          <p>${escapeHtml(card.record.id)}: another reviewer acted on this record.</p>
          <p class="detail">${escapeHtml(message)}</p>
          <p>The card has been refreshed to revision ${card.record.revision}; please re-check it.</p>
          <button data-testid="conflict-dismiss">ok</button>
        </div>
      </div>`;
    host.querySelector("button")?.addEventListener("click", () => {
      this.conflict = null;
      this.renderConflict();
    });
  }

  // -- keyboard throughput ---------------------------------------------------------

  private onKey(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) return;
    const card = this.cards[this.selected];
    switch (event.key) {
      case "a":
        if (card) {
          card.action = "Approve";
          void this.submitCard(card);
        }
        break;
      case "x":
        if (card) {
          card.action = "Reject";
          void this.submitCard(card);
        }
        break;
      case "j":
      case "n":
        this.selected = Math.min(this.selected + 1, Math.max(0, this.cards.length - 1));
        this.renderQueue(false);
        break;
      case "k":
      case "p":
        this.selected = Math.max(0, this.selected - 1);
        this.renderQueue(false);
        break;
      default:
        break;
    }
  }

  // exposed for tests
  get visibleCards(): readonly CardState[] {
    return this.cards;
  }
}
