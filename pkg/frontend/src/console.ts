/** Clinician vetting console: queue rendering and decision submission.
 *
 * Framework-free DOM code so the whole surface is testable under jsdom.
 * State changes reach the server only via ConsoleApi; a failed request
 * never discards what the clinician typed.
 */

import { ConflictError, ConsoleApi, ServiceUnreachableError } from "./api.js";
import { emptyForm, formValid, labelPickerEnabled, toPayload, type DecisionFormState } from "./form.js";
import { CANONICAL_LABELS, type DiseaseLabel, type QueueCase, type Verdict } from "./types.js";

export interface ConsoleOptions {
  vetterId: string;
  pageSize?: number;
  now?: () => number;
}

export function formatAge(submittedAt: string, nowMs: number): string {
  const seconds = Math.max(0, Math.floor((nowMs - Date.parse(submittedAt)) / 1000));
  if (seconds < 60) return "just now";
  const minutes = Math.floor(seconds / 60);
  if (minutes < 60) return `${minutes}m ago`;
  const hours = Math.floor(minutes / 60);
  if (hours < 24) return `${hours}h ago`;
  return `${Math.floor(hours / 24)}d ago`;
}

export function formatScore(probability: number): string {
  return probability.toFixed(3);
}

export class VettingConsole {
  private cursor = 0;
  private nextCursor: number | null = null;
  private depth = 0;
  private readonly forms = new Map<string, DecisionFormState>();
  private readonly pageSize: number;
  private readonly now: () => number;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ConsoleApi,
    private readonly options: ConsoleOptions,
  ) {
    this.pageSize = options.pageSize ?? 20;
    this.now = options.now ?? (() => Date.now());
    this.root.innerHTML = [
      '<header class="console-header">',
      "  <h1>Vetting queue</h1>",
      '  <span class="queue-depth">0 pending</span>',
      '  <button type="button" class="refresh">Refresh</button>',
      "</header>",
      '<div class="banner-slot"></div>',
      '<div class="queue"></div>',
      '<div class="pager"></div>',
    ].join("\n");
    this.queryOne(".refresh").addEventListener("click", () => void this.refresh(this.cursor));
  }

  get displayedDepth(): number {
    return this.depth;
  }

  private queryOne<T extends HTMLElement = HTMLElement>(selector: string): T {
    const node = this.root.querySelector<T>(selector);
    if (!node) throw new Error(`console markup missing ${selector}`);
    return node;
  }

  /** Fetch and render one page of the pending queue, oldest first. */
  async refresh(cursor = 0): Promise<void> {
    let page;
    try {
      page = await this.api.fetchQueue(cursor, this.pageSize);
    } catch (err) {
      this.showBanner(this.describeFailure(err), () => void this.refresh(cursor));
      return; // queue region stays as it was
    }
    this.clearBanner();
    this.cursor = cursor;
    this.nextCursor = page.next_cursor;
    this.depth = page.queue_depth;
    this.queryOne(".queue-depth").textContent = `${page.queue_depth} pending`;
    this.renderQueue(page.cases);
    this.renderPager();
  }

  private describeFailure(err: unknown): string {
    if (err instanceof ServiceUnreachableError) return "Service unreachable. Check the triage service and retry.";
    return `Queue fetch failed: ${err instanceof Error ? err.message : String(err)}`;
  }

  private showBanner(message: string, retry: () => void): void {
    const slot = this.queryOne(".banner-slot");
    slot.innerHTML = '<div class="error-banner" role="alert"><span class="error-message"></span> <button type="button" class="retry">Retry</button></div>';
    (slot.querySelector(".error-message") as HTMLElement).textContent = message;
    (slot.querySelector(".retry") as HTMLButtonElement).addEventListener("click", retry);
  }

  private clearBanner(): void {
    this.queryOne(".banner-slot").innerHTML = "";
  }

  private renderQueue(cases: QueueCase[]): void {
    const queue = this.queryOne(".queue");
    queue.innerHTML = "";
    this.forms.clear();
    if (cases.length === 0) {
      queue.innerHTML = '<p class="empty-state">No cases pending review.</p>';
      return;
    }
    for (const queued of cases) {
      queue.appendChild(this.renderCard(queued));
    }
  }

  private renderPager(): void {
    const pager = this.queryOne(".pager");
    pager.innerHTML = "";
    if (this.cursor > 0) {
      const first = document.createElement("button");
      first.type = "button";
      first.className = "first-page";
      first.textContent = "Back to start";
      first.addEventListener("click", () => void this.refresh(0));
      pager.appendChild(first);
    }
    if (this.nextCursor !== null) {
      const more = document.createElement("button");
      more.type = "button";
      more.className = "next-page";
      more.textContent = "Older page";
      const next = this.nextCursor;
      more.addEventListener("click", () => void this.refresh(next));
      pager.appendChild(more);
    }
  }

  private renderCard(queued: QueueCase): HTMLElement {
    const card = document.createElement("article");
    card.className = "case-card";
    card.dataset.caseId = queued.case_id;

    const image = document.createElement("img");
    image.className = "thumb";
    image.src = this.api.baseUrl.replace(/\/$/, "") + queued.thumbnail;
    image.alt = `case ${queued.case_id}`;
    // thumbnail in the queue; full resolution on click (low-texture
    // conditions need the detail)
    image.addEventListener("click", () => image.classList.toggle("expanded"));
    card.appendChild(image);

    const meta = document.createElement("div");
    meta.className = "meta";
    const predicted = document.createElement("p");
    predicted.className = "predicted";
    predicted.textContent = `Predicted: ${queued.predicted_label}`;
    meta.appendChild(predicted);
    const scores = document.createElement("ul");
    scores.className = "scores";
    for (const entry of queued.top_scores) {
      const row = document.createElement("li");
      row.className = "score-row";
      row.textContent = `${entry.label} ${formatScore(entry.probability)}`;
      scores.appendChild(row);
    }
    meta.appendChild(scores);
    const age = document.createElement("span");
    age.className = "age";
    age.textContent = formatAge(queued.submitted_at, this.now());
    meta.appendChild(age);
    card.appendChild(meta);

    card.appendChild(this.renderForm(queued.case_id));
    const banner = document.createElement("div");
    banner.className = "card-banner";
    card.appendChild(banner);
    return card;
  }

  private renderForm(caseId: string): HTMLFormElement {
    const state = emptyForm(this.options.vetterId);
    this.forms.set(caseId, state);

    const form = document.createElement("form");
    form.className = "decision";

    const verdicts: Verdict[] = ["CONFIRM", "CORRECT", "REJECT"];
    for (const verdict of verdicts) {
      const label = document.createElement("label");
      label.className = `verdict-${verdict.toLowerCase()}`;
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `verdict-${caseId}`;
      radio.value = verdict;
      radio.addEventListener("change", () => {
        state.verdict = verdict;
        if (verdict !== "CORRECT") state.correctedLabel = null;
        this.syncForm(form, state);
      });
      label.append(radio, ` ${verdict.toLowerCase()}`);
      form.appendChild(label);
    }

    const picker = document.createElement("select");
    picker.className = "label-picker";
    picker.disabled = true;
    const placeholder = document.createElement("option");
    placeholder.value = "";
    placeholder.textContent = "corrected label...";
    picker.appendChild(placeholder);
    for (const label of CANONICAL_LABELS) {
      const option = document.createElement("option");
      option.value = label;
      option.textContent = label;
      picker.appendChild(option);
    }
    picker.addEventListener("change", () => {
      state.correctedLabel = (picker.value || null) as DiseaseLabel | null;
      this.syncForm(form, state);
    });
    form.appendChild(picker);

    const note = document.createElement("input");
    note.type = "text";
    note.className = "note";
    note.placeholder = "note (optional)";
    note.addEventListener("input", () => {
      state.note = note.value;
    });
    form.appendChild(note);

    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "submit";
    submit.disabled = true;
    submit.textContent = "Submit decision";
    form.appendChild(submit);

    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitDecision(caseId, form);
    });
    return form;
  }

  private syncForm(form: HTMLFormElement, state: DecisionFormState): void {
    const picker = form.querySelector<HTMLSelectElement>(".label-picker");
    const submit = form.querySelector<HTMLButtonElement>(".submit");
    if (picker) {
      picker.disabled = !labelPickerEnabled(state);
      if (picker.disabled) picker.value = "";
    }
    if (submit) submit.disabled = !formValid(state);
  }

  /** POST the decision; on success the case leaves the queue and the depth
   * reflects the server's count again. */
  async submitDecision(caseId: string, form: HTMLFormElement): Promise<void> {
    const state = this.forms.get(caseId);
    if (!state || !formValid(state)) return; // client-side validation gate
    const card = form.closest<HTMLElement>(".case-card");
    const banner = card?.querySelector<HTMLElement>(".card-banner") ?? null;
    try {
      await this.api.submitDecision(caseId, toPayload(state));
    } catch (err) {
      if (err instanceof ConflictError) {
        await this.flagConflict(caseId, card, banner);
        return;
      }
      if (banner) {
        banner.textContent = "Submission failed; your decision was kept. Retry when the service is back.";
        banner.classList.add("submit-error");
      }
      return; // form contents preserved
    }
    await this.refresh(this.cursor);
  }

  private async flagConflict(
    caseId: string,
    card: HTMLElement | null,
    banner: HTMLElement | null,
  ): Promise<void> {
    let status = "already vetted";
    try {
      const refreshed = await this.api.fetchCase(caseId);
      status = `already vetted elsewhere (status ${refreshed.status}${refreshed.final_label ? `, label ${refreshed.final_label}` : ""})`;
    } catch {
      // keep the generic flag if the refresh itself fails
    }
    if (card) card.classList.add("conflict");
    if (banner) {
      banner.textContent = status;
      banner.classList.add("conflict-flag");
    }
  }
}
