/** In-memory fixture of the triage service, exposed as a fetch-compatible
 * function. Mirrors the endpoints and status codes the console relies on,
 * with switches for failure injection. */

import type { FetchLike, FetchResponse } from "../src/api.js";
import type { ScoreEntry } from "../src/types.js";

export interface FixtureCase {
  case_id: string;
  image_ref: string;
  submitted_at: string;
  predicted_label: string;
  scores: ScoreEntry[];
  model_digest: string;
  status: string;
  final_label: string | null;
}

export interface RecordedDecision {
  case_id: string;
  verdict: string;
  corrected_label?: string;
  vetter_id: string;
  note?: string;
}

function response(status: number, body: unknown): FetchResponse {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  };
}

export class FixtureService {
  readonly cases = new Map<string, FixtureCase>();
  readonly decisions: RecordedDecision[] = [];
  failNextWith: number | null = null;
  unreachable = false;

  addPending(caseId: string, predictedLabel: string, submittedAt: string, scores?: ScoreEntry[]): void {
    this.cases.set(caseId, {
      case_id: caseId,
      image_ref: `/img/${caseId}.png`,
      submitted_at: submittedAt,
      predicted_label: predictedLabel,
      scores:
        scores ??
        [
          { label: predictedLabel, probability: 0.91234 },
          { label: "Wheal", probability: 0.05 },
          { label: "Ulcer", probability: 0.02 },
        ],
      model_digest: "fixture-digest",
      status: "PENDING_VETTING",
      final_label: null,
    });
  }

  /** Vet a case out of band, as a concurrent clinician would. */
  vetDirectly(caseId: string, finalLabel: string): void {
    const found = this.cases.get(caseId);
    if (!found) throw new Error(`fixture has no case ${caseId}`);
    found.status = "VETTED";
    found.final_label = finalLabel;
  }

  queueDepth(): number {
    return [...this.cases.values()].filter((c) => c.status === "PENDING_VETTING").length;
  }

  get fetch(): FetchLike {
    return async (url: string, init?: RequestInit) => this.handle(url, init);
  }

  private async handle(url: string, init?: RequestInit): Promise<FetchResponse> {
    if (this.unreachable) throw new TypeError("fetch failed");
    if (this.failNextWith !== null) {
      const status = this.failNextWith;
      this.failNextWith = null;
      return response(status, { detail: "injected failure" });
    }
    const parsed = new URL(url, "http://fixture");
    const method = init?.method ?? "GET";
    const vettingMatch = parsed.pathname.match(/^\/cases\/([^/]+)\/vetting$/);
    if (vettingMatch && method === "POST") {
      return this.recordVetting(vettingMatch[1], JSON.parse(String(init?.body ?? "{}")));
    }
    const caseMatch = parsed.pathname.match(/^\/cases\/([^/]+)$/);
    if (caseMatch && method === "GET") {
      const found = this.cases.get(caseMatch[1]);
      return found ? response(200, found) : response(404, { detail: "unknown case" });
    }
    if (parsed.pathname === "/cases" && method === "GET") {
      return this.queuePage(parsed);
    }
    if (parsed.pathname === "/health") {
      return response(200, { status: "ok", model_digest: "fixture-digest", queue_depth: this.queueDepth() });
    }
    return response(404, { detail: `no route for ${method} ${parsed.pathname}` });
  }

  private queuePage(parsed: URL): FetchResponse {
    const cursor = Number(parsed.searchParams.get("cursor") ?? "0");
    const limit = Number(parsed.searchParams.get("limit") ?? "20");
    const pending = [...this.cases.values()]
      .filter((c) => c.status === "PENDING_VETTING")
      .sort((a, b) => a.submitted_at.localeCompare(b.submitted_at)); // oldest first
    const page = pending.slice(cursor, cursor + limit);
    return response(200, {
      cases: page.map((c) => ({
        case_id: c.case_id,
        thumbnail: `/cases/${c.case_id}/image`,
        predicted_label: c.predicted_label,
        top_scores: c.scores.slice(0, 3),
        submitted_at: c.submitted_at,
      })),
      next_cursor: cursor + limit < pending.length ? cursor + limit : null,
      queue_depth: pending.length,
    });
  }

  private recordVetting(caseId: string, body: RecordedDecision): FetchResponse {
    const found = this.cases.get(caseId);
    if (!found) return response(404, { detail: "unknown case" });
    if (found.status !== "PENDING_VETTING") {
      return response(409, { detail: `case ${caseId} already vetted` });
    }
    if (!body.vetter_id) return response(400, { detail: "vetter_id required" });
    if (body.verdict === "CORRECT" && !body.corrected_label) {
      return response(400, { detail: "corrected_label required" });
    }
    if (body.verdict === "CONFIRM") {
      found.status = "VETTED";
      found.final_label = found.predicted_label;
    } else if (body.verdict === "CORRECT") {
      found.status = "VETTED";
      found.final_label = body.corrected_label ?? null;
    } else if (body.verdict === "REJECT") {
      found.status = "REJECTED";
    } else {
      return response(400, { detail: `unknown verdict ${body.verdict}` });
    }
    this.decisions.push({ ...body, case_id: caseId });
    return response(200, found);
  }
}
