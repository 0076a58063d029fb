/** Typed client for the triage service HTTP API.
 *
 * Every mutation the console performs goes through this module; there is
 * no other write path. The fetch implementation is injectable so tests
 * can run against an in-memory fixture service.
 */

import type { CaseDetail, DecisionPayload, QueuePage } from "./types.js";

export interface FetchResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<FetchResponse>;

/** The service answered, but refused the request. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** 409: somebody else vetted the case first. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
    this.name = "ConflictError";
  }
}

/** The service could not be reached at all. */
export class ServiceUnreachableError extends Error {
  constructor(cause: unknown) {
    super(`service unreachable: ${String(cause)}`);
    this.name = "ServiceUnreachableError";
  }
}

async function detail(response: FetchResponse): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}

export class ConsoleApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async request(path: string, init?: RequestInit): Promise<FetchResponse> {
    let response: FetchResponse;
    try {
      response = await this.fetchImpl(this.url(path), init);
    } catch (err) {
      throw new ServiceUnreachableError(err);
    }
    return response;
  }

  async fetchQueue(cursor = 0, limit = 20): Promise<QueuePage> {
    const response = await this.request(
      `/cases?status=pending_vetting&cursor=${cursor}&limit=${limit}`,
    );
    if (!response.ok) throw new ApiError(response.status, await detail(response));
    return (await response.json()) as QueuePage;
  }

  async fetchCase(caseId: string): Promise<CaseDetail> {
    const response = await this.request(`/cases/${caseId}`);
    if (!response.ok) throw new ApiError(response.status, await detail(response));
    return (await response.json()) as CaseDetail;
  }

  async submitDecision(caseId: string, payload: DecisionPayload): Promise<CaseDetail> {
    const response = await this.request(`/cases/${caseId}/vetting`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (response.status === 409) throw new ConflictError(await detail(response));
    if (!response.ok) throw new ApiError(response.status, await detail(response));
    return (await response.json()) as CaseDetail;
  }

  async queueDepth(): Promise<number> {
    const response = await this.request("/health");
    if (!response.ok) throw new ApiError(response.status, await detail(response));
    const body = (await response.json()) as { queue_depth: number };
    return body.queue_depth;
  }
}
