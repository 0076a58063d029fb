/** API client behavior: routing, error taxonomy. */

import { describe, expect, it } from "vitest";

import { ApiError, ConflictError, ConsoleApi, ServiceUnreachableError } from "../src/api.js";
import { FixtureService } from "./fixture_service.js";

const BASE = "http://fixture";

describe("ConsoleApi", () => {
  it("fetches the pending queue with cursor and limit", async () => {
    const fixture = new FixtureService();
    fixture.addPending("a", "Acne", "2026-08-08T01:00:00+00:00");
    fixture.addPending("b", "Wheal", "2026-08-08T02:00:00+00:00");
    const api = new ConsoleApi(BASE, fixture.fetch);
    const page = await api.fetchQueue(1, 1);
    expect(page.queue_depth).toBe(2);
    expect(page.cases.map((c) => c.case_id)).toEqual(["b"]);
    expect(page.next_cursor).toBeNull();
  });

  it("maps 409 to ConflictError", async () => {
    const fixture = new FixtureService();
    fixture.addPending("a", "Acne", "2026-08-08T01:00:00+00:00");
    fixture.vetDirectly("a", "Acne");
    const api = new ConsoleApi(BASE, fixture.fetch);
    await expect(
      api.submitDecision("a", { verdict: "CONFIRM", vetter_id: "dr" }),
    ).rejects.toBeInstanceOf(ConflictError);
  });

  it("maps other non-2xx to ApiError with the service detail", async () => {
    const fixture = new FixtureService();
    const api = new ConsoleApi(BASE, fixture.fetch);
    await expect(api.fetchCase("missing")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "unknown case",
    });
    expect(new ApiError(500, "x")).toBeInstanceOf(Error);
  });

  it("wraps transport failures as ServiceUnreachableError", async () => {
    const fixture = new FixtureService();
    fixture.unreachable = true;
    const api = new ConsoleApi(BASE, fixture.fetch);
    await expect(api.fetchQueue()).rejects.toBeInstanceOf(ServiceUnreachableError);
  });

  it("reads queue depth from /health", async () => {
    const fixture = new FixtureService();
    fixture.addPending("a", "Acne", "2026-08-08T01:00:00+00:00");
    const api = new ConsoleApi(BASE, fixture.fetch);
    expect(await api.queueDepth()).toBe(1);
  });

  it("tolerates a trailing slash in the base url", async () => {
    const fixture = new FixtureService();
    const api = new ConsoleApi(`${BASE}/`, fixture.fetch);
    expect(await api.queueDepth()).toBe(0);
  });
});
