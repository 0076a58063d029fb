/** Decision form validation matrix. */

import { describe, expect, it } from "vitest";

import { emptyForm, formValid, labelPickerEnabled, toPayload } from "../src/form.js";
import { CANONICAL_LABELS } from "../src/types.js";

describe("decision form", () => {
  it("starts invalid with no verdict", () => {
    const form = emptyForm("dr");
    expect(formValid(form)).toBe(false);
    expect(labelPickerEnabled(form)).toBe(false);
  });

  it("CONFIRM and REJECT are valid without a corrected label", () => {
    expect(formValid({ ...emptyForm("dr"), verdict: "CONFIRM" })).toBe(true);
    expect(formValid({ ...emptyForm("dr"), verdict: "REJECT" })).toBe(true);
  });

  it("CORRECT requires a corrected label from the canonical set", () => {
    const base = { ...emptyForm("dr"), verdict: "CORRECT" as const };
    expect(formValid(base)).toBe(false);
    expect(labelPickerEnabled(base)).toBe(true);
    expect(formValid({ ...base, correctedLabel: "Erythema" })).toBe(true);
  });

  it("a blank vetter id blocks submission", () => {
    expect(formValid({ ...emptyForm("  "), verdict: "CONFIRM" })).toBe(false);
  });

  it("payload carries only the fields the service expects", () => {
    expect(toPayload({ ...emptyForm("dr"), verdict: "CONFIRM" })).toEqual({
      verdict: "CONFIRM",
      vetter_id: "dr",
    });
    expect(
      toPayload({
        verdict: "CORRECT",
        correctedLabel: "Ulcer",
        note: " borderline ",
        vetterId: "dr-2",
      }),
    ).toEqual({
      verdict: "CORRECT",
      corrected_label: "Ulcer",
      vetter_id: "dr-2",
      note: "borderline",
    });
  });

  it("toPayload refuses an invalid form", () => {
    expect(() => toPayload(emptyForm("dr"))).toThrow("not valid");
  });

  it("canonical label list is the nine-member set", () => {
    expect(CANONICAL_LABELS).toHaveLength(9);
    expect([...CANONICAL_LABELS]).toEqual([...CANONICAL_LABELS].slice().sort());
  });
});
