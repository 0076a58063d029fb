/** Decision form state and validation, kept free of DOM concerns.
 *
 * Submission must stay disabled until the state satisfies the service's
 * decision invariants: a verdict is chosen, a vetter id is present, and
 * CORRECT carries a corrected label (other verdicts must not).
 */

import { CANONICAL_LABELS, type DecisionPayload, type DiseaseLabel, type Verdict } from "./types.js";

export interface DecisionFormState {
  verdict: Verdict | null;
  correctedLabel: DiseaseLabel | null;
  note: string;
  vetterId: string;
}

export function emptyForm(vetterId: string): DecisionFormState {
  return { verdict: null, correctedLabel: null, note: "", vetterId };
}

export function labelPickerEnabled(state: DecisionFormState): boolean {
  return state.verdict === "CORRECT";
}

export function formValid(state: DecisionFormState): boolean {
  if (!state.verdict) return false;
  if (state.vetterId.trim() === "") return false;
  if (state.verdict === "CORRECT") {
    return state.correctedLabel !== null && CANONICAL_LABELS.includes(state.correctedLabel);
  }
  return true;
}

export function toPayload(state: DecisionFormState): DecisionPayload {
  if (!formValid(state)) {
    throw new Error("decision form is not valid for submission");
  }
  const payload: DecisionPayload = {
    verdict: state.verdict as Verdict,
    vetter_id: state.vetterId.trim(),
  };
  if (state.verdict === "CORRECT" && state.correctedLabel) {
    payload.corrected_label = state.correctedLabel;
  }
  if (state.note.trim() !== "") {
    payload.note = state.note.trim();
  }
  return payload;
}
