/** Shared types mirroring the triage service's wire format. */

export const CANONICAL_LABELS = [
  "Acne",
  "Alopecia",
  "Crust",
  "Erythema",
  "Leukoderma",
  "PigmentedMaculae",
  "Pustule",
  "Ulcer",
  "Wheal",
] as const;

export type DiseaseLabel = (typeof CANONICAL_LABELS)[number];

export type Verdict = "CONFIRM" | "CORRECT" | "REJECT";

export interface ScoreEntry {
  label: string;
  probability: number;
}

export interface QueueCase {
  case_id: string;
  thumbnail: string;
  predicted_label: string;
  top_scores: ScoreEntry[];
  submitted_at: string;
}

export interface QueuePage {
  cases: QueueCase[];
  next_cursor: number | null;
  queue_depth: number;
}

export interface CaseDetail {
  case_id: string;
  image_ref: string;
  submitted_at: string;
  predicted_label: string;
  scores: ScoreEntry[];
  model_digest: string;
  status: string;
  final_label: string | null;
}

export interface DecisionPayload {
  verdict: Verdict;
  corrected_label?: string;
  vetter_id: string;
  note?: string;
}
