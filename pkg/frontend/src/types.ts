/** Wire types for the /v1 session API. Everything rendered comes from these
 * payloads verbatim; the client computes no scores of its own. */

export interface RankingEntry {
  disease_id: string;
  name: string;
  energy: number;
  mass: number;
  survivor: boolean;
}

export interface GapView {
  finding_id: string;
  clause: string;
  kind: "symptom" | "trend";
  allows_severity: boolean;
  priority: number;
}

export interface QuestionView {
  text: string;
  round: number;
  gaps: GapView[];
}

export interface TerminalView {
  reason: string;
  uncertainty_flag: boolean;
}

export interface EvidenceView {
  positive: string[];
  negative: string[];
  asked_unresolved: string[];
}

export interface SessionView {
  session_id: string;
  round: number;
  r_max: number;
  ranking: RankingEntry[];
  entropy: number;
  max_mass: number;
  question: QuestionView | null;
  terminal: TerminalView | null;
  evidence: EvidenceView;
  config_hash: string;
}

export interface AnswerSelection {
  gap_id: string;
  value: "yes" | "no" | "unknown";
  severity?: string;
}

export interface TraceRound {
  round: number;
  question: { text: string; gaps: { finding_id: string; clause: string }[] } | null;
  answer: unknown;
  delta: {
    add_positive: string[];
    add_negative: string[];
    add_unresolved: string[];
    severities: Record<string, string>;
  };
  ranking: { entries: { disease_id: string; energy: number; mass: number }[]; entropy: number };
}

export interface SessionTrace {
  round0: { ranking: { entries: { disease_id: string; mass: number }[]; entropy: number } };
  rounds: TraceRound[];
  terminal: TerminalView | null;
  final_round: number;
}

export const SEVERITY_LEVELS = [
  "None",
  "Minor",
  "Mild",
  "Moderate",
  "Medium",
  "Severe",
  "Extreme",
  "Critical",
] as const;
