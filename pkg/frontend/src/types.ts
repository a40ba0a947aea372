export type Choice = "left" | "right" | "tie";

export interface Progress {
  done: number;
  total: number;
}

export interface TurnView {
  index: number;
  speaker: string;
  text: string;
}

export interface DialogueView {
  id: string;
  turns: TurnView[];
}

export interface SummaryView {
  sentences: string[];
}

export interface PairPayload {
  status: "ok";
  pair_id: string;
  dialogue: DialogueView;
  left: SummaryView;
  right: SummaryView;
  progress: Progress;
}

export interface NoTasksPayload {
  status: "no_tasks";
  progress: Progress;
}

export type NextResponse = PairPayload | NoTasksPayload;

export interface SubmitAck {
  record_id: string;
  progress: Progress;
}

export interface AttributionTask {
  dialogue: DialogueView;
  summary: SummaryView;
}

export interface AttributionRecord {
  sentence_index: number;
  turn_indices: number[];
}

export interface SessionState {
  annotatorId: string;
  experimentId: string;
  pending: boolean; // at most one in-flight submission
  progress: Progress;
}
