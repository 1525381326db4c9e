// Wire types mirrored from the service's JSON API.  The view layer never
// derives game facts itself; everything here is a verbatim snapshot.

export type Domain = "connect4" | "lunar_lander";

export type Condition =
  | "none"
  | "action"
  | "value"
  | "concept_raw"
  | "concept_inf"
  | "concept_teg"
  | "concept_inf_teg";

export type Stage = "practice" | "pretest" | "explanation" | "posttest" | "free";

export interface BoardJson {
  grid: number[][]; // 6 rows x 7 cols, row 0 at the bottom; 0 empty, 1 human, 2 agent
  to_move: number;
}

export interface SessionSnapshot {
  id: string;
  domain: Domain;
  condition: Condition;
  stage: Stage;
  board?: BoardJson;
  [key: string]: unknown;
}

export interface MoveResponse {
  state: unknown;
  outcome: string | null;
  step_reward: number;
  agent_reply?: number | null;
  stage?: Stage;
}

export interface ExplanationPayload {
  text: string;
  span?: number;
  values?: Record<string, number | null>;
}

export interface AgentStepResponse {
  step: number;
  transition: unknown;
  explanation?: ExplanationPayload;
  rollout_done?: boolean;
  stage?: Stage;
}

export interface StageScore {
  games: number[];
  mean: number;
}

export interface ScoreResponse {
  per_stage: Partial<Record<Stage, StageScore>>;
}

export interface CreateSessionResponse {
  session_id: string;
}
