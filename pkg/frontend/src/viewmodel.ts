import type {
  AgentStepResponse,
  BoardJson,
  ScoreResponse,
  Stage,
  StageScore,
} from "./types.js";

// ---------------------------------------------------------------------------
// Board view
// ---------------------------------------------------------------------------

export type Cell = "empty" | "human" | "agent";

export interface BoardView {
  /** Rows top-first for display; the wire format stores row 0 at the bottom. */
  rows: Cell[][];
  /** Column buttons to enable; a column is clickable while its top cell is free. */
  clickableColumns: number[]; // 1-indexed, matching the move API
}

const CELLS: Record<number, Cell> = { 0: "empty", 1: "human", 2: "agent" };

export function boardView(board: BoardJson): BoardView {
  const rows = [...board.grid].reverse().map((row) => row.map((v) => CELLS[v] ?? "empty"));
  const top = board.grid[board.grid.length - 1] ?? [];
  const clickableColumns = top.flatMap((v, i) => (v === 0 ? [i + 1] : []));
  return { rows, clickableColumns };
}

// ---------------------------------------------------------------------------
// Explanation stepper
// ---------------------------------------------------------------------------

export interface StepperEntry {
  step: number;
  text: string | null;
  span: number;
  values: Record<string, number | null> | null;
}

/**
 * Collects agent-step responses and exposes cursor-style navigation.  Text is
 * kept verbatim; a grouped unit keeps its step span for the badge.
 */
export class ExplanationStepper {
  private entries: StepperEntry[] = [];
  private cursor = -1;
  rolloutDone = false;

  push(resp: AgentStepResponse): void {
    const exp = resp.explanation;
    this.entries.push({
      step: resp.step,
      text: exp ? exp.text : null,
      span: exp?.span ?? 1,
      values: exp?.values ?? null,
    });
    this.cursor = this.entries.length - 1;
    if (resp.rollout_done) this.rolloutDone = true;
  }

  get length(): number {
    return this.entries.length;
  }

  current(): StepperEntry | null {
    return this.entries[this.cursor] ?? null;
  }

  prev(): StepperEntry | null {
    if (this.cursor > 0) this.cursor -= 1;
    return this.current();
  }

  next(): StepperEntry | null {
    if (this.cursor < this.entries.length - 1) this.cursor += 1;
    return this.current();
  }
}

// ---------------------------------------------------------------------------
// Stage gating (mirrors the server-reported stage; the server still enforces)
// ---------------------------------------------------------------------------

export function canPlay(stage: Stage): boolean {
  return stage !== "explanation";
}

export function canStepExpert(stage: Stage): boolean {
  return stage === "explanation" || stage === "free";
}

// ---------------------------------------------------------------------------
// Score view
// ---------------------------------------------------------------------------

export interface ScoreRow {
  stage: Stage;
  mean: number;
  games: number[];
}

export interface ScoreView {
  rows: ScoreRow[];
  /** posttest mean minus pretest mean, when both stages have games. */
  delta: number | null;
}

const STAGE_ORDER: Stage[] = ["practice", "pretest", "explanation", "posttest", "free"];

export function scoreView(score: ScoreResponse): ScoreView {
  const rows: ScoreRow[] = [];
  for (const stage of STAGE_ORDER) {
    const entry: StageScore | undefined = score.per_stage[stage];
    if (entry) rows.push({ stage, mean: entry.mean, games: entry.games });
  }
  const pre = score.per_stage.pretest;
  const post = score.per_stage.posttest;
  const delta = pre && post ? post.mean - pre.mean : null;
  return { rows, delta };
}
