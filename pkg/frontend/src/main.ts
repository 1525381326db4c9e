import { ApiClient, ApiError } from "./api.js";
import {
  renderBoard,
  renderExplanation,
  renderOutcomeBanner,
  renderScore,
} from "./render.js";
import {
  boardView,
  canPlay,
  canStepExpert,
  ExplanationStepper,
  scoreView,
} from "./viewmodel.js";
import type { BoardJson, Condition, Domain, Stage } from "./types.js";

interface Ui {
  board: HTMLElement;
  explanation: HTMLElement;
  score: HTMLElement;
  banner: HTMLElement;
  status: HTMLElement;
  stepBtn: HTMLButtonElement;
  prevBtn: HTMLButtonElement;
  nextBtn: HTMLButtonElement;
  newBtn: HTMLButtonElement;
  domainSel: HTMLSelectElement;
  conditionSel: HTMLSelectElement;
  studyChk: HTMLInputElement;
}

class App {
  private sid: string | null = null;
  private stage: Stage = "free";
  private terminal = false;
  private stepper = new ExplanationStepper();
  // one in-flight mutation per session
  private busy = false;

  constructor(
    private readonly api: ApiClient,
    private readonly ui: Ui,
  ) {
    ui.newBtn.addEventListener("click", () => void this.newSession());
    ui.stepBtn.addEventListener("click", () => void this.step());
    ui.prevBtn.addEventListener("click", () => {
      this.stepper.prev();
      this.paintExplanation();
    });
    ui.nextBtn.addEventListener("click", () => {
      this.stepper.next();
      this.paintExplanation();
    });
    ui.board.addEventListener("click", (ev) => {
      const target = ev.target as HTMLElement;
      const col = target.dataset["col"];
      if (col !== undefined) void this.play(Number(col));
    });
  }

  private async guard<T>(work: () => Promise<T>): Promise<T | undefined> {
    if (this.busy || this.sid === null) return undefined;
    this.busy = true;
    try {
      return await work();
    } catch (err) {
      this.ui.status.textContent =
        err instanceof ApiError ? `service: ${JSON.stringify(err.detail)}` : String(err);
      return undefined;
    } finally {
      this.busy = false;
    }
  }

  async newSession(): Promise<void> {
    const domain = this.ui.domainSel.value as Domain;
    const condition = this.ui.conditionSel.value as Condition;
    try {
      const res = await this.api.createSession(domain, condition, this.ui.studyChk.checked);
      this.sid = res.session_id;
      this.stepper = new ExplanationStepper();
      this.terminal = false;
      await this.refresh();
    } catch (err) {
      this.ui.status.textContent =
        err instanceof ApiError ? `service: ${JSON.stringify(err.detail)}` : String(err);
    }
  }

  async refresh(): Promise<void> {
    if (this.sid === null) return;
    const snap = await this.api.getState(this.sid);
    this.stage = snap.stage;
    if (snap.board) {
      this.ui.board.innerHTML = renderBoard(boardView(snap.board as BoardJson), this.terminal);
    }
    const score = await this.api.getScore(this.sid);
    this.ui.score.innerHTML = renderScore(scoreView(score));
    this.ui.stepBtn.disabled = !canStepExpert(this.stage);
    this.ui.status.textContent = `stage: ${this.stage}`;
    this.paintExplanation();
  }

  async play(col: number): Promise<void> {
    await this.guard(async () => {
      if (!canPlay(this.stage)) return;
      const res = await this.api.move(this.sid as string, col);
      this.terminal = res.outcome !== null;
      this.ui.banner.innerHTML = renderOutcomeBanner(res.outcome);
      if (res.stage) this.stage = res.stage;
      await this.refresh();
    });
  }

  async step(): Promise<void> {
    await this.guard(async () => {
      const res = await this.api.agentStep(this.sid as string);
      this.stepper.push(res);
      if (res.stage) this.stage = res.stage;
      await this.refresh();
    });
  }

  private paintExplanation(): void {
    this.ui.explanation.innerHTML = renderExplanation(this.stepper.current());
  }
}

export function mount(base: string = ""): App {
  const el = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
  return new App(new ApiClient(base), {
    board: el("board"),
    explanation: el("explanation"),
    score: el("score"),
    banner: el("banner"),
    status: el("status"),
    stepBtn: el("step"),
    prevBtn: el("prev"),
    nextBtn: el("next"),
    newBtn: el("new-session"),
    domainSel: el("domain"),
    conditionSel: el("condition"),
    studyChk: el("study-mode"),
  });
}
