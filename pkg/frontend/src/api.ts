import type {
  AgentStepResponse,
  Condition,
  CreateSessionResponse,
  Domain,
  MoveResponse,
  ScoreResponse,
  SessionSnapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`service returned ${status}`);
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

/** Thin typed wrapper over the service's JSON API; no client-side game logic. */
export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json();
    if (res.status < 200 || res.status >= 300) {
      throw new ApiError(res.status, payload);
    }
    return payload as T;
  }

  healthz(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  createSession(domain: Domain, condition: Condition, studyMode: boolean): Promise<CreateSessionResponse> {
    return this.request("POST", "/session", {
      domain,
      condition,
      study_mode: studyMode,
    });
  }

  getState(sid: string): Promise<SessionSnapshot> {
    return this.request("GET", `/session/${sid}/state`);
  }

  move(sid: string, action: number | string): Promise<MoveResponse> {
    return this.request("POST", `/session/${sid}/move`, { action });
  }

  agentStep(sid: string): Promise<AgentStepResponse> {
    return this.request("POST", `/session/${sid}/agent-step`);
  }

  getScore(sid: string): Promise<ScoreResponse> {
    return this.request("GET", `/session/${sid}/score`);
  }
}
