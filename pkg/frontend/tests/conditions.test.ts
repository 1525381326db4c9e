import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { renderExplanation } from "../src/render.js";
import { ExplanationStepper } from "../src/viewmodel.js";
import type { AgentStepResponse, Condition, ScoreResponse } from "../src/types.js";
import { FixtureServer, type Exchange } from "./replay.js";

function load(name: string): Exchange[] {
  return JSON.parse(readFileSync(new URL(`./fixtures/${name}.json`, import.meta.url), "utf8"));
}

const CONDITIONS: Array<[Condition, "connect4" | "lunar_lander"]> = [
  ["none", "connect4"],
  ["action", "connect4"],
  ["value", "connect4"],
  ["concept_raw", "connect4"],
  ["concept_inf", "lunar_lander"],
  ["concept_teg", "lunar_lander"],
  ["concept_inf_teg", "lunar_lander"],
];

async function replayCondition(condition: Condition, domain: "connect4" | "lunar_lander") {
  const exchanges = load(`condition_${condition}`);
  const server = new FixtureServer(exchanges);
  const client = server.client();

  const created = await client.createSession(domain, condition, false);
  await client.getState(created.session_id);

  const stepper = new ExplanationStepper();
  const payloads: AgentStepResponse[] = [];
  while (server.remaining > 1) {
    const resp = await client.agentStep(created.session_id);
    payloads.push(resp);
    stepper.push(resp);
  }
  const score = await client.getScore(created.session_id);
  expect(server.remaining).toBe(0);
  return { payloads, stepper, score };
}

describe("explanation panel contract per condition", () => {
  for (const [condition, domain] of CONDITIONS) {
    it(`renders the ${condition} payload verbatim`, async () => {
      const { payloads, stepper } = await replayCondition(condition, domain);
      expect(payloads.length).toBeGreaterThan(0);

      // walk back to the first entry, then forward, checking each panel
      while (stepper.prev()?.step !== 0) { /* rewind */ }
      for (const resp of payloads) {
        const entry = stepper.current();
        expect(entry).not.toBeNull();
        const html = renderExplanation(entry);
        if (resp.explanation === undefined) {
          expect(entry!.text).toBeNull();
          expect(html).toBe(`<div class="explanation empty"></div>`);
        } else {
          // byte-identical text, no trimming or reflow
          expect(entry!.text).toBe(resp.explanation.text);
          expect(entry!.span).toBe(resp.explanation.span ?? 1);
        }
        stepper.next();
      }
    });
  }
});

describe("condition-specific payload shapes", () => {
  it("none shows an empty panel on every step", async () => {
    const { payloads } = await replayCondition("none", "connect4");
    for (const resp of payloads) expect(resp.explanation).toBeUndefined();
  });

  it("value carries per-action values for all 7 columns", async () => {
    const { payloads, stepper } = await replayCondition("value", "connect4");
    expect(payloads.every((p) => p.explanation?.values !== undefined)).toBe(true);
    const entry = stepper.current()!;
    expect(Object.keys(entry.values!).sort()).toEqual(["1", "2", "3", "4", "5", "6", "7"]);
    expect(renderExplanation(entry)).toContain(`<ul class="values">`);
  });

  it("inf_teg emits grouped units with a span badge", async () => {
    const { payloads, stepper } = await replayCondition("concept_inf_teg", "lunar_lander");
    const grouped = payloads.filter((p) => (p.explanation?.span ?? 1) > 1);
    expect(grouped.length).toBeGreaterThan(0);
    while (stepper.prev()?.step !== 0) { /* rewind */ }
    let badges = 0;
    for (let i = 0; i < payloads.length; i++) {
      const entry = stepper.current()!;
      if (entry.span > 1) {
        badges += 1;
        expect(renderExplanation(entry)).toContain(`<span class="badge">${entry.span}</span>`);
      }
      stepper.next();
    }
    expect(badges).toBe(grouped.length);
  });

  it("grouped lander rollouts end with a finished-rollout marker and a score", async () => {
    const { payloads, score } = await replayCondition("concept_teg", "lunar_lander");
    expect(payloads[payloads.length - 1]!.rollout_done).toBe(true);
    const s = score as ScoreResponse;
    expect(s.per_stage.free?.games.length).toBe(1);
  });
});
