import type { BoardView, ScoreView, StepperEntry } from "./viewmodel.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBoard(view: BoardView, terminal: boolean): string {
  const rows = view.rows
    .map(
      (row) =>
        `<tr>${row.map((c) => `<td class="cell ${c}"></td>`).join("")}</tr>`,
    )
    .join("");
  const buttons = Array.from({ length: 7 }, (_, i) => i + 1)
    .map((col) => {
      const enabled = !terminal && view.clickableColumns.includes(col);
      return `<button class="col" data-col="${col}"${enabled ? "" : " disabled"}>${col}</button>`;
    })
    .join("");
  return `<div class="board"><div class="columns">${buttons}</div><table>${rows}</table></div>`;
}

/**
 * Explanation panel.  Text is escaped but otherwise byte-identical to the
 * service payload; grouped units get a span badge; the value condition lists
 * per-action values under the text.
 */
export function renderExplanation(entry: StepperEntry | null): string {
  if (entry === null || entry.text === null) {
    return `<div class="explanation empty"></div>`;
  }
  const badge = entry.span > 1 ? `<span class="badge">${entry.span}</span>` : "";
  let values = "";
  if (entry.values) {
    const items = Object.entries(entry.values)
      .map(([action, v]) => {
        const shown = v === null ? "n/a" : v.toFixed(3);
        return `<li><span class="action">${escapeHtml(action)}</span> ${shown}</li>`;
      })
      .join("");
    values = `<ul class="values">${items}</ul>`;
  }
  return `<div class="explanation">${badge}<p>${escapeHtml(entry.text)}</p>${values}</div>`;
}

export function renderScore(view: ScoreView): string {
  if (view.rows.length === 0) {
    return `<div class="score empty"></div>`;
  }
  const bars = view.rows
    .map(
      (r) =>
        `<div class="bar" data-stage="${r.stage}"><span class="label">${r.stage}</span>` +
        `<span class="mean">${r.mean.toFixed(3)}</span> (${r.games.length} games)</div>`,
    )
    .join("");
  const delta =
    view.delta === null
      ? ""
      : `<div class="delta">post - pre: ${view.delta.toFixed(3)}</div>`;
  return `<div class="score">${bars}${delta}</div>`;
}

export function renderOutcomeBanner(outcome: string | null): string {
  if (outcome === null) return "";
  return `<div class="banner">${escapeHtml(outcome)}</div>`;
}
