/** DOM wiring: reads controls, renders state; all logic lives in state.ts. */

import { httpApi } from "./api.js";
import { conclusion, formatAlpha, formatP, formatPExact, formatStatistic } from "./format.js";
import {
  ALPHA_MAX,
  ALPHA_MIN,
  ALPHA_STEP,
  ConsoleState,
  GENERAL,
  adjustAlpha,
  canDetect,
  effectiveReject,
  initialState,
  loadDomains,
  sendFeedback,
  submitDetection,
} from "./state.js";

const api = httpApi("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(state: ConsoleState): void {
  const verdict = effectiveReject(state);
  el<HTMLButtonElement>("detect").disabled = !canDetect(state);
  el<HTMLInputElement>("alpha").value = String(state.alpha);
  el("alpha-value").textContent = formatAlpha(state.alpha);
  el("status").textContent = state.busy ? "scoring…" : "";
  el("error").textContent = state.error ?? "";

  const select = el<HTMLSelectElement>("domain");
  const names = [GENERAL, ...state.domains.map((d) => d.domain)];
  if (select.options.length !== names.length) {
    select.replaceChildren(
      ...names.map((name) => new Option(name, name, false, name === state.domain)),
    );
  }

  const panel = el("conclusion");
  const feedback = el("feedback");
  if (state.last_decision === null || verdict === null) {
    panel.hidden = true;
    feedback.hidden = true;
    return;
  }
  panel.hidden = false;
  feedback.hidden = false;
  panel.className = verdict ? "verdict reject" : "verdict accept";
  el("verdict").textContent = conclusion(verdict, state.alpha);
  const p = state.last_decision.p_value;
  el("p-value").textContent = formatP(p);
  el("p-value").title = `exact p = ${formatPExact(p)}`;
  el("statistic").textContent = formatStatistic(state.last_decision.statistic);
  el("interpretation").textContent = state.last_decision.interpretation;

  const rows = Object.entries(state.last_decision.per_domain_p);
  const breakdown = el("per-domain");
  breakdown.hidden = state.last_decision.domain_used !== GENERAL || rows.length === 0;
  if (!breakdown.hidden) {
    el("per-domain-body").replaceChildren(
      ...rows.map(([name, value]) => {
        const tr = document.createElement("tr");
        tr.append(
          Object.assign(document.createElement("td"), { textContent: name }),
          Object.assign(document.createElement("td"), { textContent: formatP(value) }),
        );
        return tr;
      }),
    );
  }
  el("feedback-note").textContent =
    state.feedback === "sent" ? "✓ thanks, recorded" : state.feedback === "expired" ? "session expired" : "";
}

async function main(): Promise<void> {
  let state = initialState();
  const slider = el<HTMLInputElement>("alpha");
  slider.min = String(ALPHA_MIN);
  slider.max = String(ALPHA_MAX);
  slider.step = String(ALPHA_STEP);

  const update = (next: ConsoleState) => {
    state = next;
    render(state);
  };

  el<HTMLTextAreaElement>("text").addEventListener("input", (event) => {
    update({ ...state, text: (event.target as HTMLTextAreaElement).value });
  });
  el<HTMLSelectElement>("domain").addEventListener("change", (event) => {
    update({ ...state, domain: (event.target as HTMLSelectElement).value });
  });
  slider.addEventListener("input", (event) => {
    update(adjustAlpha(state, Number((event.target as HTMLInputElement).value)));
  });
  el<HTMLButtonElement>("detect").addEventListener("click", () => {
    if (!canDetect(state)) return;
    const snapshot = state; // submitDetection guards on busy itself
    update({ ...state, busy: true });
    void submitDetection(snapshot, api).then((result) => {
      // keep whatever the user typed or slid while the request was out
      update({ ...result, text: state.text, domain: state.domain, alpha: state.alpha });
    });
  });
  el<HTMLButtonElement>("feedback-agree").addEventListener("click", () => {
    void sendFeedback(state, true, api).then(update);
  });
  el<HTMLButtonElement>("feedback-disagree").addEventListener("click", () => {
    void sendFeedback(state, false, api).then(update);
  });

  update(await loadDomains(state, api));
}

document.addEventListener("DOMContentLoaded", () => {
  void main();
});
