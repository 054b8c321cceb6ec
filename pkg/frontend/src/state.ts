/** Console state and transitions, kept pure so they test without a DOM.
 *
 * The significance slider only changes which side of the cached p-value the
 * level sits on, so alpha changes never re-request: the displayed verdict is
 * always `p_value <= alpha` against the current slider. Every number shown
 * originates from a server response; the console computes nothing but that
 * one comparison.
 */

import { Api, ApiError, Decision, DomainEntry } from "./api.js";

export const ALPHA_MIN = 0.01;
export const ALPHA_MAX = 0.2;
export const ALPHA_STEP = 0.01;
export const GENERAL = "General";

export type FeedbackStatus = "none" | "sent" | "expired";

export interface ConsoleState {
  text: string;
  domain: string;
  alpha: number;
  last_decision: Decision | null;
  busy: boolean;
  domains: DomainEntry[];
  warnings: string[];
  error: string | null;
  feedback: FeedbackStatus;
}

export function initialState(): ConsoleState {
  return {
    text: "",
    domain: GENERAL,
    alpha: 0.05,
    last_decision: null,
    busy: false,
    domains: [],
    warnings: [],
    error: null,
    feedback: "none",
  };
}

export function clampAlpha(alpha: number): number {
  if (!Number.isFinite(alpha)) return 0.05;
  const bounded = Math.min(ALPHA_MAX, Math.max(ALPHA_MIN, alpha));
  const steps = Math.round((bounded - ALPHA_MIN) / ALPHA_STEP);
  return Number((ALPHA_MIN + steps * ALPHA_STEP).toFixed(2));
}

export function canDetect(state: ConsoleState): boolean {
  return !state.busy && state.text.trim() !== "";
}

/** The verdict under the current slider; null before any detection. */
export function effectiveReject(state: ConsoleState): boolean | null {
  if (state.last_decision === null) return null;
  return state.last_decision.p_value <= state.alpha;
}

function messageFor(error: unknown): string {
  if (error instanceof ApiError) {
    if (error.status === 503) return `Domain not calibrated yet: ${error.detail}`;
    if (error.status === 409) return `Calibration is stale for this detector: ${error.detail}`;
    if (error.status === 400) return error.detail;
    return `Service error (${error.status}): ${error.detail}`;
  }
  return "Service unreachable; your text is untouched, try again.";
}

export async function loadDomains(state: ConsoleState, api: Api): Promise<ConsoleState> {
  try {
    const payload = await api.domains();
    return { ...state, domains: payload.domains, warnings: payload.warnings ?? [] };
  } catch (error) {
    return { ...state, error: messageFor(error) };
  }
}

export async function submitDetection(state: ConsoleState, api: Api): Promise<ConsoleState> {
  if (!canDetect(state)) return state; // one request in flight at a time
  const pending: ConsoleState = { ...state, busy: true, error: null };
  try {
    const decision = await api.detect(pending.text, pending.domain, pending.alpha);
    return { ...pending, busy: false, last_decision: decision, feedback: "none" };
  } catch (error) {
    return { ...pending, busy: false, error: messageFor(error) };
  }
}

export function adjustAlpha(state: ConsoleState, alpha: number): ConsoleState {
  return { ...state, alpha: clampAlpha(alpha) };
}

export async function sendFeedback(
  state: ConsoleState,
  agrees: boolean,
  api: Api,
): Promise<ConsoleState> {
  if (state.last_decision === null || state.feedback !== "none") return state;
  try {
    await api.feedback(state.last_decision.request_id, agrees);
    return { ...state, feedback: "sent", error: null };
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      return { ...state, feedback: "expired", error: "Session expired; detect again to leave feedback." };
    }
    return { ...state, error: messageFor(error) };
  }
}
