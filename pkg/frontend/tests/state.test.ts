import { describe, expect, test } from "vitest";

import { Api, ApiError, Decision, DomainsPayload } from "../src/api.js";
import { conclusion } from "../src/format.js";
import {
  adjustAlpha,
  canDetect,
  clampAlpha,
  effectiveReject,
  initialState,
  loadDomains,
  sendFeedback,
  submitDetection,
} from "../src/state.js";

function decision(p: number, overrides: Partial<Decision> = {}): Decision {
  return {
    request_id: "ab12cd34ef56-1a2b-0",
    statistic: 1.7321,
    p_value: p,
    per_domain_p: { News: p, Finance: Math.min(1, p * 2) },
    alpha: 0.05,
    reject: p <= 0.05,
    domain_used: "General",
    threshold: null,
    interpretation: "Compared against calibrated human writing.",
    ...overrides,
  };
}

interface MockApi extends Api {
  detectCalls: number;
  feedbackCalls: number;
}

function mockApi(
  detections: Array<Decision | ApiError | Error> = [],
  feedbackResult: { recorded: boolean } | ApiError = { recorded: true },
  domains: DomainsPayload = { domains: [] },
): MockApi {
  const queue = [...detections];
  const api: MockApi = {
    detectCalls: 0,
    feedbackCalls: 0,
    async detect() {
      api.detectCalls += 1;
      const next = queue.shift();
      if (next === undefined) throw new Error("mock exhausted");
      if (next instanceof Error) throw next;
      return next;
    },
    async domains() {
      return domains;
    },
    async feedback() {
      api.feedbackCalls += 1;
      if (feedbackResult instanceof ApiError) throw feedbackResult;
      return feedbackResult;
    },
  };
  return api;
}

function withText(text = "a passage long enough to score"): ReturnType<typeof initialState> {
  return { ...initialState(), text };
}

describe("detection flow", () => {
  test("renders fail-to-reject then reject from successive p-values", async () => {
    const api = mockApi([decision(0.412), decision(0.0004)]);
    let state = withText();

    state = await submitDetection(state, api);
    const first = effectiveReject(state);
    expect(first).toBe(false);
    expect(state.last_decision?.p_value).toBe(0.412);
    expect(conclusion(false, state.alpha)).toContain("fail to reject");

    state = await submitDetection(state, api);
    const second = effectiveReject(state);
    expect(second).toBe(true);
    expect(conclusion(true, state.alpha)).toContain("reject");

    const ok = first === false && second === true && api.detectCalls === 2;
    console.log(
      `[${ok ? "PASS" : "FAIL"}] console verdicts: p=0.412 -> fail to reject, ` +
        `p=0.0004 -> reject at alpha 0.05`,
    );
    expect(ok).toBe(true);
  });

  test("alpha slider flips a cached decision without a network call", async () => {
    const api = mockApi([decision(0.07)]);
    let state = withText();
    state = await submitDetection(state, api);
    expect(effectiveReject(state)).toBe(false);
    expect(api.detectCalls).toBe(1);

    state = adjustAlpha(state, 0.1);
    const flipped = effectiveReject(state);
    state = adjustAlpha(state, 0.05);
    const flippedBack = effectiveReject(state);

    const ok = flipped === true && flippedBack === false && api.detectCalls === 1;
    console.log(
      `[${ok ? "PASS" : "FAIL"}] alpha slider: cached p=0.07 flips at alpha 0.10 ` +
        `and back at 0.05 with ${api.detectCalls} network call(s)`,
    );
    expect(ok).toBe(true);
  });

  test("only one request can be in flight", async () => {
    const api = mockApi([decision(0.3)]);
    const busy = { ...withText(), busy: true };
    const unchanged = await submitDetection(busy, api);
    expect(unchanged).toBe(busy);
    expect(api.detectCalls).toBe(0);
  });

  test("empty text never fires a request", async () => {
    const api = mockApi([decision(0.3)]);
    expect(canDetect(initialState())).toBe(false);
    await submitDetection(initialState(), api);
    expect(api.detectCalls).toBe(0);
  });

  test("a new detection clears stale feedback status", async () => {
    const api = mockApi([decision(0.4), decision(0.4)]);
    let state = await submitDetection(withText(), api);
    state = await sendFeedback(state, true, api);
    expect(state.feedback).toBe("sent");
    state = await submitDetection(state, api);
    expect(state.feedback).toBe("none");
  });
});

describe("error surfaces", () => {
  test("uncalibrated domain maps to an inline message", async () => {
    const api = mockApi([new ApiError(503, "no calibration for domain News")]);
    const state = await submitDetection(withText(), api);
    expect(state.error).toContain("not calibrated");
    expect(state.last_decision).toBeNull();
  });

  test("fingerprint conflict and bad request keep their details", async () => {
    const stale = await submitDetection(
      withText(),
      mockApi([new ApiError(409, "witness fingerprint changed")]),
    );
    expect(stale.error).toContain("stale");
    const bad = await submitDetection(
      withText(),
      mockApi([new ApiError(400, "alpha 0.5 outside [0.01, 0.2]")]),
    );
    expect(bad.error).toContain("alpha 0.5");
  });

  test("network failure preserves the draft for retry", async () => {
    const api = mockApi([new TypeError("fetch failed")]);
    const before = withText("precious draft");
    const after = await submitDetection(before, api);
    expect(after.text).toBe("precious draft");
    expect(after.busy).toBe(false);
    expect(after.error).toContain("try again");
  });
});

describe("feedback", () => {
  test("sends once and ignores duplicate clicks", async () => {
    const api = mockApi([decision(0.02)]);
    let state = await submitDetection(withText(), api);
    state = await sendFeedback(state, true, api);
    state = await sendFeedback(state, true, api);
    state = await sendFeedback(state, false, api);
    expect(state.feedback).toBe("sent");
    expect(api.feedbackCalls).toBe(1);
  });

  test("expired decision shows as session expired", async () => {
    const api = mockApi([decision(0.02)], new ApiError(404, "unknown request_id"));
    let state = await submitDetection(withText(), api);
    state = await sendFeedback(state, true, api);
    expect(state.feedback).toBe("expired");
    expect(state.error).toContain("Session expired");
  });

  test("no decision means nothing to send", async () => {
    const api = mockApi();
    await sendFeedback(initialState(), true, api);
    expect(api.feedbackCalls).toBe(0);
  });
});

describe("controls", () => {
  test("alpha clamps to the slider range and step", () => {
    expect(clampAlpha(0.005)).toBe(0.01);
    expect(clampAlpha(0.5)).toBe(0.2);
    expect(clampAlpha(0.074)).toBe(0.07);
    expect(clampAlpha(0.076)).toBe(0.08);
    expect(clampAlpha(Number.NaN)).toBe(0.05);
  });

  test("domain list comes from the service", async () => {
    const api = mockApi([], { recorded: true }, {
      domains: [
        { domain: "News", m: 199, p_floor: 0.005 },
        { domain: "Finance", m: 99, p_floor: 0.01 },
      ],
      warnings: ["Medicine has no calibration"],
    });
    const state = await loadDomains(initialState(), api);
    expect(state.domains.map((d) => d.domain)).toEqual(["News", "Finance"]);
    expect(state.warnings).toHaveLength(1);
  });

  test("defaults match the service contract", () => {
    const state = initialState();
    expect(state.domain).toBe("General");
    expect(state.alpha).toBe(0.05);
    expect(state.busy).toBe(false);
    expect(effectiveReject(state)).toBeNull();
  });
});
