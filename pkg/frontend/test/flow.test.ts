import { describe, expect, it } from "vitest";

import { analyze, validateForm } from "../src/flow.js";
import { AnalyzeFailure } from "../src/wire.js";

const GOOD_FORM = {
  sampleRateText: "250",
  adcGainText: "200",
  baselineText: "0",
  csvText: "I\n1\n2\n3\n",
};

describe("validateForm", () => {
  it("builds a request with unmapped leads null", () => {
    const result = validateForm(GOOD_FORM);
    expect(result.ok).toBe(true);
    if (!result.ok) return;
    expect(result.value.request.dataI).toEqual([1, 2, 3]);
    expect(result.value.request.dataII).toBeNull();
    expect(result.value.request.dataV6).toBeNull();
    expect(result.value.request.sampleRate).toBe(250);
  });

  it("rejects non-positive gain with a field error and no request", () => {
    const result = validateForm({ ...GOOD_FORM, adcGainText: "0" });
    expect(result.ok).toBe(false);
    if (result.ok) return;
    expect(result.errors.adcGain).toMatch(/positive/);
  });

  it("reports CSV problems inline", () => {
    const result = validateForm({ ...GOOD_FORM, csvText: "I,Q9\n1,2\n" });
    expect(result.ok).toBe(false);
    if (result.ok) return;
    expect(result.errors.csv).toMatch(/unknown lead/);
  });

  it("requires lead I", () => {
    const result = validateForm({ ...GOOD_FORM, csvText: "II\n1\n" });
    expect(result.ok).toBe(false);
    if (result.ok) return;
    expect(result.errors.csv).toMatch(/lead I/);
  });

  it("defaults baseline to zero", () => {
    const result = validateForm({ ...GOOD_FORM, baselineText: "  " });
    expect(result.ok).toBe(true);
    if (!result.ok) return;
    expect(result.value.baseline).toBe(0);
  });
});

describe("analyze flow against a stub service", () => {
  const okBody = {
    requestId: "r1",
    status: "ok",
    processingMs: 12.5,
    model: "single_lead",
    predictions: [
      { code: "NSR", name: "Normal sinus rhythm", probability: 0.9 },
      { code: "AF", name: "Atrial fibrillation", probability: 0.2 },
    ],
    measurements: { heartRateBpm: 72.0, rrMeanMs: 833.0, rrStdMs: 21.0 },
  };

  const fetchOk = (async (url: RequestInfo | URL, init?: RequestInit) => {
    expect(String(url)).toBe("http://svc/api/v1/analyze");
    expect((init?.headers as Record<string, string>).Authorization).toBe("Bearer tok");
    const sent = JSON.parse(String(init?.body));
    expect(sent.dataI).toEqual([1, 2, 3]);
    return new Response(JSON.stringify(okBody), { status: 200 });
  }) as typeof fetch;

  it("returns report and render plan with values verbatim", async () => {
    const validated = validateForm(GOOD_FORM);
    expect(validated.ok).toBe(true);
    if (!validated.ok) return;
    const outcome = await analyze(validated.value, "http://svc", "tok", fetchOk);
    expect(outcome.report.model).toBe("single_lead");
    expect(outcome.report.findings[0]).toEqual({
      code: "NSR", name: "Normal sinus rhythm", probability: 0.9, highlighted: true,
    });
    expect(outcome.report.findings[1].highlighted).toBe(false);
    expect(outcome.report.measurements?.heartRateBpm).toBe(72.0);
    expect(outcome.renderPlan.traces).toHaveLength(1);
  });

  it("maps error responses to retriable failures", async () => {
    const fetchBusy = (async () =>
      new Response(JSON.stringify({
        requestId: "r2", status: "error", processingMs: 1,
        error: { code: "BUSY", message: "queue full" },
      }), { status: 429 })) as typeof fetch;
    const validated = validateForm(GOOD_FORM);
    if (!validated.ok) return;
    await expect(analyze(validated.value, "http://svc", "tok", fetchBusy))
      .rejects.toSatisfy((err: unknown) =>
        err instanceof AnalyzeFailure && err.code === "BUSY" && err.retriable);
  });
});
