import { describe, expect, it } from "vitest";

import type { LeadName } from "../src/csv.js";
import { buildRenderPlan, toMillivolts, xMm, yMm } from "../src/render.js";

describe("physical conversion", () => {
  it("matches the service formula (raw - baseline) / gain", () => {
    expect(toMillivolts([100, 300], 200, 100)).toEqual([0, 1]);
    expect(toMillivolts([-50], 100, 50)).toEqual([-1]);
  });

  it("renders a constant signal as a horizontal line", () => {
    const leads = new Map<LeadName, number[]>([["I", [440, 440, 440]]]);
    const plan = buildRenderPlan(leads, 250, 200, 40);
    const values = plan.traces[0].valuesMv;
    expect(new Set(values).size).toBe(1);
    expect(values[0]).toBeCloseTo(2.0, 12);
  });
});

describe("standard grid scaling", () => {
  it("deflects a 1 mV calibration pulse by 10 mm", () => {
    expect(yMm(1.0)).toBe(10);
  });

  it("advances 25 mm per second", () => {
    expect(xMm(1.0)).toBe(25);
  });

  it("splits a 30 s trace into 150 major 0.2 s divisions", () => {
    const samples = Array.from({ length: 30 * 250 }, () => 0);
    const leads = new Map<LeadName, number[]>([["I", samples]]);
    const plan = buildRenderPlan(leads, 250, 200, 0);
    expect(plan.grid.majorDivisionsX).toBe(150);
    expect(plan.grid.widthMm).toBe(750);
  });

  it("plans one trace band per lead", () => {
    const leads = new Map<LeadName, number[]>([
      ["I", [1, 2]],
      ["II", [3, 4]],
      ["V1", [5, 6]],
    ]);
    const plan = buildRenderPlan(leads, 250, 200, 0);
    expect(plan.traces.map((t) => t.lead)).toEqual(["I", "II", "V1"]);
    expect(plan.traces[0].timesS).toEqual([0, 1 / 250]);
  });
});
