// Report view model: findings and measurements straight from the response,
// values rendered verbatim (no client-side recalculation).

import type { Measurements, WireResponse } from "./wire.js";

export const DEFAULT_HIGHLIGHT_THRESHOLD = 0.5;

export interface FindingRow {
  code: string;
  name: string;
  probability: number;
  highlighted: boolean;
}

export interface ReportModel {
  model: string;
  findings: FindingRow[];
  measurements: Measurements | null;
  processingMs: number;
}

export function buildReport(
  response: WireResponse,
  threshold = DEFAULT_HIGHLIGHT_THRESHOLD,
): ReportModel {
  if (response.status !== "ok" || !response.predictions || !response.model) {
    throw new Error("buildReport requires a successful analyze response");
  }
  return {
    model: response.model,
    findings: response.predictions.map((p) => ({
      code: p.code,
      name: p.name,
      probability: p.probability,
      highlighted: p.probability >= threshold,
    })),
    measurements: response.measurements ?? null,
    processingMs: response.processingMs,
  };
}
