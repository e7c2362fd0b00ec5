// The console's submit pipeline, DOM-free so it is testable end to end:
// form state -> CSV parse -> wire request -> POST -> report + render plan.

import { CsvError, parseCsv } from "./csv.js";
import type { LeadName } from "./csv.js";
import { buildRenderPlan } from "./render.js";
import type { RenderPlan } from "./render.js";
import { buildReport } from "./report.js";
import type { ReportModel } from "./report.js";
import { buildRequest, postAnalyze } from "./wire.js";
import type { WireRequest, WireResponse } from "./wire.js";

export interface ConsoleForm {
  sampleRateText: string;
  adcGainText: string;
  baselineText: string;
  csvText: string;
}

export interface FieldErrors {
  sampleRate?: string;
  adcGain?: string;
  baseline?: string;
  csv?: string;
}

export interface ValidatedForm {
  sampleRate: number;
  adcGain: number;
  baseline: number;
  leads: Map<LeadName, number[]>;
  request: WireRequest;
}

function parsePositive(text: string, what: string): number {
  const value = Number(text.trim());
  if (text.trim() === "" || !Number.isFinite(value)) {
    throw new Error(`${what} must be a number`);
  }
  if (value <= 0) {
    throw new Error(`${what} must be positive`);
  }
  return value;
}

export function validateForm(form: ConsoleForm):
  | { ok: true; value: ValidatedForm }
  | { ok: false; errors: FieldErrors } {
  const errors: FieldErrors = {};
  let sampleRate = 0;
  let adcGain = 0;
  let baseline = 0;
  try {
    sampleRate = parsePositive(form.sampleRateText, "sampling frequency");
  } catch (err) {
    errors.sampleRate = (err as Error).message;
  }
  try {
    adcGain = parsePositive(form.adcGainText, "ADC gain");
  } catch (err) {
    errors.adcGain = (err as Error).message;
  }
  const baselineText = form.baselineText.trim();
  if (baselineText === "") {
    baseline = 0;
  } else {
    baseline = Number(baselineText);
    if (!Number.isFinite(baseline)) {
      errors.baseline = "baseline voltage must be a number";
    }
  }

  let leads: Map<LeadName, number[]> | null = null;
  try {
    leads = parseCsv(form.csvText);
    if (!leads.has("I")) {
      errors.csv = "lead I is required";
    } else if ((leads.get("I") ?? []).length === 0) {
      errors.csv = "CSV has a header but no samples";
    }
  } catch (err) {
    errors.csv = err instanceof CsvError ? err.message : String(err);
  }

  if (Object.keys(errors).length > 0 || leads === null) {
    return { ok: false, errors };
  }
  return {
    ok: true,
    value: {
      sampleRate,
      adcGain,
      baseline,
      leads,
      request: buildRequest(leads, sampleRate, adcGain, baseline),
    },
  };
}

export interface AnalysisOutcome {
  response: WireResponse;
  report: ReportModel;
  renderPlan: RenderPlan;
}

/** Submit a validated form and assemble everything the report view renders. */
export async function analyze(
  validated: ValidatedForm,
  baseUrl: string,
  token: string,
  fetchFn: typeof fetch = fetch,
): Promise<AnalysisOutcome> {
  const response = await postAnalyze(baseUrl, token, validated.request, fetchFn);
  return {
    response,
    report: buildReport(response),
    renderPlan: buildRenderPlan(
      validated.leads,
      validated.sampleRate,
      validated.adcGain,
      validated.baseline,
    ),
  };
}
