// The service's JSON wire protocol: request building and the analyze call.

import type { LeadName } from "./csv.js";

export const WIRE_FIELD_BY_LEAD: Record<LeadName, string> = {
  I: "dataI",
  II: "dataII",
  III: "dataIII",
  aVR: "dataAVR",
  aVL: "dataAVL",
  aVF: "dataAVF",
  V1: "dataV1",
  V2: "dataV2",
  V3: "dataV3",
  V4: "dataV4",
  V5: "dataV5",
  V6: "dataV6",
};

export interface WireRequest {
  sampleRate: number;
  adcGain: number;
  baseline: number;
  dataI: number[] | null;
  dataII: number[] | null;
  dataIII: number[] | null;
  dataAVR: number[] | null;
  dataAVL: number[] | null;
  dataAVF: number[] | null;
  dataV1: number[] | null;
  dataV2: number[] | null;
  dataV3: number[] | null;
  dataV4: number[] | null;
  dataV5: number[] | null;
  dataV6: number[] | null;
}

export interface PredictionRow {
  code: string;
  name: string;
  probability: number;
}

export interface Measurements {
  heartRateBpm: number;
  rrMeanMs: number;
  rrStdMs: number;
}

export interface WireError {
  code: string;
  message: string;
}

export interface WireResponse {
  requestId: string;
  status: "ok" | "error";
  processingMs: number;
  model?: "single_lead" | "twelve_lead";
  predictions?: PredictionRow[];
  measurements?: Measurements | null;
  error?: WireError;
}

export function buildRequest(
  leads: Map<LeadName, number[]>,
  sampleRate: number,
  adcGain: number,
  baseline: number,
): WireRequest {
  const request: Record<string, unknown> = {
    sampleRate,
    adcGain,
    baseline,
  };
  for (const [lead, field] of Object.entries(WIRE_FIELD_BY_LEAD)) {
    const samples = leads.get(lead as LeadName);
    request[field] = samples ?? null;
  }
  return request as unknown as WireRequest;
}

export class AnalyzeFailure extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly httpStatus: number,
    public readonly retriable: boolean,
  ) {
    super(message);
    this.name = "AnalyzeFailure";
  }
}

const RETRIABLE_CODES = new Set(["BUSY", "TIMEOUT"]);

export async function postAnalyze(
  baseUrl: string,
  token: string,
  request: WireRequest,
  fetchFn: typeof fetch = fetch,
): Promise<WireResponse> {
  let response: Response;
  try {
    response = await fetchFn(`${baseUrl}/api/v1/analyze`, {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        Authorization: `Bearer ${token}`,
      },
      body: JSON.stringify(request),
    });
  } catch (err) {
    throw new AnalyzeFailure("NETWORK", `service unreachable: ${err}`, 0, true);
  }
  const body = (await response.json()) as WireResponse;
  if (body.status !== "ok") {
    const code = body.error?.code ?? `HTTP_${response.status}`;
    throw new AnalyzeFailure(
      code,
      body.error?.message ?? "analysis failed",
      response.status,
      RETRIABLE_CODES.has(code),
    );
  }
  return body;
}
