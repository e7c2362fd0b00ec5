// Waveform geometry: raw samples to millivolt traces on the standard
// millimeter grid (25 mm/s, 10 mm/mV; major divisions 0.2 s / 0.5 mV).

import type { LeadName } from "./csv.js";

export const MM_PER_SECOND = 25;
export const MM_PER_MV = 10;
export const MAJOR_DIVISION_S = 0.2;
export const MAJOR_DIVISION_MV = 0.5;
export const MINOR_PER_MAJOR = 5;

export interface TracePlan {
  lead: LeadName;
  /** seconds from recording start, one per sample */
  timesS: number[];
  /** physical millivolts: (raw - baseline) / adcGain, same as the service */
  valuesMv: number[];
}

export interface GridPlan {
  durationS: number;
  /** horizontal span in millimeters at 25 mm/s */
  widthMm: number;
  /** major vertical lines: one every 0.2 s */
  majorDivisionsX: number;
  /** major horizontal lines per trace band, 0.5 mV apart */
  majorDivisionsY: number;
  bandHeightMm: number;
}

export interface RenderPlan {
  traces: TracePlan[];
  grid: GridPlan;
  mmPerSecond: number;
  mmPerMv: number;
}

export function toMillivolts(raw: number[], adcGain: number, baseline: number): number[] {
  return raw.map((value) => (value - baseline) / adcGain);
}

export function buildRenderPlan(
  leads: Map<LeadName, number[]>,
  sampleRate: number,
  adcGain: number,
  baseline: number,
  bandMv = 3.0,
): RenderPlan {
  const traces: TracePlan[] = [];
  let samples = 0;
  for (const [lead, raw] of leads.entries()) {
    samples = Math.max(samples, raw.length);
    traces.push({
      lead,
      timesS: raw.map((_, i) => i / sampleRate),
      valuesMv: toMillivolts(raw, adcGain, baseline),
    });
  }
  const durationS = samples / sampleRate;
  const grid: GridPlan = {
    durationS,
    widthMm: durationS * MM_PER_SECOND,
    majorDivisionsX: Math.ceil(durationS / MAJOR_DIVISION_S),
    majorDivisionsY: Math.ceil(bandMv / MAJOR_DIVISION_MV),
    bandHeightMm: bandMv * MM_PER_MV,
  };
  return { traces, grid, mmPerSecond: MM_PER_SECOND, mmPerMv: MM_PER_MV };
}

/** Millimeters of horizontal pen travel for a time offset. */
export function xMm(timeS: number): number {
  return timeS * MM_PER_SECOND;
}

/** Millimeters of vertical pen deflection for a voltage. */
export function yMm(valueMv: number): number {
  return valueMv * MM_PER_MV;
}
