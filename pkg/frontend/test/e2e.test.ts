// End-to-end: the console's submit pipeline against a real service process,
// using the bundled 12-lead example recording.

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { analyze, validateForm } from "../src/flow.js";

const execFileAsync = promisify(execFile);
const REPO_ROOT = join(__dirname, "..", "..");
const TOKEN = "console-e2e-token";

let service: ChildProcess | null = null;
let baseUrl = "";

async function waitForHealth(url: string, timeoutMs: number) {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${url}/api/v1/health`);
      if (resp.ok) return;
    } catch (err) {
      lastError = err;
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`service did not become healthy: ${lastError}`);
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "console-e2e-"));
  await execFileAsync(
    "python3", ["-m", "cardioserve.cli", "init-bundles", "--toy", "--out", dir],
    { cwd: REPO_ROOT },
  );
  writeFileSync(join(dir, "tokens.txt"), `${TOKEN}\n`);
  writeFileSync(join(dir, "service.json"), JSON.stringify({
    token_file: "tokens.txt",
    single_lead_bundle: "single_lead.bundle",
    twelve_lead_bundle: "twelve_lead.bundle",
    worker_count: 1,
    request_timeout_s: 30,
  }));
  const port = 20000 + Math.floor(Math.random() * 20000);
  baseUrl = `http://127.0.0.1:${port}`;
  service = spawn(
    "python3",
    ["-m", "cardioserve.cli", "serve", "--config", join(dir, "service.json"),
     "--port", String(port)],
    { cwd: REPO_ROOT, stdio: ["ignore", "inherit", "inherit"] },
  );
  await waitForHealth(baseUrl, 60_000);
}, 90_000);

afterAll(async () => {
  if (service) {
    service.kill("SIGTERM");
    await new Promise((resolve) => service!.once("exit", resolve));
  }
});

describe("console pipeline against the live service", () => {
  it("analyzes the bundled 12-lead example", async () => {
    const csvText = readFileSync(
      join(__dirname, "..", "examples", "twelve_lead_sinus.csv"), "utf-8");
    const validated = validateForm({
      sampleRateText: "250",
      adcGainText: "200",
      baselineText: "0",
      csvText,
    });
    expect(validated.ok).toBe(true);
    if (!validated.ok) return;

    const outcome = await analyze(validated.value, baseUrl, TOKEN);

    expect(outcome.response.model).toBe("twelve_lead");
    // the report renders one waveform band per lead: all 12
    expect(outcome.renderPlan.traces).toHaveLength(12);
    // the findings panel lists the full default vocabulary
    expect(outcome.report.findings).toHaveLength(7);
    expect(outcome.report.findings.map((f) => f.code)).toContain("AF");
    // heart rate shown verbatim from the service response (within 1 bpm)
    expect(outcome.report.measurements).not.toBeNull();
    const shown = outcome.report.measurements!.heartRateBpm;
    const fromService = outcome.response.measurements!.heartRateBpm;
    expect(Math.abs(shown - fromService)).toBeLessThanOrEqual(1.0);
    // the example is a 75 bpm sinus recording
    expect(shown).toBeGreaterThan(65);
    expect(shown).toBeLessThan(85);
  }, 60_000);

  it("single-lead example routes to the single-lead model", async () => {
    const csvText = readFileSync(
      join(__dirname, "..", "examples", "single_lead_af.csv"), "utf-8");
    const validated = validateForm({
      sampleRateText: "250",
      adcGainText: "200",
      baselineText: "0",
      csvText,
    });
    expect(validated.ok).toBe(true);
    if (!validated.ok) return;
    const outcome = await analyze(validated.value, baseUrl, TOKEN);
    expect(outcome.response.model).toBe("single_lead");
    expect(outcome.renderPlan.traces).toHaveLength(1);
  }, 60_000);

  it("rejects a bad token with UNAUTHORIZED", async () => {
    const validated = validateForm({
      sampleRateText: "250",
      adcGainText: "200",
      baselineText: "0",
      csvText: "I\n" + Array.from({ length: 600 }, (_, i) => String(i % 7)).join("\n") + "\n",
    });
    if (!validated.ok) return;
    await expect(analyze(validated.value, baseUrl, "wrong-token"))
      .rejects.toMatchObject({ code: "UNAUTHORIZED" });
  }, 60_000);
});
