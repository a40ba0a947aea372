/**
 * End-to-end: a headless DOM session against the live Python service.
 *
 * Spawns `refine-loop abtest serve` on a scratch store with a 5-pair
 * experiment and a 10-sentence attribution task, then drives the real
 * screens with real fetch.  Skips when the Python service cannot start.
 */
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AttributionScreen } from "../src/attribution.js";
import { PreferenceScreen } from "../src/preference.js";

const PORT = 20000 + Math.floor(Math.random() * 20000);
const BASE = `http://127.0.0.1:${PORT}`;

const BUILD_STORE = `
import sys
from refine_loop.core import Dialogue, Turn, serialize_summary
from refine_loop.core import Summary, SummarySentence
from refine_loop.harness import make_ab_pairs
from refine_loop.service import write_experiment
from pathlib import Path

root = Path(sys.argv[1])

def summary(did, texts):
    return Summary(dialogue_id=did, sentences=tuple(
        SummarySentence(index=i, text=t) for i, t in enumerate(texts)))

dialogues = {}
a, b = {}, {}
for i in range(5):
    did = f"d{i:03d}"
    dialogues[did] = Dialogue(id=did, turns=(
        Turn(0, "Agent", "How can I help you today?"),
        Turn(1, "Caller", f"Issue {i} needs attention."),
        Turn(2, "Agent", "It is resolved now."),
    ))
    a[did] = summary(did, [f"Issue {i} was resolved promptly."])
    b[did] = summary(did, [f"A caller raised issue {i}; it was handled."])

pairs, key = make_ab_pairs(a, b, seed=3, a_label="candidate", b_label="baseline")
write_experiment(root, "exp-ui", pairs, key, dialogues=dialogues)

attribution = root / "attribution"
attribution.mkdir(exist_ok=True)
task = summary("d000", [f"Statement number {i}." for i in range(10)])
(attribution / "d000.json").write_text(serialize_summary(task), encoding="utf-8")
print("store ready")
`;

let server: ChildProcess | null = null;
let storeDir: string | null = null;
let serviceUp = false;

async function waitForHealth(timeoutMs: number): Promise<boolean> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/healthz`);
      if (response.ok) return true;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  return false;
}

beforeAll(async () => {
  storeDir = mkdtempSync(join(tmpdir(), "refine-loop-ui-"));
  const build = spawnSync("python3", ["-c", BUILD_STORE, storeDir], { encoding: "utf-8" });
  if (build.status !== 0) {
    console.warn("store build failed, skipping integration tests:", build.stderr);
    return;
  }
  server = spawn(
    "python3",
    ["-m", "refine_loop.cli", "abtest", "serve", "--store", storeDir,
     "--port", String(PORT), "--host", "127.0.0.1"],
    { stdio: "ignore" },
  );
  serviceUp = await waitForHealth(20000);
});

afterAll(() => {
  server?.kill("SIGTERM");
  if (storeDir) rmSync(storeDir, { recursive: true, force: true });
});

async function settle() {
  for (let i = 0; i < 20; i++) await new Promise((resolve) => setTimeout(resolve, 10));
}

describe("live service session", () => {
  it("completes a 5-pair experiment; every click is one effective record", async (ctx) => {
    if (!serviceUp) return ctx.skip();
    const root = document.createElement("div");
    document.body.replaceChildren(root);
    const api = new ApiClient(BASE);
    const screen = new PreferenceScreen(root, api, "exp-ui", "ui-annotator");
    await screen.start();

    const clicks: string[] = [];
    for (let i = 0; i < 5; i++) {
      const choice = (["left", "right", "tie"] as const)[i % 3]!;
      clicks.push(choice);
      (document.querySelector(`#choose-${choice}`) as HTMLButtonElement).click();
      await settle();
    }
    expect(document.querySelector(".completion-screen")).toBeTruthy();
    expect(document.querySelector(".completion-count")!.textContent).toContain("5 of 5");
    screen.stop();

    const exportBody = (await (await fetch(`${BASE}/experiments/exp-ui/export`)).json()) as {
      records: Array<{ pair_id: string; choice: string; supersedes: string | null }>;
    };
    expect(exportBody.records).toHaveLength(5); // exactly one record per click
    expect(exportBody.records.every((r) => r.supersedes === null)).toBe(true);
    expect(exportBody.records.map((r) => r.choice).sort()).toEqual([...clicks].sort());
    const pairIds = new Set(exportBody.records.map((r) => r.pair_id));
    expect(pairIds.size).toBe(5);
  });

  it("attribution flow yields coverage 0.9 on a 10-sentence task", async (ctx) => {
    if (!serviceUp) return ctx.skip();
    const root = document.createElement("div");
    document.body.replaceChildren(root);
    const api = new ApiClient(BASE);
    const screen = new AttributionScreen(root, api, "d000", "ui-annotator");
    await screen.start();

    for (let i = 0; i < 9; i++) {
      (document.querySelector(`.sentence-item[data-index="${i}"]`) as HTMLElement).click();
      (document.querySelector('.turn-item[data-index="1"]') as HTMLElement).click();
      (document.querySelector("#save-links") as HTMLButtonElement).click();
      await settle();
    }
    (document.querySelector('.sentence-item[data-index="9"]') as HTMLElement).click();
    (document.querySelector("#mark-ungrounded") as HTMLButtonElement).click();
    await settle();

    const coverage = (await (await fetch(`${BASE}/attribution/d000/coverage`)).json()) as {
      coverage: number;
    };
    expect(coverage.coverage).toBeCloseTo(0.9, 5);

    // reload restores per-sentence state from the server
    const fresh = document.createElement("div");
    document.body.replaceChildren(fresh);
    const reloaded = new AttributionScreen(fresh, api, "d000", "ui-annotator");
    await reloaded.start();
    expect(fresh.querySelectorAll(".sentence-item.submitted")).toHaveLength(10);
  });
});
