/**
 * Cross-language integration: export with the mock backend, then drive the
 * adaptation engine's CLI on the written containers. The engine is consumed
 * only through its external interfaces (container files + subcommands).
 */

import { execFileSync, spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runExport } from "../src/exportJob.js";

function engineAvailable(): boolean {
  const probe = spawnSync("vlalign", ["--help"], { encoding: "utf-8" });
  return probe.status === 0;
}

const haveEngine = engineAvailable();
const tmpDirs: string[] = [];

function scratch(): string {
  const dir = mkdtempSync(join(tmpdir(), "vlxp-int-"));
  tmpDirs.push(dir);
  return dir;
}

afterAll(() => {
  for (const dir of tmpDirs) rmSync(dir, { recursive: true, force: true });
});

describe.skipIf(!haveEngine)("engine integration", () => {
  let outDir: string;

  beforeAll(async () => {
    outDir = scratch();
    await runExport({
      model: "mock:32",
      dataset: "mock:5x40",
      split: "test",
      templates: "multi",
      outDir,
      batchSize: 64,
    });
  });

  it("engine propagate consumes the export and labels it accurately", () => {
    const report = join(outDir, "prop.json");
    const stdout = execFileSync(
      "vlalign",
      [
        "propagate",
        "--embeddings", join(outDir, "visual.rclp"),
        "--catalog", join(outDir, "catalog.rclp"),
        "--labels", join(outDir, "labels.rclp"),
        "--k", "10",
        "--out", join(outDir, "pseudo.rclp"),
        "--report", report,
      ],
      { encoding: "utf-8" },
    );
    const summary = JSON.parse(stdout);
    expect(summary.accuracy).toBeGreaterThan(0.9);
  });

  it("engine evaluate compares label containers", () => {
    const stdout = execFileSync(
      "vlalign",
      [
        "evaluate",
        "--pred", join(outDir, "labels.rclp"),
        "--gt", join(outDir, "labels.rclp"),
      ],
      { encoding: "utf-8" },
    );
    expect(JSON.parse(stdout).top1_accuracy).toBe(1.0);
  });

  it("engine project accepts the catalog and reports alignment stats", () => {
    const stdout = execFileSync(
      "vlalign",
      [
        "project",
        "--embeddings", join(outDir, "visual.rclp"),
        "--catalog", join(outDir, "catalog.rclp"),
        "--variant", "P2",
        "--templates", "multi",
        "--labels", join(outDir, "labels.rclp"),
        "--out", join(outDir, "projected.rclp"),
      ],
      { encoding: "utf-8" },
    );
    const stats = JSON.parse(stdout);
    // the projection must pull the modalities together on mock geometry
    expect(stats.mean_intra_class_visual_text_cos).toBeGreaterThan(
      stats.mean_inter_class_visual_text_cos,
    );
  });

  it("full adapt run trains on the export", () => {
    const bundle = join(outDir, "bundle");
    const stdout = execFileSync(
      "vlalign",
      [
        "adapt",
        "--embeddings", join(outDir, "visual.rclp"),
        "--catalog", join(outDir, "catalog.rclp"),
        "--labels", join(outDir, "labels.rclp"),
        "--max-epochs", "1",
        "--batch-size", "32",
        "--k", "10",
        "--out-dir", bundle,
      ],
      { encoding: "utf-8" },
    );
    const report = JSON.parse(stdout);
    expect(report.final_accuracy).toBeGreaterThan(0.9);
  });
});

describe("cli", () => {
  async function run(argv: string[]): Promise<{ code: number; err: string }> {
    const { main } = await import("../src/cli.js");
    let err = "";
    const original = process.stderr.write.bind(process.stderr);
    process.stderr.write = ((chunk: string) => {
      err += chunk;
      return true;
    }) as typeof process.stderr.write;
    try {
      const code = await main(argv);
      return { code, err };
    } finally {
      process.stderr.write = original;
    }
  }

  it("rejects unknown flags with a JSON error", async () => {
    const { code, err } = await run(["export", "--bogus", "1"]);
    expect(code).toBe(2);
    expect(JSON.parse(err).error).toBe("usage_error");
  });

  it("requires the export subcommand", async () => {
    const { code } = await run(["frobnicate"]);
    expect(code).toBe(2);
  });

  it("validates the template mode", async () => {
    const { code, err } = await run([
      "export", "--model", "mock", "--dataset", "mock:2x3", "--split", "t",
      "--templates", "both", "--out-dir", "/tmp/x",
    ]);
    expect(code).toBe(2);
    expect(JSON.parse(err).message).toMatch(/single or multi/);
  });
});
