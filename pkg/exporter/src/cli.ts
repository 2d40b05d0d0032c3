#!/usr/bin/env node
/**
 * Exporter CLI.
 *
 *   vlalign-export export --model mock:32 --dataset mock:4x50 --split test \
 *       --templates multi --out-dir ./out [--batch-size 64] [--device cpu] \
 *       [--dump-per-template]
 *
 * Writes visual.rclp, catalog.rclp, labels.rclp and metadata.json in the
 * engine's container format. Errors print one JSON object on stderr;
 * exit 2 marks bad input, 1 a failed export.
 */

import { pathToFileURL } from "node:url";

import { runExport } from "./exportJob.js";

interface Flags {
  [key: string]: string | boolean;
}

class CliError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly exitCode: number,
  ) {
    super(message);
  }
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--"))
      throw new CliError("usage_error", `unexpected argument: ${arg}`, 2);
    const name = arg.slice(2);
    if (name === "dump-per-template") {
      flags[name] = true;
      continue;
    }
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--"))
      throw new CliError("usage_error", `flag --${name} needs a value`, 2);
    flags[name] = value;
    i++;
  }
  return flags;
}

function required(flags: Flags, name: string): string {
  const value = flags[name];
  if (typeof value !== "string")
    throw new CliError("usage_error", `missing required flag --${name}`, 2);
  return value;
}

const KNOWN_FLAGS = new Set([
  "model",
  "dataset",
  "split",
  "templates",
  "out-dir",
  "batch-size",
  "device",
  "dump-per-template",
]);

export async function main(argv: string[]): Promise<number> {
  try {
    const [command, ...rest] = argv;
    if (command !== "export") {
      throw new CliError(
        "usage_error",
        "usage: vlalign-export export --model M --dataset D --split S " +
          "--templates single|multi --out-dir DIR",
        2,
      );
    }
    const flags = parseFlags(rest);
    for (const name of Object.keys(flags)) {
      if (!KNOWN_FLAGS.has(name))
        throw new CliError("usage_error", `unknown flag --${name}`, 2);
    }
    const templatesRaw = required(flags, "templates");
    if (templatesRaw !== "single" && templatesRaw !== "multi")
      throw new CliError("usage_error", "--templates must be single or multi", 2);
    const templates: "single" | "multi" = templatesRaw;
    const job = {
      model: required(flags, "model"),
      dataset: required(flags, "dataset"),
      split: required(flags, "split"),
      templates,
      outDir: required(flags, "out-dir"),
      device: typeof flags["device"] === "string" ? (flags["device"] as string) : undefined,
      batchSize: flags["batch-size"] ? Number(flags["batch-size"]) : 64,
      dumpPerTemplate: flags["dump-per-template"] === true,
    };
    let result;
    try {
      result = await runExport(job);
    } catch (err) {
      throw new CliError("export_error", (err as Error).message, 1);
    }
    process.stdout.write(
      JSON.stringify({
        image_count: result.imageCount,
        class_count: result.classCount,
        out_dir: job.outDir,
      }) + "\n",
    );
    return 0;
  } catch (err) {
    const cli =
      err instanceof CliError
        ? err
        : new CliError("internal_error", (err as Error).message, 1);
    process.stderr.write(JSON.stringify({ error: cli.code, message: cli.message }) + "\n");
    return cli.exitCode;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
