import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { resolveModel } from "./backends.js";
import {
  ClassCatalog,
  EmbeddingSet,
  encodeCatalog,
  encodeEmbeddings,
  encodeLabels,
  l2Normalize,
} from "./container.js";
import { loadDataset } from "./datasets.js";
import { SINGLE_TEMPLATE, fillTemplate, templatesFor } from "./templates.js";

export interface ExportJob {
  model: string;
  dataset: string;
  split: string;
  templates: "single" | "multi";
  outDir: string;
  device?: string;
  batchSize: number;
  dumpPerTemplate?: boolean;
}

export interface ExportResult {
  visualPath: string;
  catalogPath: string;
  labelsPath: string;
  metadataPath: string;
  imageCount: number;
  classCount: number;
}

function toEmbeddingSet(rows: Float64Array[], ids: string[]): EmbeddingSet {
  if (rows.length === 0) throw new Error("no rows to export");
  const dims = rows[0].length;
  const data = new Float64Array(rows.length * dims);
  rows.forEach((row, r) => {
    if (row.length !== dims) throw new Error("ragged embedding rows");
    data.set(l2Normalize(row), r * dims);
  });
  return { rows: rows.length, dims, data, ids, unitNorm: true };
}

/** Renormalized mean of per-template unit embeddings, one row per class. */
function averageTemplates(perTemplate: Float64Array[][], dims: number): Float64Array[] {
  return perTemplate.map((rows) => {
    const mean = new Float64Array(dims);
    for (const row of rows) {
      const unit = l2Normalize(row);
      for (let j = 0; j < dims; j++) mean[j] += unit[j] / rows.length;
    }
    return l2Normalize(mean);
  });
}

function canonicalJson(value: Record<string, unknown>): string {
  const sorted = Object.fromEntries(
    Object.entries(value).sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0)),
  );
  return JSON.stringify(sorted, null, 2) + "\n";
}

export async function runExport(job: ExportJob): Promise<ExportResult> {
  if (job.batchSize < 1) throw new Error("batch size must be >= 1");
  if (job.templates !== "single" && job.templates !== "multi")
    throw new Error(`template mode must be single or multi, got ${job.templates}`);

  const dataset = loadDataset(job.dataset, job.split);
  const model = await resolveModel(job.model, dataset.classNames, job.device);

  // visual embeddings, batched, ids = dataset indices
  const visualRows: Float64Array[] = [];
  for (let start = 0; start < dataset.images.length; start += job.batchSize) {
    const batch = dataset.images.slice(start, start + job.batchSize);
    visualRows.push(...(await model.encodeImages(batch)));
  }
  const visual = toEmbeddingSet(
    visualRows,
    dataset.images.map((img) => String(img.index)),
  );

  // text embeddings: the single template always, the template list in multi mode
  const classIds = dataset.classNames.map((_, i) => `cls_${i}`);
  const singlePrompts = dataset.classNames.map((name) =>
    fillTemplate(SINGLE_TEMPLATE, name),
  );
  const single = toEmbeddingSet(await model.encodeTexts(singlePrompts), classIds);

  let multi: EmbeddingSet | undefined;
  let templateList: string[] = [SINGLE_TEMPLATE];
  let perTemplateDump: Record<string, number[][]> | undefined;
  if (job.templates === "multi") {
    templateList = templatesFor(dataset.name);
    if (templateList.length === 0) throw new Error("empty template list");
    const perClass: Float64Array[][] = dataset.classNames.map(() => []);
    for (const template of templateList) {
      const prompts = dataset.classNames.map((name) => fillTemplate(template, name));
      const rows = await model.encodeTexts(prompts);
      rows.forEach((row, cls) => perClass[cls].push(row));
    }
    multi = toEmbeddingSet(averageTemplates(perClass, model.dims), classIds);
    if (job.dumpPerTemplate) {
      perTemplateDump = {};
      dataset.classNames.forEach((name, cls) => {
        perTemplateDump![name] = perClass[cls].map((row) =>
          Array.from(l2Normalize(row)),
        );
      });
    }
  }

  const catalog: ClassCatalog = { names: dataset.classNames, single, multi };

  mkdirSync(job.outDir, { recursive: true });
  const visualPath = join(job.outDir, "visual.rclp");
  const catalogPath = join(job.outDir, "catalog.rclp");
  const labelsPath = join(job.outDir, "labels.rclp");
  const metadataPath = join(job.outDir, "metadata.json");
  writeFileSync(visualPath, encodeEmbeddings(visual));
  writeFileSync(catalogPath, encodeCatalog(catalog));
  writeFileSync(labelsPath, encodeLabels(dataset.images.map((img) => img.label)));
  writeFileSync(
    metadataPath,
    canonicalJson({
      model: model.id,
      dataset: dataset.name,
      split: job.split,
      templates: job.templates,
      template_list: templateList,
      dims: model.dims,
      image_count: visual.rows,
      class_count: dataset.classNames.length,
      logit_scale: model.logitScale,
      logit_scale_source: model.logitScaleSource,
    }),
  );
  if (perTemplateDump) {
    writeFileSync(
      join(job.outDir, "per_template.json"),
      JSON.stringify(perTemplateDump, null, 2) + "\n",
    );
  }
  return {
    visualPath,
    catalogPath,
    labelsPath,
    metadataPath,
    imageCount: visual.rows,
    classCount: dataset.classNames.length,
  };
}
