/** Prompt templates. Single mode uses exactly one canonical sentence; multi
 * mode uses the published per-dataset prompt list when one is bundled. */

export const SINGLE_TEMPLATE = "A photo of a {}";

/** The published CIFAR10 prompt list (18 templates). */
export const CIFAR10_TEMPLATES = [
  "a photo of a {}.",
  "a blurry photo of a {}.",
  "a black and white photo of a {}.",
  "a low contrast photo of a {}.",
  "a high contrast photo of a {}.",
  "a bad photo of a {}.",
  "a good photo of a {}.",
  "a photo of a small {}.",
  "a photo of a big {}.",
  "a photo of the {}.",
  "a blurry photo of the {}.",
  "a black and white photo of the {}.",
  "a low contrast photo of the {}.",
  "a high contrast photo of the {}.",
  "a bad photo of the {}.",
  "a good photo of the {}.",
  "a photo of the small {}.",
  "a photo of the big {}.",
];

/** Generic list for datasets without a bundled prompt file. */
export const DEFAULT_TEMPLATES = [
  "a photo of a {}.",
  "a photo of the {}.",
  "a bad photo of a {}.",
  "a good photo of a {}.",
  "a close-up photo of a {}.",
  "a bright photo of a {}.",
  "a cropped photo of a {}.",
  "a dark photo of a {}.",
];

export function fillTemplate(template: string, className: string): string {
  if (!template.includes("{}")) throw new Error(`template has no slot: ${template}`);
  return template.replaceAll("{}", className);
}

export function templatesFor(datasetName: string): string[] {
  if (datasetName.startsWith("cifar10")) return CIFAR10_TEMPLATES;
  return DEFAULT_TEMPLATES;
}
