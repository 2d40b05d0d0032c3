import { l2Normalize } from "./container.js";
import { fnv1a, gaussianVector } from "./rng.js";

export interface EmbeddingModel {
  readonly id: string;
  readonly dims: number;
  /** learned temperature multiplier for cosine logits */
  readonly logitScale: number;
  /** "checkpoint" when read from the model, "default" otherwise */
  readonly logitScaleSource: "checkpoint" | "default";
  encodeImages(images: { pixels: Uint8Array; width: number; height: number; channels: number }[]): Promise<Float64Array[]>;
  encodeTexts(prompts: string[]): Promise<Float64Array[]>;
}

function orthonormalFrame(count: number, dims: number, seed: number): Float64Array[] {
  if (dims < count + 2) throw new Error("mock model needs dims >= classes + 2");
  const frame: Float64Array[] = [];
  for (let i = 0; i < count; i++) {
    const v = gaussianVector(seed + 31 * i, dims);
    for (const prev of frame) {
      let dot = 0;
      for (let j = 0; j < dims; j++) dot += v[j] * prev[j];
      for (let j = 0; j < dims; j++) v[j] -= dot * prev[j];
    }
    frame.push(l2Normalize(v));
  }
  return frame;
}

/**
 * Deterministic stand-in for a vision-language checkpoint.
 *
 * It reads the class/sample header the mock dataset writes into each image
 * payload and maps both modalities into one synthetic space: images sit on
 * their class direction plus a shared visual offset and per-sample jitter;
 * prompts sit on the class direction (matched by class-name substring) plus
 * a larger shared text offset and per-prompt jitter. Purely for exercising
 * the export pipeline and the engine integration without model weights.
 */
export class MockModel implements EmbeddingModel {
  readonly id: string;
  readonly dims: number;
  readonly logitScale = 100.0;
  readonly logitScaleSource = "default" as const;

  private classDirs: Float64Array[];
  private textOffset: Float64Array;
  private visualOffset: Float64Array;

  constructor(
    private classNames: string[],
    dims = 32,
    private seed = 7,
  ) {
    this.id = `mock:${dims}`;
    this.dims = dims;
    const frame = orthonormalFrame(classNames.length + 2, dims, seed);
    this.classDirs = frame.slice(0, classNames.length);
    this.textOffset = frame[classNames.length];
    const visDir = frame[classNames.length + 1];
    this.visualOffset = new Float64Array(dims);
    for (let j = 0; j < dims; j++) this.visualOffset[j] = 0.4 * visDir[j];
  }

  private classOf(prompt: string): number {
    let best = -1;
    let bestLen = 0;
    this.classNames.forEach((name, i) => {
      if (prompt.includes(name) && name.length > bestLen) {
        best = i;
        bestLen = name.length;
      }
    });
    if (best < 0) throw new Error(`mock model found no known class in: ${prompt}`);
    return best;
  }

  async encodeImages(
    images: { pixels: Uint8Array; width: number; height: number; channels: number }[],
  ): Promise<Float64Array[]> {
    return images.map((img) => {
      const view = new DataView(img.pixels.buffer, img.pixels.byteOffset);
      const cls = view.getUint32(0, true);
      const sample = view.getUint32(4, true);
      if (cls >= this.classDirs.length)
        throw new Error(`mock image header class ${cls} out of range`);
      const jitter = gaussianVector(fnv1a(`img:${this.seed}:${cls}:${sample}`), this.dims);
      const out = new Float64Array(this.dims);
      for (let j = 0; j < this.dims; j++) {
        out[j] = this.classDirs[cls][j] + this.visualOffset[j] + 0.12 * jitter[j];
      }
      return l2Normalize(out);
    });
  }

  async encodeTexts(prompts: string[]): Promise<Float64Array[]> {
    return prompts.map((prompt) => {
      const cls = this.classOf(prompt);
      const jitter = gaussianVector(fnv1a(`txt:${this.seed}:${prompt}`), this.dims);
      const out = new Float64Array(this.dims);
      for (let j = 0; j < this.dims; j++) {
        out[j] = this.classDirs[cls][j] + 1.0 * this.textOffset[j] + 0.03 * jitter[j];
      }
      return l2Normalize(out);
    });
  }
}

/**
 * Real checkpoint backend over transformers.js (optional dependency).
 * Loads the text and vision towers with projection heads; embeddings come
 * out in the shared space and are renormalized by the export pipeline.
 */
export async function createTransformersModel(
  modelId: string,
  device: string | undefined,
): Promise<EmbeddingModel> {
  let hf: any;
  const moduleName = "@huggingface/transformers"; // optional peer, resolved at runtime
  try {
    hf = await import(/* @vite-ignore */ moduleName);
  } catch (err) {
    throw new Error(
      "the transformers backend needs the optional dependency " +
        "@huggingface/transformers (npm install @huggingface/transformers)",
    );
  }
  const { AutoTokenizer, AutoProcessor, CLIPTextModelWithProjection, CLIPVisionModelWithProjection, RawImage } = hf;
  const options = device ? { device } : {};
  const tokenizer = await AutoTokenizer.from_pretrained(modelId);
  const processor = await AutoProcessor.from_pretrained(modelId);
  const textModel = await CLIPTextModelWithProjection.from_pretrained(modelId, options);
  const visionModel = await CLIPVisionModelWithProjection.from_pretrained(modelId, options);
  const dims = textModel.config.projection_dim ?? 0;
  if (!dims) throw new Error("checkpoint config lacks projection_dim");

  const toRows = (tensor: any): Float64Array[] => {
    const [rows, cols] = tensor.dims;
    const flat = tensor.data as Float32Array;
    const out: Float64Array[] = [];
    for (let r = 0; r < rows; r++) {
      out.push(Float64Array.from(flat.subarray(r * cols, (r + 1) * cols)));
    }
    return out;
  };

  return {
    id: modelId,
    dims,
    // CLIP-family checkpoints train the temperature to its cap, exp(~4.6)
    logitScale: 100.0,
    logitScaleSource: "default",
    async encodeImages(images) {
      const raws = images.map(
        (img) => new RawImage(img.pixels, img.width, img.height, img.channels),
      );
      const inputs = await processor(raws);
      const { image_embeds } = await visionModel(inputs);
      return toRows(image_embeds);
    },
    async encodeTexts(prompts) {
      const inputs = tokenizer(prompts, { padding: true, truncation: true });
      const { text_embeds } = await textModel(inputs);
      return toRows(text_embeds);
    },
  };
}

/** Model specifier grammar: mock[:dims[@seed]] or a transformers model id. */
export async function resolveModel(
  spec: string,
  classNames: string[],
  device?: string,
): Promise<EmbeddingModel> {
  if (spec === "mock" || spec.startsWith("mock:")) {
    const body = spec === "mock" ? "" : spec.slice("mock:".length);
    const [dimsPart, seedPart] = body.split("@");
    const dims = dimsPart ? Number(dimsPart) : 32;
    const seed = seedPart ? Number(seedPart) : 7;
    if (!Number.isInteger(dims) || dims < 4) throw new Error(`bad mock dims in ${spec}`);
    return new MockModel(classNames, dims, seed);
  }
  return createTransformersModel(spec, device);
}
