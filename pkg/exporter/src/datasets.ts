import { readFileSync } from "node:fs";
import { join } from "node:path";

import { mulberry32 } from "./rng.js";

export interface DatasetImage {
  /** dataset index, also the exported row id */
  index: number;
  label: number;
  width: number;
  height: number;
  channels: number;
  /** interleaved RGB (or the mock's synthetic payload) */
  pixels: Uint8Array;
}

export interface Dataset {
  name: string;
  split: string;
  classNames: string[];
  images: DatasetImage[];
}

export const CIFAR10_CLASSES = [
  "airplane",
  "automobile",
  "bird",
  "cat",
  "deer",
  "dog",
  "frog",
  "horse",
  "ship",
  "truck",
];

const CIFAR_RECORD = 3073; // 1 label byte + 3 * 1024 planar pixels
const CIFAR_SIDE = 32;

function cifarRecords(buf: Buffer, startIndex: number): DatasetImage[] {
  if (buf.length % CIFAR_RECORD !== 0)
    throw new Error(`batch size ${buf.length} is not a multiple of ${CIFAR_RECORD}`);
  const out: DatasetImage[] = [];
  const count = buf.length / CIFAR_RECORD;
  for (let r = 0; r < count; r++) {
    const base = r * CIFAR_RECORD;
    const label = buf[base];
    if (label > 9) throw new Error(`label ${label} out of range in record ${r}`);
    const pixels = new Uint8Array(3 * 1024);
    // planar RGB -> interleaved
    for (let p = 0; p < 1024; p++) {
      pixels[3 * p] = buf[base + 1 + p];
      pixels[3 * p + 1] = buf[base + 1 + 1024 + p];
      pixels[3 * p + 2] = buf[base + 1 + 2048 + p];
    }
    out.push({
      index: startIndex + r,
      label,
      width: CIFAR_SIDE,
      height: CIFAR_SIDE,
      channels: 3,
      pixels,
    });
  }
  return out;
}

/** CIFAR10 from the python-version binary batches in a local directory. */
export function loadCifar10(dir: string, split: string): Dataset {
  const files =
    split === "train"
      ? [1, 2, 3, 4, 5].map((i) => `data_batch_${i}.bin`)
      : ["test_batch.bin"];
  const images: DatasetImage[] = [];
  for (const file of files) {
    const buf = readFileSync(join(dir, file));
    images.push(...cifarRecords(buf, images.length));
  }
  return { name: "cifar10", split, classNames: CIFAR10_CLASSES, images };
}

/**
 * Deterministic synthetic dataset for plumbing tests. Each image's payload
 * carries its class and sample index in the first 8 bytes (the mock model
 * reads them back) followed by seeded noise bytes.
 */
export function mockDataset(
  classes: number,
  perClass: number,
  split: string,
  seed = 0,
): Dataset {
  if (classes < 2) throw new Error("mock dataset needs at least two classes");
  const images: DatasetImage[] = [];
  const uniform = mulberry32(seed ^ 0x5eed);
  for (let c = 0; c < classes; c++) {
    for (let s = 0; s < perClass; s++) {
      const pixels = new Uint8Array(64);
      const view = new DataView(pixels.buffer);
      view.setUint32(0, c, true);
      view.setUint32(4, s, true);
      for (let i = 8; i < pixels.length; i++) pixels[i] = Math.floor(uniform() * 256);
      images.push({
        index: images.length,
        label: c,
        width: 8,
        height: 8,
        channels: 1,
        pixels,
      });
    }
  }
  const classNames = Array.from({ length: classes }, (_, i) => `class_${i}`);
  return { name: `mock_${classes}x${perClass}`, split, classNames, images };
}

/**
 * Dataset specifier grammar:
 *   mock:<classes>x<perClass>[@seed]
 *   cifar10:<directory with the binary batches>
 */
export function loadDataset(spec: string, split: string): Dataset {
  if (spec.startsWith("mock:")) {
    const body = spec.slice("mock:".length);
    const [shape, seedPart] = body.split("@");
    const match = shape.match(/^(\d+)x(\d+)$/);
    if (!match) throw new Error(`bad mock dataset spec: ${spec}`);
    const seed = seedPart === undefined ? 0 : Number(seedPart);
    return mockDataset(Number(match[1]), Number(match[2]), split, seed);
  }
  if (spec.startsWith("cifar10:")) {
    return loadCifar10(spec.slice("cifar10:".length), split);
  }
  throw new Error(`unknown dataset spec: ${spec} (expected mock:... or cifar10:...)`);
}
