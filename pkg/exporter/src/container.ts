/**
 * Binary container format shared with the adaptation engine.
 *
 * Little-endian: magic "RCLP" | version u32 (=1) | section tag u8 | body.
 * Tag 1 embeddings: n u64, d u64, unit_norm u8, n*d float32 row-major,
 *   n length-prefixed UTF-8 ids (u32 length each).
 * Tag 2 catalog: m u64, m length-prefixed names, count u8 (1 or 2),
 *   inline embedding sections (tag byte + body, single-template first).
 * Tag 3 labels: n u64, n int64 (-1 = unlabeled).
 */

export const MAGIC = "RCLP";
export const FORMAT_VERSION = 1;
export const TAG_EMBEDDINGS = 1;
export const TAG_CATALOG = 2;
export const TAG_LABELS = 3;

export interface EmbeddingSet {
  rows: number;
  dims: number;
  /** row-major, rows * dims */
  data: Float64Array;
  ids: string[];
  unitNorm: boolean;
}

export interface ClassCatalog {
  names: string[];
  single: EmbeddingSet;
  multi?: EmbeddingSet;
}

export function l2Normalize(vec: Float64Array): Float64Array {
  let sq = 0;
  for (let i = 0; i < vec.length; i++) sq += vec[i] * vec[i];
  const norm = Math.sqrt(sq);
  if (norm <= 1e-12) throw new Error("cannot normalize a zero vector");
  const out = new Float64Array(vec.length);
  for (let i = 0; i < vec.length; i++) out[i] = vec[i] / norm;
  return out;
}

export function validateEmbeddingSet(set: EmbeddingSet): void {
  if (set.rows < 1) throw new Error("embedding set needs at least one row");
  if (set.dims < 2) throw new Error("embedding dims must be at least 2");
  if (set.data.length !== set.rows * set.dims)
    throw new Error("data length does not match rows * dims");
  if (set.ids.length !== set.rows) throw new Error("one id per row required");
  if (new Set(set.ids).size !== set.rows) throw new Error("ids must be unique");
  for (let i = 0; i < set.data.length; i++) {
    if (!Number.isFinite(set.data[i])) throw new Error("data contains NaN or Inf");
  }
  if (set.unitNorm) {
    for (let r = 0; r < set.rows; r++) {
      let sq = 0;
      for (let c = 0; c < set.dims; c++) {
        const v = set.data[r * set.dims + c];
        sq += v * v;
      }
      if (Math.abs(Math.sqrt(sq) - 1) > 1e-4)
        throw new Error(`row ${r} is flagged unit-norm but has norm ${Math.sqrt(sq)}`);
    }
  }
}

class ByteWriter {
  private chunks: Buffer[] = [];

  u8(v: number): void {
    const b = Buffer.alloc(1);
    b.writeUInt8(v);
    this.chunks.push(b);
  }

  u32(v: number): void {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    this.chunks.push(b);
  }

  u64(v: number): void {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v));
    this.chunks.push(b);
  }

  i64(v: number): void {
    const b = Buffer.alloc(8);
    b.writeBigInt64LE(BigInt(v));
    this.chunks.push(b);
  }

  f32Array(values: Float64Array): void {
    const b = Buffer.alloc(4 * values.length);
    for (let i = 0; i < values.length; i++) b.writeFloatLE(Math.fround(values[i]), 4 * i);
    this.chunks.push(b);
  }

  string(s: string): void {
    const raw = Buffer.from(s, "utf-8");
    this.u32(raw.length);
    this.chunks.push(raw);
  }

  done(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

function writeEmbeddingsBody(w: ByteWriter, set: EmbeddingSet): void {
  validateEmbeddingSet(set);
  w.u64(set.rows);
  w.u64(set.dims);
  w.u8(set.unitNorm ? 1 : 0);
  w.f32Array(set.data);
  for (const id of set.ids) w.string(id);
}

function header(tag: number): Buffer {
  const b = Buffer.alloc(9);
  b.write(MAGIC, 0, "ascii");
  b.writeUInt32LE(FORMAT_VERSION, 4);
  b.writeUInt8(tag, 8);
  return b;
}

export function encodeEmbeddings(set: EmbeddingSet): Buffer {
  const w = new ByteWriter();
  writeEmbeddingsBody(w, set);
  return Buffer.concat([header(TAG_EMBEDDINGS), w.done()]);
}

export function encodeCatalog(catalog: ClassCatalog): Buffer {
  const m = catalog.names.length;
  if (m < 2) throw new Error("catalog needs at least two classes");
  for (const set of [catalog.single, catalog.multi]) {
    if (set && set.rows !== m) throw new Error("catalog embeddings must have one row per class");
  }
  const w = new ByteWriter();
  w.u64(m);
  for (const name of catalog.names) w.string(name);
  const sections = catalog.multi ? [catalog.single, catalog.multi] : [catalog.single];
  w.u8(sections.length);
  for (const set of sections) {
    w.u8(TAG_EMBEDDINGS);
    writeEmbeddingsBody(w, set);
  }
  return Buffer.concat([header(TAG_CATALOG), w.done()]);
}

export function encodeLabels(values: number[]): Buffer {
  const w = new ByteWriter();
  w.u64(values.length);
  for (const v of values) {
    if (!Number.isInteger(v) || v < -1) throw new Error(`invalid label value ${v}`);
    w.i64(v);
  }
  return Buffer.concat([header(TAG_LABELS), w.done()]);
}

// --- reader (used by the tests to round-trip what we wrote) ---------------

class ByteReader {
  pos = 0;

  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) throw new Error("truncated payload");
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u8(): number {
    return this.take(1).readUInt8();
  }

  u32(): number {
    return this.take(4).readUInt32LE();
  }

  u64(): number {
    return Number(this.take(8).readBigUInt64LE());
  }

  i64(): number {
    return Number(this.take(8).readBigInt64LE());
  }

  string(): string {
    const len = this.u32();
    return this.take(len).toString("utf-8");
  }

  atEnd(): boolean {
    return this.pos === this.buf.length;
  }
}

function readEmbeddingsBody(r: ByteReader): EmbeddingSet {
  const rows = r.u64();
  const dims = r.u64();
  const unitNorm = r.u8() === 1;
  const raw = r.take(4 * rows * dims);
  const data = new Float64Array(rows * dims);
  for (let i = 0; i < data.length; i++) data[i] = raw.readFloatLE(4 * i);
  const ids: string[] = [];
  for (let i = 0; i < rows; i++) ids.push(r.string());
  const set = { rows, dims, data, ids, unitNorm };
  validateEmbeddingSet(set);
  return set;
}

export type Decoded =
  | { kind: "embeddings"; value: EmbeddingSet }
  | { kind: "catalog"; value: ClassCatalog }
  | { kind: "labels"; value: number[] };

export function decodeContainer(buf: Buffer): Decoded {
  const r = new ByteReader(buf);
  if (r.take(4).toString("ascii") !== MAGIC) throw new Error("bad magic");
  const version = r.u32();
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const tag = r.u8();
  let decoded: Decoded;
  if (tag === TAG_EMBEDDINGS) {
    decoded = { kind: "embeddings", value: readEmbeddingsBody(r) };
  } else if (tag === TAG_CATALOG) {
    const m = r.u64();
    const names: string[] = [];
    for (let i = 0; i < m; i++) names.push(r.string());
    const count = r.u8();
    if (count !== 1 && count !== 2) throw new Error(`catalog section count ${count}`);
    const sets: EmbeddingSet[] = [];
    for (let i = 0; i < count; i++) {
      if (r.u8() !== TAG_EMBEDDINGS) throw new Error("catalog inline tag mismatch");
      sets.push(readEmbeddingsBody(r));
    }
    decoded = { kind: "catalog", value: { names, single: sets[0], multi: sets[1] } };
  } else if (tag === TAG_LABELS) {
    const n = r.u64();
    const values: number[] = [];
    for (let i = 0; i < n; i++) values.push(r.i64());
    decoded = { kind: "labels", value: values };
  } else {
    throw new Error(`unknown section tag ${tag}`);
  }
  if (!r.atEnd()) throw new Error("trailing bytes after section body");
  return decoded;
}
