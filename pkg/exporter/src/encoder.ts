/**
 * Sentence encoders behind a common interface.
 *
 * The bundled backend is a deterministic hashing stub ("stub-<dim>"): MD5 of
 * each byte trigram picks a signed bucket, rows scale by 1/sqrt(trigram
 * count).  It exists so the export path and the binary format can be pinned
 * by golden files; a real sentence-encoder backend plugs in through the same
 * interface keyed by its model identifier.
 */

import { createHash } from "node:crypto";

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  encode(texts: string[]): Float32Array[];
}

class StubEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`stub encoder dim must be a positive integer, got ${dim}`);
    }
    this.id = `stub-${dim}`;
    this.dim = dim;
  }

  encode(texts: string[]): Float32Array[] {
    return texts.map((text) => {
      const row = new Float64Array(this.dim);
      const bytes = Buffer.concat([Buffer.from([0x02]), Buffer.from(text, "utf-8"), Buffer.from([0x03])]);
      const n = bytes.length - 2;
      for (let i = 0; i < n; i++) {
        const h = createHash("md5").update(bytes.subarray(i, i + 3)).digest();
        const idx = h.readUInt32LE(0) % this.dim;
        row[idx] += h[4] & 1 ? 1 : -1;
      }
      const scale = 1 / Math.sqrt(Math.max(1, n));
      const out = new Float32Array(this.dim);
      for (let j = 0; j < this.dim; j++) {
        out[j] = Math.fround(row[j] * scale);
      }
      return out;
    });
  }
}

export function loadEncoder(model: string): Encoder {
  const stub = /^stub-(\d+)$/.exec(model);
  if (stub) {
    return new StubEncoder(parseInt(stub[1], 10));
  }
  throw new Error(
    `cannot load encoder '${model}': only the deterministic 'stub-<dim>' backend is bundled; ` +
      `wire a real sentence-encoder backend into loadEncoder to use pretrained models`
  );
}
