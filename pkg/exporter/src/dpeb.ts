/**
 * DPEB1 binary embedding format, byte-identical to the primary toolkit's
 * reader/writer:
 *
 *   magic   6 bytes   "DPEB1\0"
 *   version u32 LE    1
 *   count   u32 LE
 *   dim     u32 LE
 *   dtype   u8        1 = float32
 *   fprint  16 bytes  MD5 over newline-joined record ids
 *   data    count*dim float32 LE, row-major
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = Buffer.from("DPEB1\0", "latin1");
export const VERSION = 1;
export const DTYPE_F32 = 1;
const HEADER_SIZE = MAGIC.length + 4 + 4 + 4 + 1 + 16;

export interface EmbeddingMatrix {
  count: number;
  dim: number;
  /** row-major, length count*dim */
  data: Float32Array;
  fingerprint: Buffer;
}

/** Order-sensitive 128-bit fingerprint of record ids. */
export function corpusFingerprint(ids: string[]): Buffer {
  return createHash("md5").update(Buffer.from(ids.join("\n"), "utf-8")).digest();
}

export function writeEmbeddings(matrix: EmbeddingMatrix, path: string): void {
  if (matrix.data.length !== matrix.count * matrix.dim) {
    throw new Error(`data length ${matrix.data.length} != count*dim ${matrix.count * matrix.dim}`);
  }
  if (matrix.fingerprint.length !== 16) {
    throw new Error("fingerprint must be 16 bytes");
  }
  for (const v of matrix.data) {
    if (!Number.isFinite(v)) {
      throw new Error("embedding matrix contains non-finite values");
    }
  }
  const buf = Buffer.alloc(HEADER_SIZE + matrix.data.length * 4);
  let off = 0;
  MAGIC.copy(buf, off);
  off += MAGIC.length;
  off = buf.writeUInt32LE(VERSION, off);
  off = buf.writeUInt32LE(matrix.count, off);
  off = buf.writeUInt32LE(matrix.dim, off);
  off = buf.writeUInt8(DTYPE_F32, off);
  matrix.fingerprint.copy(buf, off);
  off += 16;
  for (const v of matrix.data) {
    off = buf.writeFloatLE(v, off);
  }
  writeFileSync(path, buf);
}

export function readEmbeddings(path: string): EmbeddingMatrix {
  const buf = readFileSync(path);
  if (!buf.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error(`${path}: not an embedding file (bad magic)`);
  }
  if (buf.length < HEADER_SIZE) {
    throw new Error(`${path}: header truncated`);
  }
  let off = MAGIC.length;
  const version = buf.readUInt32LE(off);
  off += 4;
  const count = buf.readUInt32LE(off);
  off += 4;
  const dim = buf.readUInt32LE(off);
  off += 4;
  const dtype = buf.readUInt8(off);
  off += 1;
  if (version !== VERSION || dtype !== DTYPE_F32) {
    throw new Error(`${path}: unsupported version ${version} / dtype ${dtype}`);
  }
  const fingerprint = Buffer.from(buf.subarray(off, off + 16));
  off += 16;
  const expected = count * dim * 4;
  if (buf.length - off !== expected) {
    throw new Error(`${path}: payload has ${buf.length - off} bytes, expected ${expected}`);
  }
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(off + i * 4);
  }
  return { count, dim, data, fingerprint };
}
