/** Corpus -> embedding-file export job. */

import { readCorpus } from "./corpus.js";
import { corpusFingerprint, writeEmbeddings } from "./dpeb.js";
import { loadEncoder } from "./encoder.js";

export interface ExportJob {
  corpusPath: string;
  model: string;
  outPath: string;
  batchSize: number;
}

export interface ExportResult {
  count: number;
  dim: number;
  fingerprintHex: string;
}

export function runExport(job: ExportJob): ExportResult {
  if (!Number.isInteger(job.batchSize) || job.batchSize < 1) {
    throw new Error(`batch size must be a positive integer, got ${job.batchSize}`);
  }
  const records = readCorpus(job.corpusPath);
  const encoder = loadEncoder(job.model);
  const data = new Float32Array(records.length * encoder.dim);
  try {
    for (let start = 0; start < records.length; start += job.batchSize) {
      const batch = records.slice(start, start + job.batchSize);
      const rows = encoder.encode(batch.map((r) => r.text));
      rows.forEach((row, i) => {
        if (row.length !== encoder.dim) {
          throw new Error(`encoder returned dim ${row.length}, expected ${encoder.dim}`);
        }
        data.set(row, (start + i) * encoder.dim);
      });
    }
  } catch (err) {
    if (err instanceof RangeError) {
      throw new Error(`encoding ran out of memory; retry with a smaller --batch (was ${job.batchSize}): ${err}`);
    }
    throw err;
  }
  const fingerprint = corpusFingerprint(records.map((r) => r.id));
  writeEmbeddings({ count: records.length, dim: encoder.dim, data, fingerprint }, job.outPath);
  return { count: records.length, dim: encoder.dim, fingerprintHex: fingerprint.toString("hex") };
}
