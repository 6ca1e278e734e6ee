/** Line-delimited corpus reader: one JSON object per line, order significant. */

import { readFileSync } from "node:fs";

export interface CorpusRecord {
  id: string;
  text: string;
}

export function readCorpus(path: string): CorpusRecord[] {
  const records: CorpusRecord[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, i) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    let obj: unknown;
    try {
      obj = JSON.parse(trimmed);
    } catch (err) {
      throw new Error(`${path}:${i + 1}: invalid record: ${err}`);
    }
    const rec = obj as Record<string, unknown>;
    if (typeof rec.id !== "string" && typeof rec.id !== "number") {
      throw new Error(`${path}:${i + 1}: record must carry 'id'`);
    }
    if (typeof rec.text !== "string") {
      throw new Error(`${path}:${i + 1}: record must carry 'text'`);
    }
    records.push({ id: String(rec.id), text: rec.text });
  });
  return records;
}
