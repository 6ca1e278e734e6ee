#!/usr/bin/env node
/** export --corpus <path> --model <id> --out <path> [--batch <n>] */

import { parseArgs } from "node:util";
import { runExport } from "./export.js";

function usage(): never {
  console.error("usage: export --corpus <path> --model <id> --out <path> [--batch <n>]");
  process.exit(2);
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        corpus: { type: "string" },
        model: { type: "string" },
        out: { type: "string" },
        batch: { type: "string", default: "32" },
      },
      allowPositionals: true,
    });
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  const { corpus, model, out, batch } = parsed.values;
  const positionals = parsed.positionals;
  if (positionals.length > 1 || (positionals.length === 1 && positionals[0] !== "export")) {
    usage();
  }
  if (!corpus || !model || !out) {
    usage();
  }
  try {
    const result = runExport({
      corpusPath: corpus,
      model,
      outPath: out,
      batchSize: parseInt(batch as string, 10),
    });
    console.log(`wrote ${out}: count=${result.count} dim=${result.dim} fingerprint=${result.fingerprintHex}`);
    return 0;
  } catch (err) {
    console.error(`export failed: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
