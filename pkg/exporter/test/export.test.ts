import assert from "node:assert/strict";
import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { readEmbeddings } from "../src/dpeb.js";
import { loadEncoder } from "../src/encoder.js";
import { runExport } from "../src/export.js";

const here = dirname(fileURLToPath(import.meta.url));
const root = join(here, "..", "..");
const fixtureCorpus = join(root, "testdata", "corpus3.jsonl");
const goldenFile = join(root, "testdata", "golden_stub8.dpemb");

function tmpfile(name: string): string {
  return join(mkdtempSync(join(tmpdir(), "export-")), name);
}

test("three-record export readable with matching count/dim and fingerprint", () => {
  const out = tmpfile("c3.dpemb");
  const result = runExport({ corpusPath: fixtureCorpus, model: "stub-8", outPath: out, batchSize: 2 });
  assert.equal(result.count, 3);
  assert.equal(result.dim, 8);
  assert.equal(result.fingerprintHex, "59044f84748b21b8c5563ec0fb1a62b0");
  const back = readEmbeddings(out);
  assert.equal(back.count, 3);
  assert.equal(back.dim, 8);
});

test("export is byte-identical to the committed golden file", () => {
  const out = tmpfile("golden.dpemb");
  runExport({ corpusPath: fixtureCorpus, model: "stub-8", outPath: out, batchSize: 32 });
  assert.ok(
    readFileSync(out).equals(readFileSync(goldenFile)),
    "export of the fixture corpus with stub-8 must reproduce testdata/golden_stub8.dpemb byte-for-byte"
  );
});

test("re-export is deterministic regardless of batch size", () => {
  const a = tmpfile("a.dpemb");
  const b = tmpfile("b.dpemb");
  runExport({ corpusPath: fixtureCorpus, model: "stub-8", outPath: a, batchSize: 1 });
  runExport({ corpusPath: fixtureCorpus, model: "stub-8", outPath: b, batchSize: 3 });
  assert.ok(readFileSync(a).equals(readFileSync(b)));
});

test("stub encoder is deterministic and shape-correct", () => {
  const enc = loadEncoder("stub-16");
  const [r1] = enc.encode(["hello world"]);
  const [r2] = enc.encode(["hello world"]);
  assert.equal(r1.length, 16);
  assert.deepEqual([...r1], [...r2]);
  const [other] = enc.encode(["different text"]);
  assert.notDeepEqual([...r1], [...other]);
});

test("unknown model id fails with guidance", () => {
  assert.throws(() => loadEncoder("sentence-encoder-base"), /stub-<dim>/);
});

test("cli end to end", () => {
  const out = tmpfile("cli.dpemb");
  const cli = join(root, "dist", "src", "cli.js");
  const stdout = execFileSync(
    process.execPath,
    [cli, "export", "--corpus", fixtureCorpus, "--model", "stub-8", "--out", out, "--batch", "2"],
    { encoding: "utf-8" }
  );
  assert.match(stdout, /count=3 dim=8/);
  assert.ok(readFileSync(out).equals(readFileSync(goldenFile)));
});
