import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { execFileSync } from "node:child_process";
import { afterAll, describe, expect, it } from "vitest";

import { FeatureMatrix, encodeFeatureFile, readFeatureFile, writeFeatureFile } from "../src/featureFile.js";

const tmp = mkdtempSync(join(tmpdir(), "featfile-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

describe("encodeFeatureFile", () => {
  it("produces the exact byte layout, hand assembled", () => {
    const matrix: FeatureMatrix = {
      streamName: "ab",
      frameCount: 2,
      dim: 1,
      values: Float32Array.from([1.5, -2.0]),
    };
    const expected = Buffer.concat([
      Buffer.from("FUSEAU01", "ascii"),
      Buffer.from([0x02, 0x00]), // name length, u16 LE
      Buffer.from("ab", "utf8"),
      Buffer.from([2, 0, 0, 0, 0, 0, 0, 0]), // frame count, u64 LE
      Buffer.from([1, 0, 0, 0, 0, 0, 0, 0]), // dim, u64 LE
      Buffer.from([0x00, 0x00, 0xc0, 0x3f]), // 1.5f LE
      Buffer.from([0x00, 0x00, 0x00, 0xc0]), // -2.0f LE
    ]);
    expect(encodeFeatureFile(matrix).equals(expected)).toBe(true);
  });

  it("rejects a values array that does not match frameCount * dim", () => {
    expect(() =>
      encodeFeatureFile({ streamName: "x", frameCount: 3, dim: 2, values: new Float32Array(5) })
    ).toThrow(/value count/);
  });
});

describe("write/read round trip", () => {
  it("recovers the matrix bit for bit", () => {
    const values = Float32Array.from({ length: 12 }, (_, i) => Math.fround(Math.sin(i) * 3));
    const matrix: FeatureMatrix = { streamName: "swin", frameCount: 4, dim: 3, values };
    const path = join(tmp, "roundtrip.feat");
    writeFeatureFile(path, matrix);
    const back = readFeatureFile(path);
    expect(back.streamName).toBe("swin");
    expect(back.frameCount).toBe(4);
    expect(back.dim).toBe(3);
    expect(Array.from(back.values)).toEqual(Array.from(values));
  });

  it("rejects a wrong magic string", () => {
    const path = join(tmp, "badmagic.feat");
    writeFileSync(path, Buffer.from("NOTMAGIC" + "\x00".repeat(30), "ascii"));
    expect(() => readFeatureFile(path)).toThrow(/magic/);
  });

  it("rejects a truncated payload", () => {
    const matrix: FeatureMatrix = {
      streamName: "hubert",
      frameCount: 2,
      dim: 2,
      values: new Float32Array(4),
    };
    const whole = encodeFeatureFile(matrix);
    const path = join(tmp, "truncated.feat");
    writeFileSync(path, whole.subarray(0, whole.length - 3));
    expect(() => readFeatureFile(path)).toThrow();
  });
});

describe("cross-language conformance", () => {
  it("files written here load identically through the python reader", () => {
    const values = Float32Array.from([0.25, -1.75, 3.5, 1e-3, -42.0, 0.0]);
    const path = join(tmp, "conformance.feat");
    writeFeatureFile(path, { streamName: "roberta", frameCount: 3, dim: 2, values });
    const script = [
      "import json, sys",
      "from fuseau.feature_store import read_feature_file",
      "name, data = read_feature_file(sys.argv[1])",
      'print(json.dumps({"name": name, "shape": list(data.shape), "values": [float(x) for x in data.ravel()]}))',
    ].join("\n");
    const out = execFileSync("python3", ["-c", script, path], { encoding: "utf8" });
    const parsed = JSON.parse(out) as { name: string; shape: number[]; values: number[] };
    expect(parsed.name).toBe("roberta");
    expect(parsed.shape).toEqual([3, 2]);
    for (let i = 0; i < values.length; i++) {
      expect(parsed.values[i]).toBe(values[i]);
    }
  });
});
