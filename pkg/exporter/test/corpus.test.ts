import { describe, expect, test } from "vitest";
import { detokenize, idsToBytes, provenanceSidecar, tokenize, TokenizeError } from "../src/corpus.js";

const VOCAB = [" ", "a", "b", "c", "\n"];

describe("tokenize", () => {
  test("maps characters to vocabulary indices", () => {
    expect([...tokenize("ab cba\n", VOCAB)]).toEqual([1, 2, 0, 3, 2, 1, 4]);
  });

  test("round trip is lossless", () => {
    const text = "abc cba\nbb a";
    expect(detokenize(tokenize(text, VOCAB), VOCAB)).toBe(text);
  });

  test("empty corpus is an error", () => {
    expect(() => tokenize("", VOCAB)).toThrow(TokenizeError);
  });

  test("out-of-vocabulary character names itself", () => {
    expect(() => tokenize("abz", VOCAB)).toThrow(/"z"/);
  });
});

describe("serialization", () => {
  test("u32 little-endian layout", () => {
    const bytes = idsToBytes(Uint32Array.from([1, 0x01020304]));
    expect([...bytes]).toEqual([1, 0, 0, 0, 4, 3, 2, 1]);
  });

  test("sidecar token count matches byte length / 4", () => {
    const ids = tokenize("abc ab", VOCAB);
    const bytes = idsToBytes(ids);
    const sidecar = provenanceSidecar("some/file.txt", "note", ids.length);
    expect(sidecar).toContain(`token_count: ${bytes.length / 4}`);
    expect(sidecar).toContain("source: some/file.txt");
    expect(sidecar).toContain("license: note");
  });
});
