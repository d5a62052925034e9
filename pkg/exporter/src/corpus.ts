/**
 * Corpus tokenization against an exported character vocabulary: flat u32 LE
 * token-id files plus a plain-text provenance sidecar (source path, license
 * note, token count).
 */

export class TokenizeError extends Error {}

export function tokenize(text: string, vocab: string[]): Uint32Array {
  if (text.length === 0) throw new TokenizeError("corpus is empty");
  const lookup = new Map(vocab.map((c, i) => [c, i] as const));
  const ids = new Uint32Array(text.length);
  let n = 0;
  for (const ch of text) {
    const id = lookup.get(ch);
    if (id === undefined) {
      throw new TokenizeError(
        `character ${JSON.stringify(ch)} is not in the exported vocabulary`
      );
    }
    ids[n++] = id;
  }
  return ids.subarray(0, n); // code points, not UTF-16 units
}

export function detokenize(ids: Uint32Array, vocab: string[]): string {
  const parts: string[] = [];
  for (const id of ids) {
    const tok = vocab[id];
    if (tok === undefined) throw new TokenizeError(`token id ${id} outside vocabulary`);
    parts.push(tok);
  }
  return parts.join("");
}

export function idsToBytes(ids: Uint32Array): Uint8Array {
  const out = new Uint8Array(ids.length * 4);
  const view = new DataView(out.buffer);
  ids.forEach((id, i) => view.setUint32(i * 4, id, true));
  return out;
}

export function provenanceSidecar(source: string, licenseNote: string, tokenCount: number): string {
  return [
    `source: ${source}`,
    `license: ${licenseNote}`,
    `token_count: ${tokenCount}`,
    "format: u32 little-endian token ids",
    "",
  ].join("\n");
}
