/**
 * MUMO binary weight format, written byte-for-byte the way the inference
 * side reads it:
 *
 *   "MUMO" | u32 version=1 | 7 x u32 config | tensors f32 LE | vocab section
 *
 * Config order: n_layers, n_heads, hidden, head_dim, ffn_dim, vocab, max_seq.
 * Tensor order: tok_emb, pos_emb, then per layer q k v o up down
 * ln1_g ln1_b ln2_g ln2_b, then final_g final_b. The optional vocab section
 * is u32 count, then u32 byte length + UTF-8 payload per token.
 */

export const MAGIC = "MUMO";
export const FORMAT_VERSION = 1;

export interface MumoConfig {
  nLayers: number;
  nHeads: number;
  hidden: number;
  headDim: number;
  ffnDim: number;
  vocab: number;
  maxSeq: number;
}

export class MumoFormatError extends Error {}

export function tensorLayout(cfg: MumoConfig): Array<[string, number[]]> {
  const d = cfg.hidden;
  const di = cfg.ffnDim;
  const out: Array<[string, number[]]> = [
    ["tok_emb", [cfg.vocab, d]],
    ["pos_emb", [cfg.maxSeq, d]],
  ];
  for (let i = 0; i < cfg.nLayers; i++) {
    const p = `layers.${i}.`;
    out.push(
      [p + "q", [d, d]], [p + "k", [d, d]], [p + "v", [d, d]], [p + "o", [d, d]],
      [p + "up", [di, d]], [p + "down", [d, di]],
      [p + "ln1_g", [d]], [p + "ln1_b", [d]],
      [p + "ln2_g", [d]], [p + "ln2_b", [d]],
    );
  }
  out.push(["final_g", [d]], ["final_b", [d]]);
  return out;
}

function shapeSize(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function writeModel(
  cfg: MumoConfig,
  tensors: Map<string, Float32Array>,
  vocab?: string[]
): Uint8Array {
  const layout = tensorLayout(cfg);
  const encoder = new TextEncoder();
  let vocabBytes = 0;
  const vocabChunks: Uint8Array[] = [];
  if (vocab !== undefined) {
    if (vocab.length !== cfg.vocab) {
      throw new MumoFormatError(`vocab has ${vocab.length} entries, config says ${cfg.vocab}`);
    }
    for (const tok of vocab) vocabChunks.push(encoder.encode(tok));
    vocabBytes = 4 + vocabChunks.reduce((a, c) => a + 4 + c.length, 0);
  }
  const weightBytes = layout.reduce((a, [, shape]) => a + 4 * shapeSize(shape), 0);
  const out = new Uint8Array(4 + 4 + 7 * 4 + weightBytes + vocabBytes);
  const view = new DataView(out.buffer);

  encoder.encodeInto(MAGIC, out);
  view.setUint32(4, FORMAT_VERSION, true);
  const fields = [cfg.nLayers, cfg.nHeads, cfg.hidden, cfg.headDim, cfg.ffnDim, cfg.vocab, cfg.maxSeq];
  fields.forEach((v, i) => view.setUint32(8 + 4 * i, v, true));

  let off = 8 + 28;
  for (const [name, shape] of layout) {
    const t = tensors.get(name);
    if (t === undefined) throw new MumoFormatError(`missing tensor ${name}`);
    if (t.length !== shapeSize(shape)) {
      throw new MumoFormatError(`tensor ${name}: ${t.length} values, shape [${shape}] needs ${shapeSize(shape)}`);
    }
    for (let i = 0; i < t.length; i++) {
      const v = t[i] as number;
      if (!Number.isFinite(v)) throw new MumoFormatError(`tensor ${name} contains non-finite values`);
      view.setFloat32(off + 4 * i, v, true);
    }
    off += 4 * t.length;
  }
  if (vocab !== undefined) {
    view.setUint32(off, vocab.length, true);
    off += 4;
    for (const chunk of vocabChunks) {
      view.setUint32(off, chunk.length, true);
      out.set(chunk, off + 4);
      off += 4 + chunk.length;
    }
  }
  return out;
}

export interface MumoModel {
  config: MumoConfig;
  tensors: Map<string, Float32Array>;
  vocab?: string[];
}

/** Reader used by the round-trip tests; mirrors the inference-side loader. */
export function readModel(buf: Uint8Array): MumoModel {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.length < 40) throw new MumoFormatError("file shorter than the header");
  if (new TextDecoder().decode(buf.subarray(0, 4)) !== MAGIC) {
    throw new MumoFormatError("bad magic");
  }
  const version = view.getUint32(4, true);
  if (version !== FORMAT_VERSION) throw new MumoFormatError(`unsupported version ${version}`);
  const f = (i: number) => view.getUint32(8 + 4 * i, true);
  const cfg: MumoConfig = {
    nLayers: f(0), nHeads: f(1), hidden: f(2), headDim: f(3),
    ffnDim: f(4), vocab: f(5), maxSeq: f(6),
  };
  let off = 36;
  const tensors = new Map<string, Float32Array>();
  for (const [name, shape] of tensorLayout(cfg)) {
    const n = shapeSize(shape);
    if (off + 4 * n > buf.length) throw new MumoFormatError(`truncated at tensor ${name}`);
    const t = new Float32Array(n);
    for (let i = 0; i < n; i++) t[i] = view.getFloat32(off + 4 * i, true);
    tensors.set(name, t);
    off += 4 * n;
  }
  let vocab: string[] | undefined;
  if (off < buf.length) {
    const count = view.getUint32(off, true);
    off += 4;
    vocab = [];
    const decoder = new TextDecoder();
    for (let i = 0; i < count; i++) {
      const n = view.getUint32(off, true);
      vocab.push(decoder.decode(buf.subarray(off + 4, off + 4 + n)));
      off += 4 + n;
    }
    if (off !== buf.length) throw new MumoFormatError("trailing bytes after vocab section");
  }
  return { config: cfg, tensors, vocab };
}
