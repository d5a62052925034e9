import { describe, expect, test } from "vitest";
import { convert, IncompatibleArchitectureError, ModelCard, sourceName, validateCard } from "../src/convert.js";
import { readModel, tensorLayout } from "../src/mumo.js";
import { TensorMap } from "../src/safetensors.js";

function makeCard(overrides: Partial<ModelCard> = {}): ModelCard {
  return {
    num_hidden_layers: 1,
    num_attention_heads: 2,
    hidden_size: 8,
    ffn_dim: 16,
    vocab_size: 5,
    max_position_embeddings: 6,
    activation_function: "relu",
    tie_word_embeddings: true,
    ...overrides,
  };
}

function makeVocab(n: number): string[] {
  return Array.from({ length: n }, (_, i) => String.fromCharCode(97 + i));
}

/** Synthetic checkpoint whose tensor values encode their layout position. */
function makeTensors(card: ModelCard, withHead = true): TensorMap {
  const cfg = validateCard(card);
  const tensors: TensorMap = new Map();
  tensorLayout(cfg).forEach(([name, shape], idx) => {
    const n = shape.reduce((a, b) => a * b, 1);
    const data = new Float32Array(n);
    for (let i = 0; i < n; i++) data[i] = idx + i / n;
    tensors.set(sourceName(name), { shape, data });
  });
  if (withHead) {
    const emb = tensors.get("model.embed_tokens.weight")!;
    tensors.set("lm_head.weight", { shape: [...emb.shape], data: emb.data.slice() });
  }
  return tensors;
}

describe("card validation", () => {
  test("relu card maps onto the target config", () => {
    const cfg = validateCard(makeCard());
    expect(cfg).toEqual({
      nLayers: 1, nHeads: 2, hidden: 8, headDim: 4,
      ffnDim: 16, vocab: 5, maxSeq: 6,
    });
  });

  test("gelu is rejected by name", () => {
    expect(() => validateCard(makeCard({ activation_function: "gelu" })))
      .toThrow(/gelu.*relu only/);
  });

  test("indivisible heads are rejected", () => {
    expect(() => validateCard(makeCard({ num_attention_heads: 3 })))
      .toThrow(/not divisible/);
  });

  test("non-integer field is rejected", () => {
    expect(() => validateCard(makeCard({ hidden_size: 8.5 })))
      .toThrow(/hidden_size/);
  });
});

describe("conversion", () => {
  test("header config matches the model card", () => {
    const card = makeCard();
    const { bytes } = convert(card, makeTensors(card), makeVocab(5));
    const model = readModel(bytes);
    expect(model.config.nLayers).toBe(card.num_hidden_layers);
    expect(model.config.nHeads).toBe(card.num_attention_heads);
    expect(model.config.hidden).toBe(card.hidden_size);
    expect(model.config.ffnDim).toBe(card.ffn_dim);
    expect(model.config.vocab).toBe(card.vocab_size);
    expect(model.config.maxSeq).toBe(card.max_position_embeddings);
    expect(model.vocab).toEqual(makeVocab(5));
  });

  test("tensor values land in layout order", () => {
    const card = makeCard();
    const { bytes } = convert(card, makeTensors(card), makeVocab(5));
    const model = readModel(bytes);
    const names = tensorLayout(model.config).map(([n]) => n);
    names.forEach((name, idx) => {
      expect(model.tensors.get(name)![0]).toBe(idx);
    });
  });

  test("re-export is byte-identical", () => {
    const card = makeCard();
    const a = convert(card, makeTensors(card), makeVocab(5)).bytes;
    const b = convert(card, makeTensors(card), makeVocab(5)).bytes;
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  test("manifest names every tensor and its source", () => {
    const card = makeCard();
    const { manifest } = convert(card, makeTensors(card), makeVocab(5));
    expect(manifest).toHaveLength(tensorLayout(validateCard(card)).length);
    expect(manifest[0]).toBe("tok_emb [5, 8] <- model.embed_tokens.weight");
  });

  test("untied head is rejected naming lm_head", () => {
    const card = makeCard();
    const tensors = makeTensors(card);
    const head = tensors.get("lm_head.weight")!;
    head.data[0] += 1.0;
    expect(() => convert(card, tensors, makeVocab(5))).toThrow(/lm_head.*untied/);
  });

  test("absent head is fine (implicitly tied)", () => {
    const card = makeCard();
    const { bytes } = convert(card, makeTensors(card, false), makeVocab(5));
    expect(readModel(bytes).config.vocab).toBe(5);
  });

  test("missing tensor is named", () => {
    const card = makeCard();
    const tensors = makeTensors(card);
    tensors.delete("model.layers.0.fc1.weight");
    expect(() => convert(card, tensors, makeVocab(5))).toThrow(/fc1/);
  });

  test("unexpected tensor is named", () => {
    const card = makeCard();
    const tensors = makeTensors(card);
    tensors.set("model.rotary.inv_freq", { shape: [2], data: new Float32Array(2) });
    expect(() => convert(card, tensors, makeVocab(5))).toThrow(/rotary/);
  });

  test("shape mismatch is named", () => {
    const card = makeCard();
    const tensors = makeTensors(card);
    const q = tensors.get("model.layers.0.self_attn.q_proj.weight")!;
    tensors.set("model.layers.0.self_attn.q_proj.weight", { shape: [4, 16], data: q.data });
    expect(() => convert(card, tensors, makeVocab(5))).toThrow(/q_proj/);
  });

  test("vocab length must match the card", () => {
    const card = makeCard();
    expect(() => convert(card, makeTensors(card), makeVocab(4))).toThrow(/vocab/);
  });

  test("non-finite weights are rejected", () => {
    const card = makeCard();
    const tensors = makeTensors(card);
    tensors.get("model.layers.0.self_attn.q_proj.weight")!.data[3] = NaN;
    expect(() => convert(card, tensors, makeVocab(5))).toThrow(/non-finite/);
  });
});

describe("max_seq override", () => {
  test("truncates the position table", () => {
    const card = makeCard();
    const { bytes, config } = convert(card, makeTensors(card), makeVocab(5), 4);
    expect(config.maxSeq).toBe(4);
    const model = readModel(bytes);
    expect(model.config.maxSeq).toBe(4);
    expect(model.tensors.get("pos_emb")!.length).toBe(4 * 8);
  });

  test("cannot exceed the checkpoint table", () => {
    const card = makeCard();
    expect(() => convert(card, makeTensors(card), makeVocab(5), 7))
      .toThrow(/cannot be invented/);
  });
});
