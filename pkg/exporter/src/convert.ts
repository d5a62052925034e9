/**
 * Checkpoint-to-MUMO conversion: validate the model card, map checkpoint
 * tensor names onto the MUMO layout, and enforce the architectural
 * constraints the inference side cannot represent. Every rejection names
 * the offending submodule or field.
 */

import { MumoConfig, tensorLayout, writeModel } from "./mumo.js";
import { TensorMap } from "./safetensors.js";

export interface ModelCard {
  num_hidden_layers: number;
  num_attention_heads: number;
  hidden_size: number;
  ffn_dim: number;
  vocab_size: number;
  max_position_embeddings: number;
  activation_function: string;
  tie_word_embeddings?: boolean;
  [extra: string]: unknown;
}

export class IncompatibleArchitectureError extends Error {}

const CARD_INTS = [
  "num_hidden_layers", "num_attention_heads", "hidden_size",
  "ffn_dim", "vocab_size", "max_position_embeddings",
] as const;

export function validateCard(card: ModelCard): MumoConfig {
  for (const key of CARD_INTS) {
    const v = card[key];
    if (typeof v !== "number" || !Number.isInteger(v) || v <= 0) {
      throw new IncompatibleArchitectureError(`config field ${key} must be a positive integer, got ${v}`);
    }
  }
  if (card.activation_function !== "relu") {
    throw new IncompatibleArchitectureError(
      `activation_function '${card.activation_function}' is not supported; the inference side implements relu only`
    );
  }
  if (card.hidden_size % card.num_attention_heads !== 0) {
    throw new IncompatibleArchitectureError(
      `hidden_size ${card.hidden_size} is not divisible by num_attention_heads ${card.num_attention_heads}`
    );
  }
  return {
    nLayers: card.num_hidden_layers,
    nHeads: card.num_attention_heads,
    hidden: card.hidden_size,
    headDim: card.hidden_size / card.num_attention_heads,
    ffnDim: card.ffn_dim,
    vocab: card.vocab_size,
    maxSeq: card.max_position_embeddings,
  };
}

/** MUMO tensor name -> checkpoint tensor name. */
export function sourceName(mumoName: string): string {
  if (mumoName === "tok_emb") return "model.embed_tokens.weight";
  if (mumoName === "pos_emb") return "model.embed_positions.weight";
  if (mumoName === "final_g") return "model.final_layer_norm.weight";
  if (mumoName === "final_b") return "model.final_layer_norm.bias";
  const m = mumoName.match(/^layers\.(\d+)\.(\w+)$/);
  if (m === null) throw new Error(`unmapped tensor name ${mumoName}`);
  const p = `model.layers.${m[1]}.`;
  switch (m[2]) {
    case "q": return p + "self_attn.q_proj.weight";
    case "k": return p + "self_attn.k_proj.weight";
    case "v": return p + "self_attn.v_proj.weight";
    case "o": return p + "self_attn.out_proj.weight";
    case "up": return p + "fc1.weight";
    case "down": return p + "fc2.weight";
    case "ln1_g": return p + "self_attn_layer_norm.weight";
    case "ln1_b": return p + "self_attn_layer_norm.bias";
    case "ln2_g": return p + "final_layer_norm.weight";
    case "ln2_b": return p + "final_layer_norm.bias";
    default: throw new Error(`unmapped tensor name ${mumoName}`);
  }
}

function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

export interface ConversionResult {
  config: MumoConfig;
  bytes: Uint8Array;
  manifest: string[];
}

/**
 * The head must be tied: MUMO has no separate head tensor, logits always
 * come from the token embedding. A stored lm_head is accepted only when it
 * is exactly the embedding matrix (a materialized tie).
 */
function checkHead(tensors: TensorMap): void {
  const head = tensors.get("lm_head.weight");
  if (head === undefined) return;
  const emb = tensors.get("model.embed_tokens.weight");
  if (emb === undefined) return; // missing embedding reported by the layout walk
  const tied =
    sameShape(head.shape, emb.shape) &&
    head.data.length === emb.data.length &&
    head.data.every((v, i) => Object.is(v, emb.data[i]));
  if (!tied) {
    throw new IncompatibleArchitectureError(
      "lm_head.weight differs from model.embed_tokens.weight: untied heads cannot be represented (logits are tied to the embedding)"
    );
  }
}

export function convert(
  card: ModelCard,
  tensors: TensorMap,
  vocab: string[],
  maxSeqOverride?: number
): ConversionResult {
  const cfg = validateCard(card);
  if (vocab.length !== cfg.vocab) {
    throw new IncompatibleArchitectureError(
      `vocab has ${vocab.length} entries, model card says ${cfg.vocab}`
    );
  }
  if (maxSeqOverride !== undefined) {
    if (maxSeqOverride <= 0 || maxSeqOverride > cfg.maxSeq) {
      throw new IncompatibleArchitectureError(
        `max_seq override ${maxSeqOverride} must be in [1, ${cfg.maxSeq}]: positions beyond the checkpoint cannot be invented`
      );
    }
    cfg.maxSeq = maxSeqOverride;
  }
  checkHead(tensors);

  const layout = tensorLayout(cfg);
  const out = new Map<string, Float32Array>();
  const manifest: string[] = [];
  const consumed = new Set<string>(["lm_head.weight"]);
  for (const [name, shape] of layout) {
    const src = sourceName(name);
    consumed.add(src);
    const entry = tensors.get(src);
    if (entry === undefined) {
      throw new IncompatibleArchitectureError(`checkpoint is missing ${src}`);
    }
    let { shape: srcShape, data } = entry;
    if (name === "pos_emb" && srcShape[0] !== undefined && srcShape[0] > cfg.maxSeq) {
      // max_seq override: keep the first rows, positions are row-major
      srcShape = [cfg.maxSeq, srcShape[1] as number];
      data = data.subarray(0, cfg.maxSeq * (srcShape[1] as number));
    }
    if (!sameShape(srcShape, shape)) {
      throw new IncompatibleArchitectureError(
        `${src}: shape [${srcShape}] does not match expected [${shape}]`
      );
    }
    out.set(name, data);
    manifest.push(`${name} [${shape.join(", ")}] <- ${src}`);
  }
  for (const name of tensors.keys()) {
    if (!consumed.has(name)) {
      throw new IncompatibleArchitectureError(`checkpoint tensor ${name} has no place in the target layout`);
    }
  }
  return { config: cfg, bytes: writeModel(cfg, out, vocab), manifest };
}
