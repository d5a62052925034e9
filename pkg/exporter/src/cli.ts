/**
 * Checkpoint export CLI.
 *
 * Usage:
 *   mumo-export model  --src <dir> --out <file.mumo> [--max-seq N]
 *   mumo-export corpus --src <dir> --text <file.txt> --out <file.bin> [--license NOTE]
 *
 * The source directory must hold source.safetensors, config.json and
 * vocab.json. `model` writes the MUMO weight file and prints a shape
 * manifest; `corpus` writes u32 LE token ids plus a provenance sidecar
 * next to the output file.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { convert, IncompatibleArchitectureError, ModelCard } from "./convert.js";
import { idsToBytes, provenanceSidecar, tokenize, TokenizeError } from "./corpus.js";
import { parseSafetensors, SafetensorsError } from "./safetensors.js";

interface Args {
  command?: string;
  src?: string;
  out?: string;
  text?: string;
  maxSeq?: number;
  license: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { license: "synthetic text, no external license" };
  args.command = argv[0];
  for (let i = 1; i < argv.length; i++) {
    switch (argv[i]) {
      case "--src":
        args.src = argv[++i];
        break;
      case "--out":
        args.out = argv[++i];
        break;
      case "--text":
        args.text = argv[++i];
        break;
      case "--max-seq":
        args.maxSeq = Number(argv[++i]);
        break;
      case "--license":
        args.license = argv[++i] ?? args.license;
        break;
      default:
        console.error(`unknown argument: ${argv[i]}`);
        return {} as Args;
    }
  }
  return args;
}

function loadSource(src: string): { card: ModelCard; vocab: string[]; raw: Uint8Array } {
  const card = JSON.parse(readFileSync(join(src, "config.json"), "utf-8")) as ModelCard;
  const vocab = JSON.parse(readFileSync(join(src, "vocab.json"), "utf-8")) as string[];
  const raw = new Uint8Array(readFileSync(join(src, "source.safetensors")));
  return { card, vocab, raw };
}

function cmdModel(args: Args): number {
  if (!args.src || !args.out) {
    console.error("model: --src and --out are required");
    return 2;
  }
  const { card, vocab, raw } = loadSource(args.src);
  const result = convert(card, parseSafetensors(raw), vocab, args.maxSeq);
  writeFileSync(args.out, result.bytes);
  for (const line of result.manifest) console.log(line);
  console.log(`wrote ${result.bytes.length} bytes to ${args.out}`);
  return 0;
}

function cmdCorpus(args: Args): number {
  if (!args.src || !args.out || !args.text) {
    console.error("corpus: --src, --text and --out are required");
    return 2;
  }
  const vocab = JSON.parse(readFileSync(join(args.src, "vocab.json"), "utf-8")) as string[];
  const text = readFileSync(args.text, "utf-8");
  const ids = tokenize(text, vocab); // throws before anything is written
  writeFileSync(args.out, idsToBytes(ids));
  writeFileSync(args.out + ".provenance.txt", provenanceSidecar(args.text, args.license, ids.length));
  console.log(`wrote ${ids.length} tokens to ${args.out}`);
  return 0;
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  try {
    if (args.command === "model") return cmdModel(args);
    if (args.command === "corpus") return cmdCorpus(args);
    console.error("usage: mumo-export <model|corpus> --src DIR --out PATH [--text FILE] [--max-seq N]");
    return 2;
  } catch (err) {
    if (
      err instanceof IncompatibleArchitectureError ||
      err instanceof SafetensorsError ||
      err instanceof TokenizeError
    ) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    if (err instanceof Error && (err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

const entry = process.argv[1];
if (entry !== undefined && fileURLToPath(import.meta.url) === entry) {
  process.exit(main(process.argv.slice(2)));
}
