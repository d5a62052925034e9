#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Outputs, relative to the repository root:

  tests/fixtures/corpus.txt        100 KB synthetic pseudo-English (training text)
  tests/fixtures/heldout.txt       1280 bytes of held-out text, 5 eval windows
  tests/fixtures/tiny_lm.mumo      byte-level decoder trained on corpus.txt
  tests/fixtures/golden_eval.json  held-out NLL/perplexity from a float64 oracle
  exporter/fixtures/source.safetensors   char-level checkpoint for the exporter
  exporter/fixtures/config.json          its model card
  exporter/fixtures/vocab.json           its character vocabulary
  exporter/fixtures/prompts.json         10 fixed prompts
  exporter/fixtures/golden_logits.json   source-framework logits per prompt

Run from the repository root: python3 scripts/make_fixtures.py

Requires torch (CPU is fine). Training takes a minute or two. Fixtures are
committed, so the suite never retrains; rerunning this script only matters
when the model format or the fixture recipe changes.
"""

import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

try:
    import torch
    import torch.nn as nn
    import torch.nn.functional as F
except ImportError:
    sys.exit("make_fixtures.py needs torch; the test suite itself does not")

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from mumoe import model as model_mod  # noqa: E402
from mumoe import pruner  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"
EXPORT_FIXTURES = ROOT / "exporter" / "fixtures"

CORPUS_BYTES = 100 * 1024
HELDOUT_BYTES = 1280  # exactly 5 windows of 256


# --- synthetic text ----------------------------------------------------------

WORD_STEMS = [
    "time", "light", "water", "stone", "river", "tower", "garden", "window",
    "moment", "shadow", "signal", "corner", "market", "winter", "summer",
    "letter", "silver", "forest", "harbor", "island", "meadow", "mirror",
    "thread", "bridge", "candle", "circle", "copper", "dancer", "evening",
    "falcon", "gentle", "hollow", "ladder", "lantern", "machine", "morning",
    "needle", "ocean", "orchard", "pattern", "quiet", "ribbon", "saddle",
    "temple", "thunder", "valley", "velvet", "voyage", "whisper", "yellow",
    "anchor", "basket", "breath", "canyon", "cellar", "ember", "feather",
    "glacier", "hammer", "ivory", "jungle", "kettle", "lumber", "marble",
    "nectar", "oyster", "pebble", "quarry", "rustle", "sapling", "tunnel",
    "umber", "vessel", "willow", "zephyr", "apple", "bottle", "cloud",
    "door", "earth", "flame", "grass", "house", "iron", "juice", "knot",
    "leaf", "moon", "night", "oak", "path", "rain", "sand", "tree",
    "under", "vine", "wind", "year", "amber", "black", "cold", "deep",
]
CONNECTORS = ["the", "a", "and", "of", "in", "on", "with", "under", "over",
              "near", "beyond", "through", "between", "before", "after"]
VERBS = ["moves", "turns", "rests", "falls", "rises", "waits", "holds",
         "drifts", "settles", "gathers", "carries", "follows", "crosses"]


def generate_text(rng: np.random.Generator, n_bytes: int) -> str:
    """Pseudo-English with Zipf-weighted nouns; pure ASCII, newline paragraphs."""
    ranks = np.arange(1, len(WORD_STEMS) + 1, dtype=np.float64)
    noun_p = (1.0 / ranks) / np.sum(1.0 / ranks)
    out: list[str] = []
    size = 0
    words_in_par = 0
    while size < n_bytes:
        n_words = int(rng.integers(4, 12))
        words = []
        for j in range(n_words):
            r = rng.random()
            if r < 0.35:
                words.append(CONNECTORS[int(rng.integers(0, len(CONNECTORS)))])
            elif r < 0.50:
                words.append(VERBS[int(rng.integers(0, len(VERBS)))])
            else:
                words.append(WORD_STEMS[int(rng.choice(len(WORD_STEMS), p=noun_p))])
        sentence = " ".join(words)
        sentence = sentence[0].upper() + sentence[1:]
        if rng.random() < 0.15 and n_words > 6:
            cut = int(rng.integers(2, n_words - 2))
            parts = sentence.split(" ")
            sentence = " ".join(parts[:cut]) + ", " + " ".join(parts[cut:])
        sentence += "."
        words_in_par += n_words
        if words_in_par > 60:
            sentence += "\n"
            words_in_par = 0
        else:
            sentence += " "
        out.append(sentence)
        size += len(sentence)
    return "".join(out)[:n_bytes]


# --- torch twin of the inference architecture --------------------------------


class TwinBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, head_dim: int, ffn: int):
        super().__init__()
        self.n_heads, self.head_dim = n_heads, head_dim
        self.ln1 = nn.LayerNorm(d, eps=model_mod.LN_EPS)
        self.ln2 = nn.LayerNorm(d, eps=model_mod.LN_EPS)
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.o = nn.Linear(d, d, bias=False)
        self.up = nn.Linear(d, ffn, bias=False)
        self.down = nn.Linear(ffn, d, bias=False)

    def forward(self, x, mask):
        b, t, d = x.shape
        h = self.ln1(x)
        # heads are contiguous feature blocks, matching the numpy side
        def split(z):
            return z.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q(h)), split(self.k(h)), split(self.v(h))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(mask[:t, :t], float("-inf"))
        ctx = (F.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o(ctx)
        h2 = self.ln2(x)
        return x + self.down(F.relu(self.up(h2)))


class Twin(nn.Module):
    """Pre-LN decoder with tied head; mirrors the mumoe forward pass."""

    def __init__(self, cfg: model_mod.ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab, cfg.hidden)
        self.pos = nn.Embedding(cfg.max_seq, cfg.hidden)
        self.blocks = nn.ModuleList(
            TwinBlock(cfg.hidden, cfg.n_heads, cfg.head_dim, cfg.ffn_dim)
            for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.hidden, eps=model_mod.LN_EPS)
        mask = torch.triu(torch.ones(cfg.max_seq, cfg.max_seq, dtype=torch.bool), 1)
        self.register_buffer("mask", mask)

    def forward(self, ids):
        t = ids.shape[1]
        x = self.tok(ids) + self.pos.weight[:t]
        for blk in self.blocks:
            x = blk(x, self.mask)
        x = self.ln_f(x)
        return x @ self.tok.weight.T


def twin_to_model(twin: Twin, vocab: list[str] | None = None) -> model_mod.Model:
    def arr(t):
        return t.detach().cpu().numpy().astype(np.float32)

    layers = tuple(
        model_mod.LayerWeights(
            q=arr(b.q.weight), k=arr(b.k.weight), v=arr(b.v.weight),
            o=arr(b.o.weight), up=arr(b.up.weight), down=arr(b.down.weight),
            ln1_g=arr(b.ln1.weight), ln1_b=arr(b.ln1.bias),
            ln2_g=arr(b.ln2.weight), ln2_b=arr(b.ln2.bias))
        for b in twin.blocks)
    weights = model_mod.ModelWeights(
        tok_emb=arr(twin.tok.weight), pos_emb=arr(twin.pos.weight),
        layers=layers, final_g=arr(twin.ln_f.weight), final_b=arr(twin.ln_f.bias))
    return model_mod.Model(twin.cfg, weights, vocab)


def train(twin: Twin, data: np.ndarray, steps: int, batch: int, seq: int,
          seed: int) -> float:
    rng = np.random.default_rng(seed)
    opt = torch.optim.AdamW(twin.parameters(), lr=3e-3, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    stream = torch.from_numpy(data.astype(np.int64))
    loss_val = float("nan")
    for step in range(steps):
        starts = rng.integers(0, data.size - seq - 1, size=batch)
        idx = torch.from_numpy(starts[:, None] + np.arange(seq + 1)[None, :])
        chunk = stream[idx]
        logits = twin(chunk[:, :-1])
        loss = F.cross_entropy(logits.reshape(-1, twin.cfg.vocab),
                               chunk[:, 1:].reshape(-1))
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        loss_val = float(loss.detach())
        if step % 100 == 0 or step == steps - 1:
            print(f"  step {step:4d}  loss {loss_val:.4f}")
    return loss_val


# --- independent float64 oracle ----------------------------------------------


def oracle_logits(m: model_mod.Model, ids: np.ndarray) -> np.ndarray:
    """Straight-line float64 forward, written independently of Model.forward."""
    cfg, w = m.config, m.weights
    t = ids.size
    x = w.tok_emb[ids].astype(np.float64) + w.pos_emb[:t].astype(np.float64)
    for lw in w.layers:
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        h = (x - mu) / np.sqrt(var + model_mod.LN_EPS) * lw.ln1_g + lw.ln1_b
        q = h @ lw.q.astype(np.float64).T
        k = h @ lw.k.astype(np.float64).T
        v = h @ lw.v.astype(np.float64).T
        ctx = np.empty_like(q)
        for hd in range(cfg.n_heads):
            cols = slice(hd * cfg.head_dim, (hd + 1) * cfg.head_dim)
            s = q[:, cols] @ k[:, cols].T / np.sqrt(cfg.head_dim)
            s = np.where(np.arange(t)[None, :] > np.arange(t)[:, None], -np.inf, s)
            s -= s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            ctx[:, cols] = p @ v[:, cols]
        x = x + ctx @ lw.o.astype(np.float64).T
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        h2 = (x - mu) / np.sqrt(var + model_mod.LN_EPS) * lw.ln2_g + lw.ln2_b
        x = x + np.maximum(h2 @ lw.up.astype(np.float64).T, 0.0) @ lw.down.astype(np.float64).T
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    x = (x - mu) / np.sqrt(var + model_mod.LN_EPS) * w.final_g + w.final_b
    return x @ w.tok_emb.astype(np.float64).T


def oracle_nll(m: model_mod.Model, stream: np.ndarray, max_seq: int) -> tuple[float, int]:
    """Non-overlapping windows; each window scores its internal next-token targets."""
    total, count = 0.0, 0
    for start in range(0, stream.size - 1, max_seq):
        window = stream[start:start + max_seq]
        if window.size < 2:
            break
        logits = oracle_logits(m, window)
        for r in range(window.size - 1):
            row = logits[r]
            mx = row.max()
            lse = mx + np.log(np.exp(row - mx).sum())
            total += lse - row[window[r + 1]]
            count += 1
    return float(total), count


# --- safetensors writer (header is JSON, tensors raw little-endian) ----------


def write_safetensors(path: Path, tensors: dict[str, np.ndarray]):
    header: dict[str, object] = {}
    blobs = []
    off = 0
    for name, t in tensors.items():
        raw = np.ascontiguousarray(t, dtype="<f4").tobytes()
        header[name] = {"dtype": "F32", "shape": list(t.shape),
                        "data_offsets": [off, off + len(raw)]}
        blobs.append(raw)
        off += len(raw)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for raw in blobs:
            f.write(raw)


# --- fixture A: trained byte-level LM ----------------------------------------


def build_lm_fixture():
    print("== byte-level LM fixture ==")
    FIXTURES.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240811)
    text = generate_text(rng, CORPUS_BYTES + HELDOUT_BYTES)
    corpus, heldout = text[:CORPUS_BYTES], text[CORPUS_BYTES:]
    assert len(heldout) == HELDOUT_BYTES and heldout.isascii()
    (FIXTURES / "corpus.txt").write_text(corpus, encoding="ascii")
    (FIXTURES / "heldout.txt").write_text(heldout, encoding="ascii")

    cfg = model_mod.ModelConfig(n_layers=2, n_heads=4, hidden=64, head_dim=16,
                                ffn_dim=256, vocab=256, max_seq=256)
    torch.manual_seed(0)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    twin = Twin(cfg)
    data = np.frombuffer(corpus.encode("ascii"), dtype=np.uint8)
    final_loss = train(twin, data, steps=800, batch=16, seq=128, seed=1)
    print(f"  final training loss {final_loss:.4f}")

    m = twin_to_model(twin)
    model_mod.save_model(FIXTURES / "tiny_lm.mumo", m)
    m = model_mod.load_model(FIXTURES / "tiny_lm.mumo")  # golden from the file

    stream = m.encode(heldout)
    total, count = oracle_nll(m, stream, cfg.max_seq)
    golden_ppl = math.exp(total / count)
    pkg_ppl = model_mod.perplexity(m.forward, stream, cfg.max_seq)
    rel = abs(pkg_ppl - golden_ppl) / golden_ppl
    print(f"  oracle ppl {golden_ppl:.6f}  package ppl {pkg_ppl:.6f}  rel {rel:.2e}")
    assert rel < 1e-4, "package perplexity drifted from the float64 oracle"

    (FIXTURES / "golden_eval.json").write_text(json.dumps({
        "text_file": "heldout.txt",
        "max_seq": cfg.max_seq,
        "nll_total": total,
        "nll_count": count,
        "perplexity": golden_ppl,
    }, indent=2) + "\n", encoding="utf-8")

    # sanity-check the pruning degradation profile before committing
    dense_ppls, by_rho = window_ppls(m, stream, cfg.max_seq, None)
    print(f"  dense window ppls {fmt(dense_ppls)}")
    for rho in (0.9, 0.7, 0.5):
        ppls, _ = window_ppls(m, stream, cfg.max_seq, rho)
        by_rho[rho] = ppls
        print(f"  rho={rho} window ppls {fmt(ppls)} median {np.median(ppls):.4f}")
    ratio = float(np.exp(np.mean(np.log(by_rho[0.9]))) /
                  np.exp(np.mean(np.log(dense_ppls))))
    med = [float(np.median(by_rho[r])) for r in (0.9, 0.7, 0.5)]
    print(f"  ppl(0.9)/ppl(dense) ~ {ratio:.4f}; medians {med}")
    if not (med[0] <= med[1] <= med[2]):
        print("  WARNING: medians not monotone; consider more training steps")


def window_ppls(m, stream, max_seq, rho):
    ppls = []
    for start in range(0, stream.size, max_seq):
        window = stream[start:start + max_seq]
        if rho is None:
            fwd = m.forward
        else:
            cfg = pruner.PruneConfig(rho=rho, method="wanda", mode="online")
            fwd = lambda w: pruner.online_logits(m, w, cfg)
        ppls.append(model_mod.perplexity(fwd, window, max_seq))
    return ppls, {}


def fmt(vals):
    return "[" + ", ".join(f"{v:.3f}" for v in vals) + "]"


# --- fixture B: char-level checkpoint for the exporter ------------------------

VOCAB_CHARS = list(" abcdefghijklmnopqrstuvwxyz.,\n'-ABCDEFGHIJKLMNOP")


def build_export_fixture():
    print("== exporter source checkpoint ==")
    EXPORT_FIXTURES.mkdir(parents=True, exist_ok=True)
    assert len(VOCAB_CHARS) == 48 and len(set(VOCAB_CHARS)) == 48

    cfg = model_mod.ModelConfig(n_layers=2, n_heads=2, hidden=32, head_dim=16,
                                ffn_dim=64, vocab=48, max_seq=64)
    torch.manual_seed(7)
    twin = Twin(cfg)

    # brief training so logits carry structure instead of init noise
    rng = np.random.default_rng(5)
    text = generate_text(rng, 20_000).lower()
    lookup = {c: i for i, c in enumerate(VOCAB_CHARS)}
    data = np.array([lookup[c] for c in text if c in lookup], dtype=np.int64)
    train(twin, data, steps=150, batch=16, seq=48, seed=2)

    sd = twin.state_dict()
    tensors: dict[str, np.ndarray] = {
        "model.embed_tokens.weight": sd["tok.weight"].numpy(),
        "model.embed_positions.weight": sd["pos.weight"].numpy(),
        "model.final_layer_norm.weight": sd["ln_f.weight"].numpy(),
        "model.final_layer_norm.bias": sd["ln_f.bias"].numpy(),
    }
    for i in range(cfg.n_layers):
        src = f"blocks.{i}."
        dst = f"model.layers.{i}."
        tensors[dst + "self_attn.q_proj.weight"] = sd[src + "q.weight"].numpy()
        tensors[dst + "self_attn.k_proj.weight"] = sd[src + "k.weight"].numpy()
        tensors[dst + "self_attn.v_proj.weight"] = sd[src + "v.weight"].numpy()
        tensors[dst + "self_attn.out_proj.weight"] = sd[src + "o.weight"].numpy()
        tensors[dst + "self_attn_layer_norm.weight"] = sd[src + "ln1.weight"].numpy()
        tensors[dst + "self_attn_layer_norm.bias"] = sd[src + "ln1.bias"].numpy()
        tensors[dst + "fc1.weight"] = sd[src + "up.weight"].numpy()
        tensors[dst + "fc2.weight"] = sd[src + "down.weight"].numpy()
        tensors[dst + "final_layer_norm.weight"] = sd[src + "ln2.weight"].numpy()
        tensors[dst + "final_layer_norm.bias"] = sd[src + "ln2.bias"].numpy()
    # tied head stored explicitly, equal to the embedding
    tensors["lm_head.weight"] = tensors["model.embed_tokens.weight"]

    write_safetensors(EXPORT_FIXTURES / "source.safetensors", tensors)
    (EXPORT_FIXTURES / "config.json").write_text(json.dumps({
        "model_type": "tiny-opt",
        "num_hidden_layers": cfg.n_layers,
        "num_attention_heads": cfg.n_heads,
        "hidden_size": cfg.hidden,
        "ffn_dim": cfg.ffn_dim,
        "vocab_size": cfg.vocab,
        "max_position_embeddings": cfg.max_seq,
        "activation_function": "relu",
        "tie_word_embeddings": True,
        "layer_norm_eps": model_mod.LN_EPS,
    }, indent=2) + "\n", encoding="utf-8")
    (EXPORT_FIXTURES / "vocab.json").write_text(
        json.dumps(VOCAB_CHARS, indent=0) + "\n", encoding="utf-8")

    prompts = [
        "the river turns",
        "light under the tower.",
        "a quiet morning",
        "stone and water",
        "whisper, then thunder",
        "the orchard rests\nnear the bridge",
        "winter holds the garden",
        "she crosses the meadow",
        "lantern light falls on the harbor",
        "deep in the forest the shadow waits",
    ]
    (EXPORT_FIXTURES / "prompts.json").write_text(
        json.dumps(prompts, indent=2) + "\n", encoding="utf-8")

    twin.eval()
    golden = []
    with torch.no_grad():
        for p in prompts:
            ids = torch.tensor([[lookup[c] for c in p]], dtype=torch.long)
            logits = twin(ids)[0].numpy().astype(np.float64)
            golden.append({"prompt": p, "logits": [list(map(float, row))
                                                   for row in logits]})
    (EXPORT_FIXTURES / "golden_logits.json").write_text(
        json.dumps(golden) + "\n", encoding="utf-8")
    print(f"  wrote {len(tensors)} tensors, {len(prompts)} prompts")


if __name__ == "__main__":
    build_lm_fixture()
    build_export_fixture()
    print("done")
