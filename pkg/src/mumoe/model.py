"""Minimal decoder-only transformer with pluggable linear application.

Pre-layernorm blocks, ReLU MLP at 4x width, learned positional embeddings,
tied output head. Every linear goes through an `apply_linear(name, w, x)`
hook with x laid out features-by-tokens (d x T), which is where the pruning
machinery intercepts. Float32 storage, float64 accumulation inside kernels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import ShapeError

MAGIC = b"MUMO"
FORMAT_VERSION = 1
LN_EPS = 1e-5

LINEAR_KINDS = ("q", "k", "v", "o", "up", "down")


class BadMagicError(ValueError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(ValueError):
    """Format version is newer than this reader understands."""


class TruncatedFileError(ValueError):
    """File ended mid-tensor; message names the tensor reached."""


class NonFiniteWeightError(ValueError):
    """A stored tensor contains NaN or infinity."""


class TokenError(ValueError):
    """Token id out of range, sequence too long, or unencodable text."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    hidden: int
    head_dim: int
    ffn_dim: int
    vocab: int
    max_seq: int

    def __post_init__(self):
        for name, v in vars(self).items():
            if not isinstance(v, int) or v <= 0:
                raise ValueError(f"config field {name} must be a positive integer, got {v}")
        if self.hidden != self.n_heads * self.head_dim:
            raise ValueError(
                f"hidden ({self.hidden}) != n_heads*head_dim "
                f"({self.n_heads}*{self.head_dim})"
            )
        if self.ffn_dim < self.hidden:
            raise ValueError(f"ffn_dim ({self.ffn_dim}) < hidden ({self.hidden})")

    def pack(self) -> tuple[int, ...]:
        return (
            self.n_layers, self.n_heads, self.hidden, self.head_dim,
            self.ffn_dim, self.vocab, self.max_seq,
        )


@dataclass(frozen=True)
class LayerWeights:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    up: np.ndarray
    down: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    layers: tuple[LayerWeights, ...]
    final_g: np.ndarray
    final_b: np.ndarray


def tensor_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Serialization order and shapes; the file holds exactly these, in order."""
    d, di = cfg.hidden, cfg.ffn_dim
    out: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (cfg.vocab, d)),
        ("pos_emb", (cfg.max_seq, d)),
    ]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        out += [
            (p + "q", (d, d)), (p + "k", (d, d)), (p + "v", (d, d)), (p + "o", (d, d)),
            (p + "up", (di, d)), (p + "down", (d, di)),
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
        ]
    out += [("final_g", (d,)), ("final_b", (d,))]
    return out


def _flatten_weights(w: ModelWeights) -> list[np.ndarray]:
    out = [w.tok_emb, w.pos_emb]
    for lw in w.layers:
        out += [lw.q, lw.k, lw.v, lw.o, lw.up, lw.down,
                lw.ln1_g, lw.ln1_b, lw.ln2_g, lw.ln2_b]
    out += [w.final_g, w.final_b]
    return out


def _check_weights(cfg: ModelConfig, w: ModelWeights):
    tensors = _flatten_weights(w)
    layout = tensor_layout(cfg)
    if len(w.layers) != cfg.n_layers:
        raise ShapeError(f"model has {len(w.layers)} layers, config says {cfg.n_layers}")
    for (name, shape), t in zip(layout, tensors):
        if t.shape != shape:
            raise ShapeError(f"tensor {name}: expected shape {shape}, got {t.shape}")
        if t.dtype != np.float32:
            raise ShapeError(f"tensor {name}: expected float32, got {t.dtype}")
        if not np.all(np.isfinite(t)):
            raise NonFiniteWeightError(f"tensor {name} contains non-finite values")


class Model:
    """Immutable loaded model; safe to share across prompts and threads."""

    def __init__(self, config: ModelConfig, weights: ModelWeights,
                 vocab: list[str] | None = None):
        _check_weights(config, weights)
        if vocab is not None and len(vocab) != config.vocab:
            raise ValueError(f"vocab has {len(vocab)} tokens, config says {config.vocab}")
        self.config = config
        self.weights = weights
        self.vocab = vocab
        self._token_index = (
            {tok: i for i, tok in enumerate(vocab)} if vocab is not None else None
        )

    def linear_names(self) -> list[str]:
        return [f"layers.{i}.{kind}"
                for i in range(self.config.n_layers) for kind in LINEAR_KINDS]

    def get_linear(self, name: str) -> np.ndarray:
        layer, kind = name.rsplit(".", 1)
        idx = int(layer.split(".")[1])
        return getattr(self.weights.layers[idx], kind)

    # --- tokenization ------------------------------------------------------

    def encode(self, text: str) -> np.ndarray:
        """Byte-level ids when no vocab is attached, else per-character lookup."""
        if self._token_index is None:
            ids = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)
            if self.config.vocab < 256 and ids.size and ids.max() >= self.config.vocab:
                raise TokenError("byte value outside model vocabulary")
            return ids
        try:
            return np.array([self._token_index[ch] for ch in text], dtype=np.int64)
        except KeyError as e:
            raise TokenError(f"character {e.args[0]!r} not in model vocabulary") from None

    def decode(self, ids) -> str:
        if self.vocab is None:
            return bytes(int(i) for i in ids).decode("utf-8", errors="replace")
        return "".join(self.vocab[int(i)] for i in ids)

    # --- inference ---------------------------------------------------------

    def _check_tokens(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise TokenError("token sequence must be 1-D and non-empty")
        if ids.size > self.config.max_seq:
            raise TokenError(
                f"sequence length {ids.size} exceeds max_seq {self.config.max_seq}"
            )
        if ids.min() < 0 or ids.max() >= self.config.vocab:
            raise TokenError("token id outside vocabulary")
        return ids

    def forward(self, tokens, apply_linear=None) -> np.ndarray:
        """Logits (T x V) for a token sequence, causal attention throughout.

        apply_linear(name, w, x) replaces dense w @ x at every block linear;
        embeddings and the tied head always run dense.
        """
        ids = self._check_tokens(tokens)
        ap = apply_linear if apply_linear is not None else _dense_apply
        cfg = self.config
        w = self.weights
        t = ids.size
        x = w.tok_emb[ids] + w.pos_emb[:t]
        for i, lw in enumerate(w.layers):
            pre = _layer_norm(x, lw.ln1_g, lw.ln1_b)
            xt = np.ascontiguousarray(pre.T)
            name = f"layers.{i}."
            q = ap(name + "q", lw.q, xt)
            k = ap(name + "k", lw.k, xt)
            v = ap(name + "v", lw.v, xt)
            ctx = _causal_attention(q, k, v, cfg.n_heads, cfg.head_dim)
            attn_out = ap(name + "o", lw.o, ctx)
            x = x + attn_out.T
            pre2 = _layer_norm(x, lw.ln2_g, lw.ln2_b)
            up = ap(name + "up", lw.up, np.ascontiguousarray(pre2.T))
            up = np.maximum(up, np.float32(0.0))
            down = ap(name + "down", lw.down, up)
            x = x + down.T
        x = _layer_norm(x, w.final_g, w.final_b)
        return linalg.matmul(x, w.tok_emb.T)


def _dense_apply(name: str, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return linalg.matmul(w, x)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    mu = np.mean(x64, axis=1, keepdims=True)
    var = np.mean((x64 - mu) ** 2, axis=1, keepdims=True)
    y = (x64 - mu) / np.sqrt(var + LN_EPS)
    return (y * g.astype(np.float64) + b.astype(np.float64)).astype(np.float32)


def _causal_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      n_heads: int, head_dim: int) -> np.ndarray:
    # q, k, v arrive features-by-tokens (d x T); heads are contiguous
    # feature blocks of size head_dim.
    t = q.shape[1]
    scale = 1.0 / np.sqrt(np.float64(head_dim))
    ctx = np.empty_like(q)
    for h in range(n_heads):
        rows = slice(h * head_dim, (h + 1) * head_dim)
        qh = np.ascontiguousarray(q[rows].T)  # T x d_h
        scores = linalg.matmul(qh, k[rows]).astype(np.float64) * scale
        scores[np.triu_indices(t, k=1)] = -np.inf
        scores -= np.max(scores, axis=1, keepdims=True)
        e = np.exp(scores)
        probs = (e / np.sum(e, axis=1, keepdims=True)).astype(np.float32)
        vh = np.ascontiguousarray(v[rows].T)  # T x d_h
        ctx[rows] = linalg.matmul(probs, vh).T
    return ctx


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64; used by sampling and tests."""
    l64 = logits.astype(np.float64)
    l64 -= np.max(l64, axis=1, keepdims=True)
    e = np.exp(l64)
    return e / np.sum(e, axis=1, keepdims=True)


def greedy_generate(forward, prompt_tokens, n_steps: int, max_seq: int) -> np.ndarray:
    """Append argmax tokens one at a time, recomputing the full forward."""
    ids = list(np.asarray(prompt_tokens, dtype=np.int64))
    for _ in range(n_steps):
        window = ids[-max_seq:]
        logits = forward(np.asarray(window, dtype=np.int64))
        ids.append(int(np.argmax(logits[-1])))
    return np.asarray(ids, dtype=np.int64)


def window_nll(forward, stream: np.ndarray, max_seq: int,
               stride: int | None = None) -> tuple[float, int]:
    """Total next-token negative log-likelihood over sliding windows.

    Windows are max_seq tokens with the given stride (default max_seq, i.e.
    non-overlapping). Each target is scored at most once, by the first window
    covering it; with non-overlapping windows the first token of each later
    window has no context and is skipped.
    """
    stream = np.asarray(stream, dtype=np.int64)
    if stream.size < 2:
        raise ValueError("need at least two tokens to score next-token predictions")
    stride = max_seq if stride is None else stride
    if not 1 <= stride <= max_seq:
        raise ValueError(f"stride must be in [1, max_seq], got {stride}")
    total = 0.0
    count = 0
    scored_upto = 0  # absolute index of the last scored target
    start = 0
    while True:
        end = min(start + max_seq, stream.size)
        window = stream[start:end]
        logits = forward(window).astype(np.float64)
        # logits row r predicts stream[start + r + 1]
        first_target = max(start + 1, scored_upto + 1)
        rows = np.arange(first_target - start - 1, window.size - 1)
        if rows.size:
            sel = logits[rows]
            m = np.max(sel, axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.sum(np.exp(sel - m), axis=1))
            targets = window[rows + 1]
            total += float(np.sum(lse - sel[np.arange(rows.size), targets]))
            count += rows.size
        scored_upto = end - 1
        if end == stream.size:
            break
        start += stride
    return total, count


def perplexity(forward, stream, max_seq: int, stride: int | None = None) -> float:
    """exp(mean next-token NLL) over sliding windows."""
    total, count = window_nll(forward, stream, max_seq, stride)
    return float(np.exp(total / count))


# --- binary format -----------------------------------------------------------

_HEADER = struct.Struct("<4sI7I")


def save_bytes(model: Model) -> bytes:
    cfg = model.config
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, *cfg.pack())]
    for t in _flatten_weights(model.weights):
        parts.append(t.astype("<f4").tobytes())
    if model.vocab is not None:
        parts.append(struct.pack("<I", len(model.vocab)))
        for tok in model.vocab:
            raw = tok.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(parts)


def save_model(path, model: Model):
    with open(path, "wb") as f:
        f.write(save_bytes(model))


def load_bytes(buf: bytes) -> Model:
    if len(buf) < _HEADER.size:
        if buf[:4] != MAGIC:
            raise BadMagicError("not a model file (bad magic)")
        raise TruncatedFileError("truncated while reading header")
    magic, version, *fields = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} not supported")
    cfg = ModelConfig(*fields)
    off = _HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_layout(cfg):
        n = int(np.prod(shape))
        if off + 4 * n > len(buf):
            raise TruncatedFileError(f"truncated while reading {name}")
        t = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape)
        tensors[name] = np.ascontiguousarray(t, dtype=np.float32)
        off += 4 * n
    vocab = None
    if off < len(buf):
        if off + 4 > len(buf):
            raise TruncatedFileError("truncated while reading vocab count")
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        vocab = []
        for i in range(count):
            if off + 4 > len(buf):
                raise TruncatedFileError(f"truncated while reading vocab entry {i}")
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            if off + n > len(buf):
                raise TruncatedFileError(f"truncated while reading vocab entry {i}")
            vocab.append(buf[off : off + n].decode("utf-8"))
            off += n
        if off != len(buf):
            raise ValueError(f"{len(buf) - off} trailing bytes after vocab section")
    layers = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        layers.append(LayerWeights(**{k: tensors[p + k] for k in (
            "q", "k", "v", "o", "up", "down",
            "ln1_g", "ln1_b", "ln2_g", "ln2_b")}))
    weights = ModelWeights(
        tok_emb=tensors["tok_emb"], pos_emb=tensors["pos_emb"],
        layers=tuple(layers), final_g=tensors["final_g"], final_b=tensors["final_b"],
    )
    return Model(cfg, weights, vocab)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        return load_bytes(f.read())


def random_model(cfg: ModelConfig, seed: int = 0, scale: float = 0.05,
                 vocab: list[str] | None = None) -> Model:
    """Random-weight model for tests and demos; layernorms start at identity."""
    rng = np.random.default_rng(seed)

    def mat(*shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    d, di = cfg.hidden, cfg.ffn_dim
    layers = tuple(
        LayerWeights(
            q=mat(d, d), k=mat(d, d), v=mat(d, d), o=mat(d, d),
            up=mat(di, d), down=mat(d, di),
            ln1_g=np.ones(d, dtype=np.float32), ln1_b=np.zeros(d, dtype=np.float32),
            ln2_g=np.ones(d, dtype=np.float32), ln2_b=np.zeros(d, dtype=np.float32),
        )
        for _ in range(cfg.n_layers)
    )
    weights = ModelWeights(
        tok_emb=mat(cfg.vocab, d), pos_emb=mat(cfg.max_seq, d),
        layers=layers,
        final_g=np.ones(d, dtype=np.float32), final_b=np.zeros(d, dtype=np.float32),
    )
    return Model(cfg, weights, vocab)
