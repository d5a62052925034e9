"""Analytical cost accounting: FLOPs and MACs for dense vs per-prompt-pruned inference.

Counting conventions: one multiply-accumulate = 1 MAC = 2 FLOPs; one
comparison = 1 FLOP, 0 MACs. All counts are exact Python integers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .model import ModelConfig
from .selection import active_count

MODES = ("dense", "mu_moe")

# breakdown keys; prune_* together form the pruning overhead
COMPONENTS = ("dense_linear", "sparse_linear", "prune_norm", "prune_score",
              "prune_select", "prune_compare", "attention", "other")


def complexity_ratio(rho: float, tokens: int, d_prime: int) -> float:
    """Per-layer cost of online pruning + sparse apply relative to dense.

    (3dd' + dT + rho*dd'T) / (dd'T) simplifies to rho + 3/T + 1/d'.
    """
    if tokens < 1 or d_prime < 1:
        raise ValueError("tokens and d_prime must be >= 1")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    return rho + 3.0 / tokens + 1.0 / d_prime


@dataclass(frozen=True)
class FlopReport:
    mode: str
    rho: float
    tokens: int
    macs: dict[str, int]
    flops: dict[str, int]
    per_layer_macs: tuple[int, ...]
    per_layer_flops: tuple[int, ...]

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def prune_overhead_macs(self) -> int:
        return sum(self.macs[k] for k in COMPONENTS if k.startswith("prune_"))

    @property
    def linear_macs(self) -> int:
        """Everything attributable to the linear layers, overhead included."""
        return (self.macs["dense_linear"] + self.macs["sparse_linear"]
                + self.prune_overhead_macs)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "rho": self.rho, "tokens": self.tokens,
            "total_macs": self.total_macs, "total_flops": self.total_flops,
            "macs": dict(self.macs), "flops": dict(self.flops),
            "per_layer_macs": list(self.per_layer_macs),
            "per_layer_flops": list(self.per_layer_flops),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> list[dict]:
        return [{"component": c, "macs": self.macs[c], "flops": self.flops[c]}
                for c in COMPONENTS]


def _linear_dims(cfg: ModelConfig) -> list[tuple[int, int]]:
    d, di = cfg.hidden, cfg.ffn_dim
    return [(d, d)] * 4 + [(d, di), (di, d)]  # (d_in, d_out) for q,k,v,o,up,down


def count_costs(cfg: ModelConfig, rho: float, tokens: int, mode: str) -> FlopReport:
    """Cost of one forward pass over `tokens` positions.

    Counted work: block linears (dense or sparse-with-overhead), attention
    score and context products (identical in both modes), and the output
    head. Elementwise work (layernorm, residuals, softmax division) is not
    counted; it is identical in both modes and vanishes at scale.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if tokens < 1 or tokens > cfg.max_seq:
        raise ValueError(f"tokens must be in [1, max_seq], got {tokens}")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    t = int(tokens)
    macs = dict.fromkeys(COMPONENTS, 0)
    flops = dict.fromkeys(COMPONENTS, 0)
    per_layer_macs = []
    per_layer_flops = []
    for _ in range(cfg.n_layers):
        lm = lf = 0
        for d_in, d_out in _linear_dims(cfg):
            if mode == "dense":
                m = d_in * d_out * t
                macs["dense_linear"] += m
                flops["dense_linear"] += 2 * m
                lm += m
                lf += 2 * m
            else:
                k = active_count(rho, d_in)
                m = k * d_out * t
                macs["sparse_linear"] += m
                flops["sparse_linear"] += 2 * m
                norm = d_in * t          # squared-accumulate per input feature
                score = d_in * d_out     # |w| * norm products
                select = d_in * d_out    # comparisons inside top-k search
                compare = d_in * d_out   # threshold comparisons building the mask
                macs["prune_norm"] += norm
                flops["prune_norm"] += 2 * norm
                macs["prune_score"] += score
                flops["prune_score"] += 2 * score
                flops["prune_select"] += select
                flops["prune_compare"] += compare
                lm += m + norm + score
                lf += 2 * (m + norm + score) + select + compare
        attn = 2 * t * t * cfg.hidden  # QK^T and PV, summed over heads
        macs["attention"] += attn
        flops["attention"] += 2 * attn
        lm += attn
        lf += 2 * attn
        per_layer_macs.append(lm)
        per_layer_flops.append(lf)
    head = cfg.vocab * cfg.hidden * t
    macs["other"] += head
    flops["other"] += 2 * head
    return FlopReport(mode=mode, rho=rho, tokens=t, macs=macs, flops=flops,
                      per_layer_macs=tuple(per_layer_macs),
                      per_layer_flops=tuple(per_layer_flops))


def macs_ratio(cfg: ModelConfig, rho: float, tokens: int) -> float:
    """Total MACs of the pruned pass relative to the dense pass."""
    pruned = count_costs(cfg, rho, tokens, "mu_moe")
    dense = count_costs(cfg, 1.0, tokens, "dense")
    return pruned.total_macs / dense.total_macs


def linear_macs_ratio(cfg: ModelConfig, rho: float, tokens: int) -> float:
    """Linear-path MACs (sparse product + pruning overhead) relative to dense linears."""
    pruned = count_costs(cfg, rho, tokens, "mu_moe")
    dense = count_costs(cfg, 1.0, tokens, "dense")
    return pruned.linear_macs / dense.linear_macs
