"""Offline and online (per-prompt) pruning over a model's linear layers.

Both paths funnel through one pruning forward pass: at each filtered layer,
in front-to-back order, collect stats from the layer's actual input, score,
select, compress, and continue with the compressed layer's output. Offline
calibration records the stats; online pruning keeps the masks. Because the
two share the per-layer computation, online masks for prompt P are bitwise
identical to offline masks calibrated on P.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import linalg, scoring, selection, sparse
from .model import Model, greedy_generate
from .scoring import ActivationStats
from .selection import SelectionParams
from .sparse import RowSparseMatrix

METHODS = ("magnitude", "wanda", "sparsegpt_score")
MODES = ("offline", "online")


@dataclass(frozen=True)
class PruneConfig:
    rho: float
    method: str = "wanda"
    strategy: str = "kth_threshold"
    tie_mode: str = "canonical"
    mode: str = "online"
    lambda_coeff: float = 0.01
    layer_filter: tuple[str, ...] | None = None  # None = every block linear
    reprune_each_step: bool = False
    allow_online_sparsegpt: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.strategy not in selection.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.tie_mode not in selection.TIE_MODES:
            raise ValueError(f"unknown tie_mode {self.tie_mode!r}")
        if (self.mode == "online" and self.method == "sparsegpt_score"
                and not self.allow_online_sparsegpt):
            raise ValueError(
                "online sparsegpt_score is disallowed (cubic-cost scoring); "
                "set allow_online_sparsegpt=True to force it for experiments"
            )


@dataclass(frozen=True)
class CalibrationRecord:
    stats: dict[str, ActivationStats]
    source: str
    token_count: int


def filtered_layers(model: Model, cfg: PruneConfig) -> list[str]:
    names = model.linear_names()
    if cfg.layer_filter is None:
        return names
    unknown = [n for n in cfg.layer_filter if n not in names]
    if unknown:
        raise ValueError(f"layer_filter names unknown layers: {unknown}")
    return [n for n in names if n in set(cfg.layer_filter)]


def _make_mask(w: np.ndarray, st: ActivationStats | None,
               cfg: PruneConfig) -> RowSparseMatrix:
    scores = scoring.score_weights(cfg.method, w, st)
    params = SelectionParams(cfg.rho, w.shape[1], cfg.strategy, cfg.tie_mode)
    return sparse.compress(w, selection.select(scores, params))


def _pruning_pass(model: Model, tokens, cfg: PruneConfig):
    """One forward pass that prunes every filtered layer from its own input.

    Returns (masks, stats, logits); stats hold each layer's raw input summary
    regardless of method, so a calibration record can re-score later.
    """
    names = set(filtered_layers(model, cfg))
    need_gram = cfg.method == "sparsegpt_score"
    masks: dict[str, RowSparseMatrix] = {}
    stats: dict[str, ActivationStats] = {}

    def apply(name, w, x):
        if name not in names:
            return linalg.matmul(w, x)
        st = scoring.collect_stats(x, need_gram=need_gram,
                                   lambda_coeff=cfg.lambda_coeff)
        stats[name] = st
        try:
            ws = _make_mask(w, st, cfg)
        except linalg.NotPositiveDefiniteError as e:
            raise linalg.NotPositiveDefiniteError(
                e.pivot, e.value, context=f"layer {name}") from e
        masks[name] = ws
        return sparse.sparse_matmul(ws, x)

    logits = model.forward(tokens, apply)
    return masks, stats, logits


class PrunedModel:
    """A pruned view over an immutable base model; weights are never mutated."""

    def __init__(self, base: Model, masks: dict[str, RowSparseMatrix],
                 cfg: PruneConfig):
        self.base = base
        self.config = base.config
        self.masks = dict(masks)
        self.prune_config = cfg

    def apply_linear(self, name, w, x):
        ws = self.masks.get(name)
        if ws is None:
            return linalg.matmul(w, x)
        return sparse.sparse_matmul(ws, x)

    def forward(self, tokens) -> np.ndarray:
        return self.base.forward(tokens, self.apply_linear)

    def generate(self, prompt_tokens, n_steps: int) -> np.ndarray:
        """Greedy decode reusing the installed masks at every step."""
        if self.prune_config.reprune_each_step:
            return _reprune_generate(self.base, prompt_tokens, n_steps,
                                     self.prune_config)
        return greedy_generate(self.forward, prompt_tokens, n_steps,
                               self.config.max_seq)

    def mask_hashes(self) -> dict[str, str]:
        return {name: hashlib.sha256(sparse.dump_bytes(ws)).hexdigest()
                for name, ws in self.masks.items()}

    def active_counts(self) -> dict[str, int]:
        return {name: ws.nnz() for name, ws in self.masks.items()}


def _reprune_generate(base: Model, prompt_tokens, n_steps: int,
                      cfg: PruneConfig) -> np.ndarray:
    # Study-only path: recompute masks from the growing sequence each step.
    ids = list(np.asarray(prompt_tokens, dtype=np.int64))
    for _ in range(n_steps):
        window = np.asarray(ids[-base.config.max_seq:], dtype=np.int64)
        _, _, logits = _pruning_pass(base, window, cfg)
        ids.append(int(np.argmax(logits[-1])))
    return np.asarray(ids, dtype=np.int64)


def calibrate_offline(model: Model, tokens, cfg: PruneConfig,
                      source: str = "calibration") -> CalibrationRecord:
    """Record per-layer input stats from one pruning forward pass.

    Layers are pruned as the pass proceeds, so each later layer's stats see
    post-pruning upstream activations.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size < 1:
        raise ValueError("calibration needs at least one token")
    _, stats, _ = _pruning_pass(model, ids, cfg)
    return CalibrationRecord(stats=stats, source=source, token_count=int(ids.size))


def prune_offline(model: Model, record: CalibrationRecord,
                  cfg: PruneConfig) -> PrunedModel:
    """Build static masks from recorded calibration stats."""
    masks: dict[str, RowSparseMatrix] = {}
    for name in filtered_layers(model, cfg):
        st = record.stats.get(name)
        if st is None:
            raise ValueError(f"calibration record has no stats for layer {name}")
        if cfg.method == "sparsegpt_score" and st.gram is None:
            raise ValueError(
                f"layer {name}: record lacks gram stats needed for sparsegpt_score"
            )
        masks[name] = _make_mask(model.get_linear(name), st, cfg)
    return PrunedModel(model, masks, cfg)


def prune_online(model: Model, prompt_tokens,
                 cfg: PruneConfig) -> tuple[PrunedModel, dict[str, RowSparseMatrix]]:
    """Per-prompt pruning: one prefill pass computes masks from the prompt itself.

    Masks persist for the prompt's decode steps and die with the prompt.
    """
    if cfg.mode != "online":
        raise ValueError("prune_online requires cfg.mode == 'online'")
    ids = np.asarray(prompt_tokens, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty prompt: no activations to calibrate on")
    masks, _, _ = _pruning_pass(model, ids, cfg)
    return PrunedModel(model, masks, cfg), masks


def online_logits(model: Model, tokens, cfg: PruneConfig) -> np.ndarray:
    """Logits of the pruning prefill pass itself.

    Equals prune_online(model, tokens, cfg)[0].forward(tokens) bitwise, for
    one pass instead of two.
    """
    if cfg.mode != "online":
        raise ValueError("online_logits requires cfg.mode == 'online'")
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty prompt: no activations to calibrate on")
    _, _, logits = _pruning_pass(model, ids, cfg)
    return logits


def layer_inputs(model: Model, tokens, names) -> dict[str, np.ndarray]:
    """Dense-path input activations (d x T) of the named layers."""
    wanted = set(names)
    rec: dict[str, np.ndarray] = {}

    def apply(name, w, x):
        if name in wanted:
            rec[name] = x
        return linalg.matmul(w, x)

    model.forward(tokens, apply)
    return rec


def mean_layer_loss(model: Model, masks: dict[str, RowSparseMatrix],
                    inputs: dict[str, np.ndarray]) -> float:
    """Mean reconstruction loss over pruned layers, on given input activations."""
    losses = [sparse.approx_loss(model.get_linear(name), ws, inputs[name])
              for name, ws in sorted(masks.items())]
    return float(np.mean(losses))


def per_layer_losses(model: Model, masks: dict[str, RowSparseMatrix],
                     inputs: dict[str, np.ndarray]) -> dict[str, float]:
    return {name: sparse.approx_loss(model.get_linear(name), ws, inputs[name])
            for name, ws in sorted(masks.items())}
