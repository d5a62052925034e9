"""Domain-shift experiments: does per-prompt pruning dodge stale calibration?

Two granularities share one CSV schema (trial, layer, method, calib_domain,
test_domain, rho, loss):

* synthetic single-layer trials, where activation domains are Gaussians with
  rotated anisotropic covariances, cheap enough for hundreds of trials;
* whole-model trials, where calibration and test prompts are drawn from two
  token corpora and losses are measured per transformer linear.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import pruner, scoring, selection, sparse
from .model import Model
from .pruner import PruneConfig

CSV_FIELDS = ("trial", "layer", "method", "calib_domain", "test_domain", "rho", "loss")


@dataclass(frozen=True)
class SyntheticShiftSpec:
    d: int = 64
    d_prime: int = 32
    tokens: int = 32
    cond: float = 1000.0
    rho: float = 0.5
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.cond < 10.0:
            raise ValueError("domains need condition number >= 10 to be anisotropic")
        if self.trials < 1:
            raise ValueError("trials must be positive")


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def domain_sqrt(rng: np.random.Generator, d: int, cond: float) -> np.ndarray:
    """Covariance square root: random rotation times anisotropic spectrum."""
    eigs = np.geomspace(1.0, 1.0 / cond, d)
    return random_rotation(rng, d) * np.sqrt(eigs)[None, :]


def sample_domain(rng: np.random.Generator, sqrt_cov: np.ndarray,
                  tokens: int) -> np.ndarray:
    d = sqrt_cov.shape[0]
    return (sqrt_cov @ rng.standard_normal((d, tokens))).astype(np.float32)


def _wanda_mask(w, x, rho: float) -> sparse.RowSparseMatrix:
    st = scoring.collect_stats(x)
    scores = scoring.wanda_score(w, st)
    params = selection.SelectionParams(rho, w.shape[1])
    return sparse.compress(w, selection.select(scores, params))


def _magnitude_mask(w, rho: float) -> sparse.RowSparseMatrix:
    scores = scoring.magnitude_score(w)
    params = selection.SelectionParams(rho, w.shape[1])
    return sparse.compress(w, selection.select(scores, params))


@dataclass(frozen=True)
class SyntheticShiftResult:
    rows: list[dict]
    frac_online_le_mismatched: float
    frac_online_le_matched_slack: float
    frac_wanda_le_magnitude: float
    mean_loss: dict[str, float]


def run_synthetic_shift(spec: SyntheticShiftSpec) -> SyntheticShiftResult:
    """Per trial: fresh weight matrix, fresh domain pair, four masks, one test set.

    Calibration variants: online (stats from the test activations themselves),
    matched (independent draw from the test domain), mismatched (draw from the
    rotated other domain), and magnitude (no calibration at all). Losses are
    all measured on the same test activations.
    """
    rng = np.random.default_rng(spec.seed)
    rows: list[dict] = []
    wins_mismatch = 0
    wins_matched = 0
    wins_magnitude = 0
    sums = {"online": 0.0, "matched": 0.0, "mismatched": 0.0, "magnitude": 0.0}
    for trial in range(spec.trials):
        sqrt_a = domain_sqrt(rng, spec.d, spec.cond)
        sqrt_b = domain_sqrt(rng, spec.d, spec.cond)
        w = rng.standard_normal((spec.d_prime, spec.d)).astype(np.float32)
        x_test = sample_domain(rng, sqrt_b, spec.tokens)
        x_matched = sample_domain(rng, sqrt_b, spec.tokens)
        x_mismatched = sample_domain(rng, sqrt_a, spec.tokens)

        losses = {
            "online": sparse.approx_loss(w, _wanda_mask(w, x_test, spec.rho), x_test),
            "matched": sparse.approx_loss(w, _wanda_mask(w, x_matched, spec.rho), x_test),
            "mismatched": sparse.approx_loss(
                w, _wanda_mask(w, x_mismatched, spec.rho), x_test),
            "magnitude": sparse.approx_loss(w, _magnitude_mask(w, spec.rho), x_test),
        }
        wins_mismatch += losses["online"] <= losses["mismatched"]
        wins_matched += losses["online"] <= losses["matched"] * 1.05
        wins_magnitude += losses["online"] <= losses["magnitude"]
        for variant, loss in losses.items():
            method = "magnitude" if variant == "magnitude" else "wanda"
            calib = {"online": "online", "matched": "B",
                     "mismatched": "A", "magnitude": "none"}[variant]
            rows.append({"trial": trial, "layer": 0, "method": method,
                         "calib_domain": calib, "test_domain": "B",
                         "rho": spec.rho, "loss": loss})
            sums[variant] += loss
    n = spec.trials
    return SyntheticShiftResult(
        rows=rows,
        frac_online_le_mismatched=wins_mismatch / n,
        frac_online_le_matched_slack=wins_matched / n,
        frac_wanda_le_magnitude=wins_magnitude / n,
        mean_loss={k: v / n for k, v in sums.items()},
    )


def _sample_window(rng: np.random.Generator, tokens: np.ndarray,
                   width: int) -> np.ndarray:
    if tokens.size < width:
        raise ValueError(f"token source shorter than window ({tokens.size} < {width})")
    start = int(rng.integers(0, tokens.size - width + 1))
    return tokens[start : start + width]


def shift_experiment(model: Model, domain_a_tokens, domain_b_tokens,
                     cfg: PruneConfig, trials: int = 10, window: int = 32,
                     seed: int = 0) -> list[dict]:
    """Whole-model shift study; rows follow CSV_FIELDS.

    Per trial, offline masks are calibrated on a random window from each
    domain and compared with online masks from the test window itself. All
    losses are measured per layer against the dense model's activations on
    the test window, so every variant is scored on identical inputs.
    """
    a = np.asarray(domain_a_tokens, dtype=np.int64)
    b = np.asarray(domain_b_tokens, dtype=np.int64)
    rng = np.random.default_rng(seed)
    offline_cfg = cfg if cfg.mode == "offline" else PruneConfig(
        rho=cfg.rho, method=cfg.method, strategy=cfg.strategy,
        tie_mode=cfg.tie_mode, mode="offline", lambda_coeff=cfg.lambda_coeff,
        layer_filter=cfg.layer_filter)
    online_cfg = PruneConfig(
        rho=cfg.rho, method=cfg.method, strategy=cfg.strategy,
        tie_mode=cfg.tie_mode, mode="online", lambda_coeff=cfg.lambda_coeff,
        layer_filter=cfg.layer_filter,
        allow_online_sparsegpt=cfg.method == "sparsegpt_score")
    names = pruner.filtered_layers(model, cfg)
    rows: list[dict] = []
    for trial in range(trials):
        calib_a = _sample_window(rng, a, window)
        calib_b = _sample_window(rng, b, window)
        test = _sample_window(rng, b, window)
        variants = {
            "A": pruner.prune_offline(
                model, pruner.calibrate_offline(model, calib_a, offline_cfg), offline_cfg),
            "B": pruner.prune_offline(
                model, pruner.calibrate_offline(model, calib_b, offline_cfg), offline_cfg),
            "online": pruner.prune_online(model, test, online_cfg)[0],
        }
        inputs = pruner.layer_inputs(model, test, names)
        for calib, pm in variants.items():
            losses = pruner.per_layer_losses(model, pm.masks, inputs)
            for li, name in enumerate(names):
                rows.append({"trial": trial, "layer": li, "method": cfg.method,
                             "calib_domain": calib, "test_domain": "B",
                             "rho": cfg.rho, "loss": losses[name]})
    return rows


def write_csv(rows, path_or_file):
    """Write shift rows in the fixed column order."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if own:
            f.close()
