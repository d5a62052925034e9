"""Command-line front end: prune, eval, bench.

Every run resolves its configuration (flags > config file > defaults), seeds
all randomness, and writes a manifest recording the resolved values plus
SHA-256 hashes of every input file, so identical manifests imply identical
outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, metrics, model as model_mod, pruner, sparse

METHOD_ALIASES = {"magnitude": "magnitude", "wanda": "wanda",
                  "sparsegpt": "sparsegpt_score", "sparsegpt_score": "sparsegpt_score"}
STRATEGY_ALIASES = {"sort": "sort", "heap": "heap_topk", "heap_topk": "heap_topk",
                    "kth": "kth_threshold", "kth_threshold": "kth_threshold"}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_tokens(path: Path, m: model_mod.Model) -> np.ndarray:
    """Token files: .bin/.tokens are raw u32 LE ids; anything else is UTF-8 text."""
    if path.suffix in (".bin", ".tokens"):
        ids = np.fromfile(path, dtype="<u4").astype(np.int64)
        if ids.size and ids.max() >= m.config.vocab:
            raise model_mod.TokenError(f"{path}: token id exceeds model vocab")
        return ids
    return m.encode(path.read_text(encoding="utf-8"))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """flags > config file > parser defaults."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(keys)
    if unknown:
        raise ValueError(f"config file has unknown keys: {sorted(unknown)}")
    resolved = {}
    for key in keys:
        flag = getattr(args, key)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = args.parser_defaults[key]
    return resolved


def _write_manifest(out_dir: Path, command: str, resolved: dict, seed: int,
                    inputs: dict[str, Path]):
    manifest = {
        "command": command,
        "config": resolved,
        "seed": seed,
        "inputs": {name: _sha256(p) for name, p in sorted(inputs.items())},
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _alias(table: dict, name: str, what: str) -> str:
    # config-file values bypass argparse choices= validation
    if name not in table:
        raise ValueError(f"unknown {what} {name!r} (choices: {sorted(table)})")
    return table[name]


def _prune_config(resolved: dict, mode: str) -> pruner.PruneConfig:
    return pruner.PruneConfig(
        rho=float(resolved["rho"]),
        method=_alias(METHOD_ALIASES, resolved["method"], "method"),
        strategy=_alias(STRATEGY_ALIASES, resolved["strategy"], "strategy"),
        tie_mode=resolved["tie"],
        mode=mode,
        lambda_coeff=float(resolved["damping"]),
    )


def cmd_prune(args) -> int:
    keys = ["mode", "method", "rho", "strategy", "tie", "damping"]
    resolved = _resolve(args, keys)
    mode = resolved["mode"]
    if mode == "online" and args.calib:
        raise SystemExit2("--mode online takes --prompt, not --calib")
    if mode == "online" and args.prompt is None:
        raise SystemExit2("--mode online requires --prompt")
    if mode == "offline" and not args.calib:
        raise SystemExit2("--mode offline requires --calib")
    m = model_mod.load_model(args.model)
    inputs = {"model": Path(args.model)}
    if mode == "online":
        tokens = m.encode(args.prompt)
        if tokens.size == 0:
            print("error: prompt encodes to zero tokens", file=sys.stderr)
            return 1
        cfg = _prune_config(resolved, "online")
        pruned, masks = pruner.prune_online(m, tokens, cfg)
        source = "prompt"
    else:
        calib_path = Path(args.calib)
        tokens = _read_tokens(calib_path, m)
        cfg = _prune_config(resolved, "offline")
        record = pruner.calibrate_offline(m, tokens, cfg, source=str(calib_path))
        pruned = pruner.prune_offline(m, record, cfg)
        masks = pruned.masks
        inputs["calib"] = calib_path
        source = str(calib_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, ws in sorted(masks.items()):
        (out_dir / f"{name}.mask").write_bytes(sparse.dump_bytes(ws))
    dense_inputs = pruner.layer_inputs(m, tokens, masks.keys())
    losses = pruner.per_layer_losses(m, masks, dense_inputs)
    summary = {
        "source": source,
        "token_count": int(tokens.size),
        "layers": {
            name: {"active": masks[name].nnz(),
                   "total": masks[name].rows * masks[name].cols,
                   "loss_vs_dense": losses[name]}
            for name in sorted(masks)
        },
        "mean_loss": float(np.mean(list(losses.values()))),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out_dir, "prune", resolved | {"prompt": args.prompt},
                    args.seed, inputs)
    print(f"wrote {len(masks)} mask dumps to {out_dir}")
    print(f"mean_loss={summary['mean_loss']:.6g}")
    return 0


def cmd_eval(args) -> int:
    keys = ["mode", "method", "rho", "strategy", "tie", "damping", "stride"]
    resolved = _resolve(args, keys)
    mode = resolved["mode"]
    m = model_mod.load_model(args.model)
    text_path = Path(args.text)
    stream = _read_tokens(text_path, m)
    inputs = {"model": Path(args.model), "text": text_path}
    stride = resolved["stride"]
    if mode == "dense":
        forward = m.forward
    elif mode == "offline":
        if not args.calib:
            raise SystemExit2("--mode offline requires --calib")
        calib_path = Path(args.calib)
        inputs["calib"] = calib_path
        cfg = _prune_config(resolved, "offline")
        record = pruner.calibrate_offline(m, _read_tokens(calib_path, m), cfg)
        forward = pruner.prune_offline(m, record, cfg).forward
    else:
        cfg = _prune_config(resolved, "online")
        forward = lambda window: pruner.online_logits(m, window, cfg)
    ppl = model_mod.perplexity(forward, stream, m.config.max_seq, stride)
    rho = float(resolved["rho"])
    tokens_per_window = min(int(stream.size), m.config.max_seq)
    if mode == "dense":
        report = metrics.count_costs(m.config, 1.0, tokens_per_window, "dense")
        total_ratio = linear_ratio = 1.0
        eff_rho = 1.0
    else:
        eff_rho = rho
        report = metrics.count_costs(m.config, rho, tokens_per_window, "mu_moe")
        total_ratio = metrics.macs_ratio(m.config, rho, tokens_per_window)
        linear_ratio = metrics.linear_macs_ratio(m.config, rho, tokens_per_window)
    print(f"perplexity={ppl:.6f}")
    print(f"total_macs={report.total_macs}")
    print(f"macs_total_ratio={total_ratio:.4f}")
    print(f"macs_linear_ratio={linear_ratio:.4f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "cost_report.json").write_text(report.to_json(), encoding="utf-8")
        (out_dir / "eval.json").write_text(json.dumps({
            "perplexity": ppl, "macs_total_ratio": total_ratio,
            "macs_linear_ratio": linear_ratio, "mode": mode, "rho": eff_rho,
        }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _write_manifest(out_dir, "eval", resolved, args.seed, inputs)
    return 0


def _parse_list(raw: str, cast) -> tuple:
    items = tuple(cast(tok) for tok in raw.split(",") if tok.strip())
    if not items:
        raise SystemExit2("empty list argument")
    return items


def cmd_bench(args) -> int:
    strategies = tuple(_alias(STRATEGY_ALIASES, s, "strategy")
                       for s in _parse_list(args.strategies, str))
    spec = bench.BenchSpec(
        d_values=_parse_list(args.d, int),
        d_prime_values=_parse_list(args.dprime, int),
        rho_values=_parse_list(args.rho, float),
        strategies=strategies,
        reps=args.reps,
        warmup=args.warmup,
        seed=args.seed,
        include_parallel=args.parallel,
    )
    rows = bench.run_bench(spec)
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        bench.write_csv(rows, out_path)
        out_dir = out_path.parent
        _write_manifest(out_dir, "bench", {
            "d": list(spec.d_values), "dprime": list(spec.d_prime_values),
            "rho": list(spec.rho_values), "strategies": list(spec.strategies),
            "reps": spec.reps, "warmup": spec.warmup,
            "parallel": spec.include_parallel,
        }, args.seed, {})
        print(f"wrote {len(rows)} rows to {out_path}")
    else:
        bench.write_csv(rows, sys.stdout)
    spread = bench.kth_spread(rows)
    for (d, dp), rel in sorted(spread.items()):
        print(f"kth_spread d={d} d_prime={dp} rel={rel:.3f}", file=sys.stderr)
    return 0


class SystemExit2(SystemExit):
    """Usage error: message to stderr, exit code 2 (argparse convention)."""

    def __init__(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mumoe",
        description="Per-prompt test-time pruning of transformer linears.")
    ap.add_argument("--version", action="version", version=f"mumoe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON config file; flags override it")

    pp = sub.add_parser("prune", help="compute and dump per-layer masks")
    common(pp)
    pp.add_argument("--model", required=True)
    pp.add_argument("--mode", choices=["offline", "online"])
    pp.add_argument("--method", choices=sorted(METHOD_ALIASES))
    pp.add_argument("--rho", type=float)
    pp.add_argument("--calib", help="calibration tokens (offline mode)")
    pp.add_argument("--prompt", help="prompt text (online mode)")
    pp.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES))
    pp.add_argument("--tie", choices=["canonical", "parity"])
    pp.add_argument("--damping", type=float, help="gram damping coefficient")
    pp.add_argument("--out", required=True, help="output directory")
    pp.set_defaults(func=cmd_prune, parser_defaults={
        "mode": "online", "method": "wanda", "rho": 0.5, "strategy": "kth",
        "tie": "canonical", "damping": 0.01})

    pe = sub.add_parser("eval", help="perplexity and cost report on a token stream")
    common(pe)
    pe.add_argument("--model", required=True)
    pe.add_argument("--text", required=True, help="text or token file to score")
    pe.add_argument("--mode", choices=["dense", "offline", "online"])
    pe.add_argument("--method", choices=sorted(METHOD_ALIASES))
    pe.add_argument("--rho", type=float)
    pe.add_argument("--calib")
    pe.add_argument("--stride", type=int)
    pe.add_argument("--strategy", choices=sorted(STRATEGY_ALIASES))
    pe.add_argument("--tie", choices=["canonical", "parity"])
    pe.add_argument("--damping", type=float)
    pe.add_argument("--out", help="optional output directory for reports")
    pe.set_defaults(func=cmd_eval, parser_defaults={
        "mode": "dense", "method": "wanda", "rho": 1.0, "strategy": "kth",
        "tie": "canonical", "damping": 0.01, "stride": None})

    pb = sub.add_parser("bench", help="selection-strategy micro-benchmark")
    common(pb)
    pb.add_argument("--d", default="64,256,1024")
    pb.add_argument("--dprime", default="64")
    pb.add_argument("--rho", default="0.25,0.5,0.75")
    pb.add_argument("--strategies", default="sort,heap,kth")
    pb.add_argument("--reps", type=int, default=5)
    pb.add_argument("--warmup", type=int, default=2)
    pb.add_argument("--parallel", action="store_true",
                    help="also time row-parallel variants (MUMOE_THREADS caps workers)")
    pb.add_argument("--out", help="CSV output path")
    pb.set_defaults(func=cmd_bench, parser_defaults={})
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, model_mod.TokenError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
