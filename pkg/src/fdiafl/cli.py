"""Command-line pipeline: gen-data, train, eval, attack-demo, report.

Every command validates its inputs before writing anything, draws all
randomness from --seed via named substreams, and uses exit codes 0 (ok),
2 (configuration or I/O problem), 3 (numerical divergence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import estimation, grid, metrics
from .attack import make_stealthy, make_unstructured, sample_state_error
from .dataset import AttackRecipe, SplitSpec
from .federated import (
    ExperimentConfig,
    evaluate,
    rounds_csv,
    run_baseline,
    run_training,
)
from .neural import (
    BACKEND,
    CheckpointError,
    DivergenceError,
    TrainConfig,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .rng import substream

PROFILES = {
    "desk": {"train": 20000, "val": 2000, "subsets": 10, "rounds": 30},
    "paper": {"train": 100000, "val": 10000, "subsets": 10, "rounds": 100},
}


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Fixed width for reproducible --help; hides unset (None) defaults."""

    def __init__(self, prog):
        super().__init__(prog, width=96)

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _formatter(prog):
    return _HelpFormatter(prog)


def _resolve_outdir(value: str | None) -> Path:
    if value is not None:
        return Path(value)
    return Path(os.environ.get("FDIAFL_OUTDIR", "out"))


_BUNDLED = {
    "grid": "ieee14_grid.txt",
    "measurements": "ieee14_measurements.txt",
    "loads": "ieee14_loads.txt",
}


def _add_grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--grid", default="bundled",
                   help="grid topology file ('bundled' = shipped IEEE 14-bus)")
    p.add_argument("--measurements", default="bundled",
                   help="measurement configuration file ('bundled' = 19 meters)")
    p.add_argument("--loads", default="bundled",
                   help="base-case power profile file ('bundled' = IEEE 14-bus)")


def _load_grid_stack(args):
    paths = {}
    for name in ("grid", "measurements", "loads"):
        value = getattr(args, name)
        paths[name] = grid.bundled_path(_BUNDLED[name]) if value == "bundled" else Path(value)
        if not paths[name].is_file():
            raise FileNotFoundError(f"{name} file not found: {paths[name]}")
    system = grid.load_bus_system(paths["grid"])
    config = grid.load_measurement_config(paths["measurements"], system)
    h = grid.build_h(system, config)
    profile = grid.load_power_profile(paths["loads"], system)
    return system, config, h, profile


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise ValueError("empty integer list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdiafl",
        description="Stealthy false-data injection simulation and federated detector training.",
        formatter_class=_formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", formatter_class=_formatter,
                       help="generate a labeled measurement corpus")
    _add_grid_flags(p)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="corpus size preset")
    p.add_argument("--train", type=int, default=None, help="training samples (overrides profile)")
    p.add_argument("--val", type=int, default=None, help="validation samples (overrides profile)")
    p.add_argument("--subsets", type=int, default=None,
                   help="validation subsets (overrides profile)")
    p.add_argument("--attack-fraction", type=float, default=0.5,
                   help="fraction of attacked samples")
    p.add_argument("--sigma", type=float, default=0.2, help="measurement noise stddev")
    p.add_argument("--variation", type=float, default=0.2, help="load variation half-width")
    p.add_argument("--magnitude", type=float, default=0.2,
                   help="state-error magnitude for stealthy attacks (rad)")
    p.add_argument("--sparsity", default="1,2,3",
                   help="comma list of state-error support sizes to draw from")
    p.add_argument("--label-eps", type=float, default=1e-6,
                   help="attack-vector magnitude that marks a meter compromised")
    p.add_argument("--unstructured-fraction", type=float, default=0.0,
                   help="fraction of attacked samples left unstructured (single gross meter)")
    p.add_argument("--gross-sigma-mult", type=float, default=50.0,
                   help="gross error size in noise sigmas for unstructured attacks")
    p.add_argument("--alpha", type=float, default=0.05,
                   help="bad-data test significance for the summary")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="generation worker threads")
    p.add_argument("--outdir", default=None,
                   help="output directory (default: FDIAFL_OUTDIR or ./out)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", formatter_class=_formatter,
                       help="train the federated detector (or the no-collaboration baseline)")
    p.add_argument("--data-dir", required=True, help="directory written by gen-data")
    p.add_argument("--config", default=None, help="key=value experiment config file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="round-count preset when --rounds is not given")
    p.add_argument("--clients", type=int, default=None, help="edge servers (default 5)")
    p.add_argument("--rounds", type=int, default=None, help="global rounds (default per profile)")
    p.add_argument("--local-epochs", type=int, default=None,
                   help="local epochs per round (default 5)")
    p.add_argument("--batch", type=int, default=None, help="mini-batch size (default 64)")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate (default 1e-3)")
    p.add_argument("--l2", type=float, default=None, help="L2 factor on weights (default 0.01)")
    p.add_argument("--dropout", type=float, default=None, help="dropout rate (default 0.4)")
    p.add_argument("--hidden", default=None, help="hidden widths, e.g. 128,64")
    p.add_argument("--server-update", choices=("fedavg", "delta"), default=None,
                   help="aggregation rule (default fedavg)")
    p.add_argument("--partition", choices=("iid", "label-skew"), default=None,
                   help="client data split scheme (default iid)")
    p.add_argument("--per-client-scaler", action="store_true",
                   help="standardize each shard with its own statistics instead of "
                        "the shared corpus scaler")
    p.add_argument("--stop-patience", type=int, default=None,
                   help="stop after this many stalled rounds; 0 disables (default 0)")
    p.add_argument("--f1-target", type=float, default=None,
                   help="stop once averaged validation F1 reaches this value")
    p.add_argument("--threshold", type=float, default=None,
                   help="decision threshold for metrics (default 0.5)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--baseline", action="store_true",
                   help="train on a single shard without collaboration")
    p.add_argument("--shard-index", type=int, default=0, help="shard used by --baseline")
    p.add_argument("--threads", type=int, default=None, help="client worker threads (default 1)")
    p.add_argument("--deterministic", action="store_true",
                   help="force sequential client execution in id order (threads=1)")
    p.add_argument("--outdir", default=None,
                   help="output directory (default: FDIAFL_OUTDIR or ./out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=_formatter,
                       help="evaluate a checkpoint on the validation subsets")
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("--data-dir", required=True, help="directory written by gen-data")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold")
    p.add_argument("--report", default=None, help="write the JSON metric report here")
    p.add_argument("--per-location", default=None,
                   help="write a per-meter confusion breakdown CSV here")
    p.add_argument("--macro", action="store_true",
                   help="also report per-location (macro) averaged metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack-demo", formatter_class=_formatter,
                       help="show residuals and verdicts before/after attacks")
    _add_grid_flags(p)
    p.add_argument("--n", type=int, default=20, help="number of demo rows")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--sigma", type=float, default=0.2, help="measurement noise stddev")
    p.add_argument("--variation", type=float, default=0.2, help="load variation half-width")
    p.add_argument("--magnitude", type=float, default=0.2, help="stealthy state-error magnitude")
    p.add_argument("--sparsity", default="1,2,3", help="stealthy support sizes")
    p.add_argument("--alpha", type=float, default=0.05, help="bad-data test significance")
    p.add_argument("--unstructured", action="store_true",
                   help="show only the unstructured-attack columns")
    p.add_argument("--sigma-mult", type=float, default=50.0,
                   help="unstructured gross error in noise sigmas")
    p.set_defaults(func=cmd_attack_demo)

    p = sub.add_parser("report", formatter_class=_formatter,
                       help="summarize one or more rounds.csv files")
    p.add_argument("csv", nargs="+", help="rounds.csv paths")
    p.add_argument("--json", default=None, help="write the summary as JSON here")
    p.set_defaults(func=cmd_report)

    return parser


def _corpus_stats(train, h, profile, sigma, alpha):
    w = estimation.weight_vector(sigma, h.n_measurements)
    solver = estimation.WlsSolver(h, w)
    dof = h.n_measurements - h.n_state
    bdd = estimation.BddConfig.from_significance(alpha, dof)
    stats = solver.weighted_residual_many(train.features)
    flagged = stats > bdd.threshold
    attacked = train.attacked.astype(bool)
    rate = lambda mask: float(flagged[mask].mean()) if mask.any() else 0.0
    return rate(~attacked), rate(attacked), bdd.threshold


def cmd_gen_data(args) -> int:
    system, config, h, profile = _load_grid_stack(args)
    prof = PROFILES[args.profile]
    spec = SplitSpec(
        n_train=prof["train"] if args.train is None else args.train,
        n_val=prof["val"] if args.val is None else args.val,
        val_subsets=prof["subsets"] if args.subsets is None else args.subsets,
        attack_fraction=args.attack_fraction,
    )
    recipe = AttackRecipe(
        magnitude=args.magnitude,
        sparsity_choices=_parse_int_list(args.sparsity),
        label_eps=args.label_eps,
        unstructured_fraction=args.unstructured_fraction,
        gross_sigma_mult=args.gross_sigma_mult,
    )
    if not all(1 <= s <= h.n_state for s in recipe.sparsity_choices):
        raise ValueError(f"sparsity choices must be in 1..{h.n_state}")
    outdir = _resolve_outdir(args.outdir)
    train, vals = ds_mod.build_corpus(
        args.seed, spec, system, h, profile,
        sigma=args.sigma, variation=args.variation, recipe=recipe, threads=args.threads,
    )
    scaler = ds_mod.fit_scaler(train)
    train.scaler = scaler
    meta = {
        "seed": str(args.seed),
        "sigma": repr(args.sigma),
        "variation": repr(args.variation),
        "attack_fraction": repr(args.attack_fraction),
        "magnitude": repr(args.magnitude),
        "sparsity": args.sparsity,
        "label_eps": repr(args.label_eps),
        "unstructured_fraction": repr(args.unstructured_fraction),
        "grid_hash": ds_mod.grid_fingerprint(h, profile),
    }
    outdir.mkdir(parents=True, exist_ok=True)
    ds_mod.save_dataset(train, outdir / "train.csv", {**meta, "split": "train"})
    for i, v in enumerate(vals):
        v.scaler = scaler
        ds_mod.save_dataset(v, outdir / f"val_{i:02d}.csv",
                            {**meta, "split": "val", "subset": str(i)})
    normal_rate, attacked_rate, tau = _corpus_stats(train, h, profile, args.sigma, args.alpha)
    print(f"wrote {train.n} train + {spec.val_subsets} x {spec.n_val // spec.val_subsets} "
          f"val samples to {outdir}")
    print(f"attacked fraction: train {train.attacked.mean():.3f}")
    print(f"bad-data flag rate (alpha={args.alpha}, tau={tau:.3f}): "
          f"normal {normal_rate:.4f}, attacked {attacked_rate:.4f}, "
          f"gap {abs(attacked_rate - normal_rate):.4f}")
    return 0


def _parse_config_file(path: Path) -> dict:
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


_CONFIG_KEYS = {
    "clients": int, "rounds": int, "local_epochs": int, "batch": int,
    "lr": float, "l2": float, "dropout": float, "hidden": str,
    "server_update": str, "partition": str, "stop_patience": int, "f1_target": float,
    "threshold": float, "seed": int, "threads": int,
}


def _experiment_from(args) -> ExperimentConfig:
    """Merge defaults < config file < explicit CLI flags."""
    merged = {
        "clients": 5, "rounds": PROFILES[args.profile]["rounds"], "local_epochs": 5,
        "batch": 64, "lr": 1e-3, "l2": 0.01, "dropout": 0.4, "hidden": "128,64",
        "server_update": "fedavg", "partition": "iid", "stop_patience": 0,
        "f1_target": None, "threshold": 0.5, "seed": 0, "threads": 1,
    }
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        for key, value in _parse_config_file(path).items():
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}: unknown config key {key!r}")
            merged[key] = _CONFIG_KEYS[key](value)
    for key in merged:
        flag = getattr(args, key if key != "batch" else "batch", None)
        if flag is not None:
            merged[key] = flag
    if getattr(args, "deterministic", False):
        merged["threads"] = 1
    train_cfg = TrainConfig(
        lr=merged["lr"], l2=merged["l2"], dropout_p=merged["dropout"],
        batch_size=merged["batch"],
    )
    return ExperimentConfig(
        clients=merged["clients"],
        rounds=merged["rounds"],
        local_epochs=merged["local_epochs"],
        hidden=_parse_int_list(merged["hidden"]) if isinstance(merged["hidden"], str)
        else merged["hidden"],
        seed=merged["seed"],
        server_update=merged["server_update"],
        partition=merged["partition"],
        per_client_scaler=getattr(args, "per_client_scaler", False),
        stop_patience=merged["stop_patience"],
        f1_target=merged["f1_target"],
        threshold=merged["threshold"],
        threads=merged["threads"],
        train=train_cfg,
    )


def _load_corpus_dir(data_dir: Path):
    train_path = data_dir / "train.csv"
    if not train_path.is_file():
        raise FileNotFoundError(f"training corpus not found: {train_path}")
    train, meta = ds_mod.load_dataset(train_path)
    vals = []
    for path in sorted(data_dir.glob("val_*.csv")):
        v, _ = ds_mod.load_dataset(path)
        vals.append(v)
    if not vals:
        raise FileNotFoundError(f"no validation subsets (val_*.csv) in {data_dir}")
    if train.scaler is None:
        raise ds_mod.DatasetFormatError(f"{train_path}: metadata has no scaler")
    return train, vals, meta


def cmd_train(args) -> int:
    exp = _experiment_from(args)
    data_dir = Path(args.data_dir)
    train, vals, meta = _load_corpus_dir(data_dir)
    outdir = _resolve_outdir(args.outdir)
    if args.baseline:
        state, rows, ledger = run_baseline(
            train, vals, exp, scaler=train.scaler, shard_index=args.shard_index
        )
    else:
        state, rows, ledger = run_training(train, vals, exp, scaler=train.scaler)
    outdir.mkdir(parents=True, exist_ok=True)
    rounds_csv(rows, outdir / "rounds.csv")
    ledger.to_csv(outdir / "comm_ledger.csv")
    manifest = {
        "grid_hash": meta.get("grid_hash", ""),
        "scaler_mean": ds_mod.format_floats(train.scaler.mean),
        "scaler_std": ds_mod.format_floats(train.scaler.std),
        "seed": exp.seed,
        "clients": exp.clients,
        "rounds_completed": state.round,
        "baseline": bool(args.baseline),
        "threshold": exp.threshold,
        "kernel_backend": BACKEND,
    }
    save_checkpoint(outdir / "model.ckpt", state.params, manifest)
    last = rows[-1]
    print(f"completed {state.round} rounds ({'baseline' if args.baseline else 'federated'}, "
          f"{exp.clients} clients, backend={BACKEND})")
    print(f"final: loss {last.mean_val_loss:.4f} acc {last.accuracy:.4f} "
          f"prec {last.precision:.4f} rec {last.recall:.4f} f1 {last.f1:.4f}")
    print(f"outputs in {outdir}: rounds.csv, comm_ledger.csv, model.ckpt")
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    params, manifest = load_checkpoint(ckpt_path)
    data_dir = Path(args.data_dir)
    _, vals, meta = _load_corpus_dir(data_dir)
    if manifest.get("grid_hash") and meta.get("grid_hash") \
            and manifest["grid_hash"] != meta["grid_hash"]:
        raise CheckpointError(
            "checkpoint/manifest mismatch: model was trained against a different grid"
        )
    scaler = ds_mod.parse_scaler(
        {"scaler_mean": manifest["scaler_mean"], "scaler_std": manifest["scaler_std"]}
    )
    cfg = TrainConfig()
    val_sets = [
        (np.ascontiguousarray(scaler.transform(v.features)),
         np.ascontiguousarray(v.labels, dtype=np.float64))
        for v in vals
    ]
    mean_loss, rep = evaluate(params, val_sets, cfg, args.threshold)
    print(f"subsets: {len(val_sets)}  threshold: {args.threshold}")
    print(f"loss {mean_loss:.4f} acc {rep.accuracy:.4f} prec {rep.precision:.4f} "
          f"rec {rep.recall:.4f} f1 {rep.f1:.4f} subset_acc {rep.subset_accuracy:.4f}")
    payload = {
        "threshold": args.threshold,
        "subsets": len(val_sets),
        "mean_val_loss": mean_loss,
        "accuracy": rep.accuracy,
        "precision": rep.precision,
        "recall": rep.recall,
        "f1": rep.f1,
        "subset_accuracy": rep.subset_accuracy,
    }
    needs_pooled = args.macro or args.per_location
    if needs_pooled:
        feats = np.vstack([f for f, _ in val_sets])
        labels = np.vstack([l for _, l in val_sets])
        probs, _ = forward(params, feats, cfg, train=False)
    if args.macro:
        mrep = metrics.macro_report(probs, labels, args.threshold)
        print(f"macro (pooled subsets): acc {mrep.accuracy:.4f} prec {mrep.precision:.4f} "
              f"rec {mrep.recall:.4f} f1 {mrep.f1:.4f}")
        payload["macro"] = {
            "accuracy": mrep.accuracy,
            "precision": mrep.precision,
            "recall": mrep.recall,
            "f1": mrep.f1,
        }
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if args.per_location:
        lines = ["location,tp,fp,tn,fn"]
        for j, c in enumerate(metrics.per_location_counts(probs, labels, args.threshold)):
            lines.append(f"{j + 1},{c.tp},{c.fp},{c.tn},{c.fn}")
        Path(args.per_location).write_text("\n".join(lines) + "\n")
    return 0


def cmd_attack_demo(args) -> int:
    system, config, h, profile = _load_grid_stack(args)
    if args.n < 0:
        raise ValueError("--n must be non-negative")
    sparsity_choices = _parse_int_list(args.sparsity)
    scen = ds_mod.ScenarioGenerator(system, profile, args.variation)
    w = estimation.weight_vector(args.sigma, h.n_measurements)
    solver = estimation.WlsSolver(h, w)
    bdd = estimation.BddConfig.from_significance(
        args.alpha, h.n_measurements - h.n_state
    )
    rng = substream(args.seed, "attack-demo")

    def stat(y):
        v = solver.estimate(y)
        return estimation.weighted_residual_norm_sq(y, h, v, w)

    def verdict(r2):
        return "FLAG" if estimation.bdd_test(r2, bdd) else "pass"

    if args.unstructured:
        header = f"{'row':>4} {'r2_clean':>10} {'clean':>5} {'r2_gross':>10} {'gross':>5}"
    else:
        header = (f"{'row':>4} {'r2_clean':>10} {'clean':>5} {'r2_stealthy':>11} "
                  f"{'stealthy':>8} {'r2_gross':>10} {'gross':>5}")
    print(header)
    n_same_verdict = 0
    n_gross_flagged = 0
    for i in range(args.n):
        y = h.values @ scen.sample(rng) + rng.normal(0.0, args.sigma, h.n_measurements)
        r2 = stat(y)
        err = sample_state_error(rng, h.n_state, int(rng.choice(sparsity_choices)),
                                 args.magnitude)
        r2_stealthy = stat(y + make_stealthy(h, err))
        gross = make_unstructured(rng, h.n_measurements, args.sigma_mult, args.sigma)
        r2_gross = stat(y + gross)
        n_same_verdict += verdict(r2) == verdict(r2_stealthy)
        n_gross_flagged += estimation.bdd_test(r2_gross, bdd)
        if args.unstructured:
            print(f"{i:>4} {r2:>10.4f} {verdict(r2):>5} {r2_gross:>10.4f} "
                  f"{verdict(r2_gross):>5}")
        else:
            print(f"{i:>4} {r2:>10.4f} {verdict(r2):>5} {r2_stealthy:>11.4f} "
                  f"{verdict(r2_stealthy):>8} {r2_gross:>10.4f} {verdict(r2_gross):>5}")
    if args.n:
        print(f"stealthy verdict unchanged: {n_same_verdict}/{args.n}  "
              f"unstructured flagged: {n_gross_flagged}/{args.n}  "
              f"(tau={bdd.threshold:.3f})")
    return 0


def _read_rounds(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty rounds file")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        rows.append({k: float(v) for k, v in zip(header, cells)})
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    return rows


def cmd_report(args) -> int:
    summary = []
    for name in args.csv:
        path = Path(name)
        if not path.is_file():
            raise FileNotFoundError(f"rounds file not found: {path}")
        rows = _read_rounds(path)
        final = rows[-1]
        best = max(rows, key=lambda r: r.get("f1", 0.0))
        summary.append({"file": str(path), "rounds": len(rows), "final": final, "best": best})
    print(f"{'file':<40} {'rounds':>6} {'acc':>7} {'prec':>7} {'rec':>7} "
          f"{'f1':>7} {'best_f1':>8}")
    for item in summary:
        final, best = item["final"], item["best"]
        print(f"{item['file']:<40} {item['rounds']:>6} {final['accuracy']:>7.4f} "
              f"{final['precision']:>7.4f} {final['recall']:>7.4f} {final['f1']:>7.4f} "
              f"{best['f1']:>8.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
