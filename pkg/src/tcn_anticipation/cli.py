"""Command-line interface: data generation, training, evaluation, studies.

Every command reads an optional ``key = value`` config file; explicit flags
override file values, and the TCNA_SEED environment variable is the seed
fallback. Commands exit 0 on success and write machine-readable CSV artifacts
plus a plain-text summary into the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .baseline import LstmConfig, LstmEncoderDecoder
from .bench import bench_models
from .branch import Branch, BranchConfig
from .checkpoint import (CheckpointError, branch_checkpoint_tensors, branch_from_checkpoint,
                         fusion_checkpoint_tensors, load_any_checkpoint, save_checkpoint)
from .data import DatasetError, read_dataset, stack_features, write_dataset
from .fusion import HEADS, MODALITIES, STRATEGIES, FusionConfig
from .gradcheck import run_standard_suite
from .metrics import evaluate_predictions, format_table, report_csv
from .synthetic import complementary_spec, generate_synthetic, learnable_spec, long_range_spec
from .tensor import NonFiniteError, Rng, TensorError
from .training import SgdConfig, train_branch, train_fusion

PRESETS = {"learnable": learnable_spec, "complementary": complementary_spec,
           "long-range": long_range_spec}

_KEY_TYPES = {
    "seed": int, "epochs": int, "lr": float, "batch": int, "dtype": str,
    "snippets": int, "modality": str, "strategy": str, "data": str, "out": str,
    "channels": int, "kernel": int, "embed_dim": int,
    "input_dropout": float, "block_dropout": float, "head_dropout": float,
    "fusion_dropout": float, "momentum": float, "weight_decay": float,
    "power": float, "preset": str, "sigma": float, "train_per_class": int,
    "val_per_class": int, "reps": int, "warmup": int,
}


class CliError(ValueError):
    pass


def parse_config(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _KEY_TYPES:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _KEY_TYPES[key](value)
            except ValueError:
                raise CliError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from None
    return values


def _resolve(args, cfg: dict, key: str, default=None):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def _resolve_seed(args, cfg: dict) -> int:
    seed = _resolve(args, cfg, "seed")
    if seed is None:
        env = os.environ.get("TCNA_SEED")
        seed = int(env) if env else 0
    return int(seed)


def _out_dir(args, cfg: dict) -> Path:
    out = _resolve(args, cfg, "out")
    if out is None:
        raise CliError("an output directory is required (--out or config key 'out')")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_split(data_dir: Path, split: str):
    index = data_dir / split / "index.csv"
    if not index.exists():
        raise CliError(f"no {split} split at {index}")
    return read_dataset(index)


def _class_counts(samples) -> dict[str, int]:
    return {head: max(s.labels[head] for s in samples) + 1 for head in HEADS}


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# -- commands -----------------------------------------------------------------

def cmd_synth_gen(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    preset = _resolve(args, cfg, "preset", "learnable")
    if preset not in PRESETS:
        raise CliError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    overrides = {}
    if _resolve(args, cfg, "sigma") is not None:
        overrides["sigma"] = _resolve(args, cfg, "sigma")
    if _resolve(args, cfg, "snippets") is not None:
        overrides["num_snippets"] = _resolve(args, cfg, "snippets")
    if _resolve(args, cfg, "train_per_class") is not None:
        overrides["train_per_class"] = _resolve(args, cfg, "train_per_class")
    if _resolve(args, cfg, "val_per_class") is not None:
        overrides["val_per_class"] = _resolve(args, cfg, "val_per_class")
    spec = PRESETS[preset](**overrides)
    train, val = generate_synthetic(spec, seed)
    write_dataset(train, out / "train")
    write_dataset(val, out / "val")
    summary = (f"preset={preset} seed={seed}\n{spec}\n"
               f"train samples={len(train)} val samples={len(val)}\n")
    _write(out / "summary.txt", summary)
    print(summary, end="")
    return 0


def _branch_config_from_args(args, cfg, samples, modality: str) -> BranchConfig:
    counts = _class_counts(samples)
    input_dim = samples[0].features[modality].shape[1]
    kwargs = dict(
        input_dim=input_dim,
        num_actions=counts["action"], num_verbs=counts["verb"], num_nouns=counts["noun"],
        channels=_resolve(args, cfg, "channels", 1024),
        kernel=_resolve(args, cfg, "kernel", 3),
        input_dropout=_resolve(args, cfg, "input_dropout", 0.3),
        block_dropout=_resolve(args, cfg, "block_dropout", 0.5),
        head_dropout=_resolve(args, cfg, "head_dropout", 0.7),
        dtype=_resolve(args, cfg, "dtype", "f32"),
    )
    base = BranchConfig(**kwargs)
    snippets = _resolve(args, cfg, "snippets")
    if snippets is not None:
        base = base.for_snippets(snippets)
    return base


def _sgd_from_args(args, cfg, seed, default_lr, default_epochs, default_batch) -> SgdConfig:
    return SgdConfig(
        lr0=_resolve(args, cfg, "lr", default_lr),
        epochs=_resolve(args, cfg, "epochs", default_epochs),
        batch_size=_resolve(args, cfg, "batch", default_batch),
        momentum=_resolve(args, cfg, "momentum", 0.9),
        weight_decay=_resolve(args, cfg, "weight_decay", 5e-4),
        power=_resolve(args, cfg, "power", 0.99),
        seed=seed,
    )


def _history_csv(history) -> str:
    lines = ["epoch,lr,train_loss,val_top1_action,val_top5_action,wall_seconds"]
    for r in history:
        lines.append(f"{r.epoch},{r.lr:.8g},{r.train_loss:.8g},"
                     f"{r.val_top1_action:.6f},{r.val_top5_action:.6f},{r.wall_seconds:.3f}")
    return "\n".join(lines) + "\n"


def cmd_train_branch(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    data_dir = Path(_resolve(args, cfg, "data") or _fail("--data is required"))
    modality = _resolve(args, cfg, "modality", "rgb")
    if modality not in MODALITIES:
        raise CliError(f"unknown modality {modality!r}")
    train = _load_split(data_dir, "train")
    val = _load_split(data_dir, "val")
    bcfg = _branch_config_from_args(args, cfg, train + val, modality)
    sgd = _sgd_from_args(args, cfg, seed, default_lr=0.005, default_epochs=80,
                         default_batch=64)
    snippets = _resolve(args, cfg, "snippets")
    branch, result = train_branch(train, val, modality, bcfg, sgd,
                                  snippets=snippets, log=print)
    save_checkpoint(out / f"branch_{modality}.ckpt",
                    branch_checkpoint_tensors(branch, modality, sgd.epochs - 1))
    best = Branch(bcfg, Rng(0))
    best.load_state(result.best_state)
    save_checkpoint(out / f"branch_{modality}_best.ckpt",
                    branch_checkpoint_tensors(best, modality, result.best_epoch))
    _write(out / f"train_log_{modality}.csv", _history_csv(result.history))
    summary = (f"modality={modality} epochs={sgd.epochs} "
               f"best_epoch={result.best_epoch} best_val_top1={result.best_val_top1:.4f}\n")
    _write(out / "summary.txt", summary)
    print(summary, end="")
    return 0


def _fail(msg: str):
    raise CliError(msg)


def cmd_train_fusion(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    data_dir = Path(_resolve(args, cfg, "data") or _fail("--data is required"))
    strategy = _resolve(args, cfg, "strategy", "mutual_pairwise")
    if strategy not in STRATEGIES:
        raise CliError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    branches = {}
    for mod in MODALITIES:
        path = getattr(args, f"{mod}_ckpt")
        if path is None:
            raise CliError(f"--{mod}-ckpt is required")
        branch, ck_mod, _ = branch_from_checkpoint(path)
        if ck_mod != mod:
            raise CliError(f"{path} holds a {ck_mod} branch, expected {mod}")
        branches[mod] = branch
    train = _load_split(data_dir, "train")
    val = _load_split(data_dir, "val")
    counts = _class_counts(train + val)
    fcfg = FusionConfig(
        channels=branches["rgb"].config.channels,
        num_actions=counts["action"], num_verbs=counts["verb"], num_nouns=counts["noun"],
        strategy=strategy,
        embed_dim=_resolve(args, cfg, "embed_dim", 1024),
        head_dropout=_resolve(args, cfg, "fusion_dropout", 0.8),
        dtype=branches["rgb"].config.dtype,
    )
    sgd = _sgd_from_args(args, cfg, seed, default_lr=0.0005, default_epochs=80,
                         default_batch=64)
    snippets = _resolve(args, cfg, "snippets")
    model, result = train_fusion(branches, train, val, strategy, fcfg, sgd,
                                 snippets=snippets, log=print)
    save_checkpoint(out / f"fusion_{strategy}.ckpt",
                    fusion_checkpoint_tensors(model, sgd.epochs - 1))
    _write(out / f"train_log_fusion_{strategy}.csv", _history_csv(result.history))
    summary = (f"strategy={strategy} best_epoch={result.best_epoch} "
               f"best_val_top1={result.best_val_top1:.4f}\n")
    _write(out / "summary.txt", summary)
    print(summary, end="")
    return 0


def cmd_evaluate(args, cfg) -> int:
    out = _out_dir(args, cfg)
    data_dir = Path(_resolve(args, cfg, "data") or _fail("--data is required"))
    if args.ckpt is None:
        raise CliError("--ckpt is required")
    val = _load_split(data_dir, "val")
    snippets = _resolve(args, cfg, "snippets")
    kind, model, info = load_any_checkpoint(args.ckpt)
    if kind == "branch":
        modality = _resolve(args, cfg, "modality") or info["modality"]
        x, labels = stack_features(val, modality, snippets)
        output = model.eval().forward(x)
        logits = {head: output.logits(head) for head in HEADS}
    else:
        inputs = {}
        labels = None
        for mod in MODALITIES:
            inputs[mod], labels = stack_features(val, mod, snippets)
        probs = model.eval().predict_proba(inputs)
        logits = probs  # distributions rank identically to logits
    report = evaluate_predictions(logits, labels)
    _write(out / "metrics.csv", report_csv(report))
    table = format_table(report)
    _write(out / "metrics.txt", table + "\n")
    print(table)
    return 0


def cmd_gradcheck(args, cfg) -> int:
    dtype = _resolve(args, cfg, "dtype", "f64")
    if dtype != "f64":
        raise CliError("gradient checking runs in f64; pass --dtype f64")
    seed = _resolve_seed(args, cfg)
    rows = run_standard_suite(seed)
    lines = ["layer,configs,max_rel_error,pass"]
    ok = True
    print(f"{'layer':<18}{'configs':>8}{'max rel err':>14}  status")
    for row in rows:
        passed = row.passed()
        ok &= passed
        print(f"{row.name:<18}{row.configs:>8}{row.max_rel_error:>14.3e}  "
              f"{'ok' if passed else 'FAIL'}")
        lines.append(f"{row.name},{row.configs},{row.max_rel_error:.6e},{int(passed)}")
    if getattr(args, "out", None) or cfg.get("out"):
        _write(_out_dir(args, cfg) / "gradcheck.csv", "\n".join(lines) + "\n")
    return 0 if ok else 3


def cmd_bench(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    channels = _resolve(args, cfg, "channels", 1024)
    snippets = _resolve(args, cfg, "snippets", 21)
    batch = _resolve(args, cfg, "batch", 4)
    reps = _resolve(args, cfg, "reps", 30)
    warmup = _resolve(args, cfg, "warmup", 5)
    dtype = _resolve(args, cfg, "dtype", "f32")
    rng = Rng(seed)
    bcfg = BranchConfig(input_dim=channels, num_actions=100, num_verbs=20, num_nouns=30,
                        channels=channels, input_dropout=0.0, block_dropout=0.0,
                        head_dropout=0.0, dtype=dtype).for_snippets(snippets)
    branch = Branch(bcfg, rng)
    lcfg = LstmConfig(input_dim=channels, hidden=channels, num_actions=100,
                      encoder_steps=bcfg.required_length if snippets is None else snippets,
                      dtype=dtype)
    baseline = LstmEncoderDecoder(lcfg, rng)
    report = bench_models(branch, baseline, batch, reps, warmup, seed)
    _write(out / "bench.csv", report.csv())
    _write(out / "bench_summary.txt", report.summary())
    print(report.summary(), end="")
    return 0


def cmd_ablate_obslen(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    data_dir = Path(_resolve(args, cfg, "data") or _fail("--data is required"))
    train = _load_split(data_dir, "train")
    val = _load_split(data_dir, "val")
    modality = _resolve(args, cfg, "modality", "rgb")
    windows = (3, 7, 13, 21)
    max_n = train[0].num_snippets
    rows = ["snippets,obs_seconds,val_top1_action"]
    results = {}
    for n in windows:
        if n > max_n:
            continue
        base = _desk_branch_config(args, cfg, train + val, modality).for_snippets(n)
        sgd = _sgd_from_args(args, cfg, seed, default_lr=0.02, default_epochs=25,
                             default_batch=32)
        _, result = train_branch(train, val, modality, base, sgd, snippets=n)
        results[n] = result.best_val_top1
        rows.append(f"{n},{n * 0.25:.2f},{result.best_val_top1:.6f}")
        print(f"snippets={n:>2} obs={n * 0.25:.2f}s val_top1={result.best_val_top1:.4f}")
    _write(out / "obslen.csv", "\n".join(rows) + "\n")
    _write(out / "summary.txt",
           "".join(f"N={n}: {acc:.4f}\n" for n, acc in results.items()))
    return 0


def _desk_branch_config(args, cfg, samples, modality: str) -> BranchConfig:
    """Desk-scale defaults for the ablation studies (overridable)."""
    counts = _class_counts(samples)
    return BranchConfig(
        input_dim=samples[0].features[modality].shape[1],
        num_actions=counts["action"], num_verbs=counts["verb"], num_nouns=counts["noun"],
        channels=_resolve(args, cfg, "channels", 64),
        kernel=_resolve(args, cfg, "kernel", 3),
        input_dropout=_resolve(args, cfg, "input_dropout", 0.1),
        block_dropout=_resolve(args, cfg, "block_dropout", 0.1),
        head_dropout=_resolve(args, cfg, "head_dropout", 0.1),
        dtype=_resolve(args, cfg, "dtype", "f32"),
    )


def cmd_ablate_fusion(args, cfg) -> int:
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args, cfg)
    data_dir = Path(_resolve(args, cfg, "data") or _fail("--data is required"))
    train = _load_split(data_dir, "train")
    val = _load_split(data_dir, "val")
    sgd = _sgd_from_args(args, cfg, seed, default_lr=0.02, default_epochs=15,
                         default_batch=32)
    branches = {}
    rows = ["model,val_top1_action"]
    for mod in MODALITIES:
        bcfg = _desk_branch_config(args, cfg, train + val, mod)
        branch, result = train_branch(train, val, mod, bcfg, sgd)
        branches[mod] = branch
        save_checkpoint(out / f"branch_{mod}.ckpt",
                        branch_checkpoint_tensors(branch, mod, sgd.epochs - 1))
        rows.append(f"{mod},{result.final_val_top1:.6f}")
        print(f"branch {mod}: val_top1={result.final_val_top1:.4f}")
    counts = _class_counts(train + val)
    for strategy in STRATEGIES:
        fcfg = FusionConfig(
            channels=branches["rgb"].config.channels,
            num_actions=counts["action"], num_verbs=counts["verb"], num_nouns=counts["noun"],
            strategy=strategy,
            embed_dim=_resolve(args, cfg, "embed_dim", 64),
            head_dropout=_resolve(args, cfg, "fusion_dropout", 0.1),
        )
        fsgd = _sgd_from_args(args, cfg, seed, default_lr=0.02, default_epochs=15,
                              default_batch=32)
        _, result = train_fusion(branches, train, val, strategy, fcfg, fsgd)
        score = result.best_val_top1 if strategy != "late" else result.final_val_top1
        rows.append(f"{strategy},{score:.6f}")
        print(f"fusion {strategy}: val_top1={score:.4f}")
    _write(out / "fusion_ablation.csv", "\n".join(rows) + "\n")
    _write(out / "summary.txt", "\n".join(rows[1:]) + "\n")
    return 0


# -- parser ---------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--data", help="dataset directory (train/ and val/ splits)")
    p.add_argument("--out", help="output directory for artifacts")
    p.add_argument("--seed", type=int, help="RNG seed (fallback: TCNA_SEED, then 0)")
    p.add_argument("--modality", choices=MODALITIES)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dtype", choices=("f32", "f64"))
    p.add_argument("--snippets", type=int, help="observed window length in snippets")
    p.add_argument("--channels", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcna",
        description="Temporal-convolutional action anticipation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic multi-modal dataset")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train-branch", help="train one uni-modal branch")
    _add_common(p)
    p.set_defaults(func=cmd_train_branch)

    p = sub.add_parser("train-fusion", help="train fusion layers over frozen branches")
    _add_common(p)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    for mod in MODALITIES:
        p.add_argument(f"--{mod}-ckpt", dest=f"{mod}_ckpt",
                       help=f"checkpoint of the pre-trained {mod} branch")
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the val split")
    _add_common(p)
    p.add_argument("--ckpt", help="branch or fusion checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="speed study: conv branch vs recurrent baseline")
    _add_common(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate-obslen", help="observation-length study")
    _add_common(p)
    p.set_defaults(func=cmd_ablate_obslen)

    p = sub.add_parser("ablate-fusion", help="uni-modal vs fusion-strategy study")
    _add_common(p)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.set_defaults(func=cmd_ablate_fusion)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except (CliError, TensorError, DatasetError, CheckpointError, NonFiniteError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
