"""Command-line front door.

Subcommands: gen-data, train, eval, ablate, sweep-layers, score. Every run
that takes a config echoes the fully resolved JSON beside its outputs, so a
result directory is self-describing. Usage errors exit 2 (argparse); domain
errors (bad config, corrupt file, failed validation) exit 1.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import echo_config, load_config, resolve
from .corpus import load_corpus, save_corpus
from .errors import GeofuseError
from .harness import SCHEME_VARIANTS, VARIANTS, ablate, build_corpus, layer_sweep, prepare_data
from .model import load_model, save_checkpoint
from .scoring import METRICS, score_file, write_csv
from .training import evaluate, split_indices

HISTORY_HEADER = ("epoch", "stage", "train_loss", "holdout_acc", "holdout_ce")


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", default=None, help="experiment JSON; defaults apply where absent")
    p.add_argument("--seed", type=int, default=None, help="override the subcommand's root seed")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a corpus and write it with its manifest")
    _add_common(p)

    p = sub.add_parser("train", help="train one model and write checkpoint + history")
    _add_common(p)
    p.add_argument("--data", default=None, help="corpus binary; omitted -> generate from config")
    p.add_argument("--variant", default=None, choices=sorted(VARIANTS), help="named experiment row (default: config scheme block)")

    p = sub.add_parser("eval", help="evaluate a checkpoint against a corpus")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="corpus binary")

    p = sub.add_parser("ablate", help="train the integration-scheme table")
    _add_common(p)
    p.add_argument("--data", default=None, help="corpus binary; omitted -> generate from config")
    p.add_argument("--variants", default=",".join(SCHEME_VARIANTS), help="comma-separated variant names")
    p.add_argument("--seeds", type=int, default=3, help="seeds per row (median reported)")

    p = sub.add_parser("sweep-layers", help="train per-layer injection rows plus baseline and full")
    _add_common(p)
    p.add_argument("--data", default=None, help="corpus binary; omitted -> generate from config")
    p.add_argument("--seeds", type=int, default=3, help="seeds per row (median reported)")

    p = sub.add_parser("score", help="apply a composite metric to a sub-score CSV")
    p.add_argument("--metric", required=True, choices=sorted(METRICS))
    p.add_argument("--input", required=True, help="CSV with one row per system/scenario")
    p.add_argument("--out", default=None, help="directory for scores.csv (default: print)")

    return parser


def _load_or_build(config: dict, args):
    """(possibly rewritten config, resolved, prepared data) honoring --data."""
    if getattr(args, "data", None):
        samples, _, _, manifest = load_corpus(args.data)
        config = dict(config)
        config["scene"] = manifest["scene"]
        config["rig"] = manifest["rig"]
        config["corpus"] = {"samples": manifest["n_samples"], "seed": manifest["root_seed"]}
        resolved = resolve(config)
    else:
        resolved = resolve(config)
        samples = build_corpus(resolved)
    return config, resolved, prepare_data(resolved, samples)


def _cmd_gen_data(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["corpus"]["seed"] = args.seed
    resolved = resolve(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = build_corpus(resolved)
    save_corpus(out / "corpus.bin", samples, resolved.scene, resolved.rig, resolved.corpus_seed)
    echo_config(config, out)
    print(f"wrote {len(samples)} samples to {out / 'corpus.bin'}")
    return 0


def _train_config(args) -> dict:
    config = load_config(args.config)
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    return config


def _cmd_train(args) -> int:
    from .harness import run_training
    from .model import SchemeConfig

    config = _train_config(args)
    if args.variant is not None:
        scheme_over, train_over = VARIANTS[args.variant]
        config["scheme"] = {**config["scheme"], **scheme_over}
        config["train"] = {**config["train"], **train_over}
    config, resolved, data = _load_or_build(config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcome = run_training(resolved, data, SchemeConfig.from_dict(config["scheme"]), resolved.train)
    save_checkpoint(out / "checkpoint.bin", outcome.model)
    write_csv(out / "history.csv", HISTORY_HEADER, [[r[k] for k in HISTORY_HEADER] for r in outcome.history])
    echo_config(config, out)
    print(f"holdout accuracy {outcome.accuracy:.4f}, mean CE {outcome.mean_ce:.4f}; outputs in {out}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config)
    config, resolved, data = _load_or_build(config, args)
    model = load_model(args.checkpoint)
    if model.layout != data.layout:
        raise GeofuseError(
            f"checkpoint token layout {model.layout} does not match the corpus layout {data.layout}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_idx, hold_idx = split_indices(len(data), resolved.train.holdout_frac)
    rows = []
    for name, idx in (("train", train_idx), ("holdout", hold_idx)):
        if idx.size:
            acc, ce = evaluate(model, data, idx)
            rows.append([name, idx.size, acc, ce])
    write_csv(out / "results.csv", ("split", "samples", "accuracy", "mean_ce"), rows)
    echo_config(config, out)
    for name, n, acc, ce in rows:
        print(f"{name}: accuracy {acc:.4f}, mean CE {ce:.4f} over {n} samples")
    return 0


def _cmd_ablate(args) -> int:
    config = _train_config(args)
    config, resolved, data = _load_or_build(config, args)
    variants = [v for v in (s.strip() for s in args.variants.split(",")) if v]
    _, rows = ablate(resolved, data, variants, n_seeds=args.seeds, out_dir=args.out)
    echo_config(config, args.out)
    for row in rows:
        print(f"{row[0]}: median accuracy {row[2]:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _train_config(args)
    config, resolved, data = _load_or_build(config, args)
    _, rows = layer_sweep(resolved, data, n_seeds=args.seeds, out_dir=args.out)
    echo_config(config, args.out)
    for row in rows:
        print(f"{row[0]}: median accuracy {row[2]:.4f}")
    return 0


def _cmd_score(args) -> int:
    out_path = None
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        out_path = out / "scores.csv"
    _, _, values = score_file(args.metric, args.input, out_path)
    if out_path is None:
        for v in values:
            print(f"{v:.17g}")
    else:
        print(f"wrote {len(values)} scores to {out_path}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "sweep-layers": _cmd_sweep,
    "score": _cmd_score,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except GeofuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
