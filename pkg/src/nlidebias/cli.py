"""Command-line entry point.

Subcommands cover the whole pipeline: ``gen`` (synthetic biased corpus),
``label`` (token-label inspection dump), ``train``, ``eval``, ``swap-eval``,
``attn-report``, ``sub-report`` and ``grad-check``. Every run drops a
manifest (config echo, seed, version) beside its outputs; all randomness is
governed by the config seed, so identical invocations produce byte-identical
primary artifacts. Report commands write delimited output plus a rendered
PNG figure of the same data.

Exit codes: 0 success, 2 configuration problems, 1 downstream failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, evaluator, plots, synthetic
from .corpus import CorpusError, Vocabulary, load_jsonl, prepare_dataset
from .synthetic import SyntheticSpec, SyntheticSpecError
from .trainer import ConfigError, TrainConfig, Trainer, _coerce, load_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlidebias",
        description="Train and analyze small NLI encoders with explanation-derived supervision.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("gen", help="generate a synthetic biased corpus")
    common(p, config_required=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="dump per-record token labels for inspection")
    common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model per the config schedule")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and token-F1 report for a checkpoint")
    common(p)
    p.add_argument("--split", choices=("train", "dev", "ood"), default="dev")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("swap-eval", help="synonym-swap robustness curves")
    common(p)
    p.add_argument("--split", choices=("train", "dev", "ood"), default="dev")
    p.add_argument("--lexicon", required=True, help="TSV synonym lexicon (word TAB syn1,syn2,...)")
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--category", choices=("bias", "keyword-intersect", "keyword-distinct", "all"),
                   default="all")
    p.set_defaults(func=cmd_swap_eval)

    p = sub.add_parser("attn-report", help="[CLS] attention values and keyword/bias masses")
    common(p)
    p.add_argument("--split", choices=("train", "dev", "ood"), default="dev")
    p.add_argument("--blocks", default=None, help="comma-separated block indices (default: supervised)")
    p.add_argument("--limit", type=int, default=0, help="cap the number of reported examples (0 = all)")
    p.set_defaults(func=cmd_attn_report)

    p = sub.add_parser("sub-report", help="sub-inference predictions and consistency")
    common(p)
    p.add_argument("--split", choices=("train", "dev", "ood"), default="dev")
    p.set_defaults(func=cmd_sub_report)

    p = sub.add_parser("grad-check", help="finite-difference check of every loss term")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SyntheticSpecError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # downstream failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


# -- helpers -----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config)
    if args.overrides:
        cfg = cfg.with_overrides(pair.split("=", 1) for pair in args.overrides)
    if args.seed is not None:
        cfg = cfg.with_overrides([("seed", str(args.seed))])
    return cfg


def _write_manifest(out: Path, command: str, config: dict, seed, overrides) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "overrides": list(overrides),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _checkpoint_path(cfg: TrainConfig, out: Path) -> Path:
    path = Path(cfg.checkpoint_path)
    return path if path.is_absolute() else out / path


def _split_path(cfg: TrainConfig, split: str) -> str:
    path = {"train": cfg.train_path, "dev": cfg.dev_path, "ood": cfg.ood_path}[split]
    if not path:
        raise ConfigError(f"config has no {split}_path")
    return path


def _load_split(cfg: TrainConfig, split: str, vocab: Vocabulary, allow_unlabeled: bool):
    records = load_jsonl(_split_path(cfg, split), strict=cfg.strict_data)
    return prepare_dataset(records, vocab, cfg.max_len, stopwords=cfg.stopwords,
                           allow_unlabeled=allow_unlabeled)


def _json_dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = SyntheticSpec.from_json(args.config) if args.config else SyntheticSpec()
    if args.overrides:
        obj = spec.to_dict()
        types = {f.name: f.type for f in dataclasses.fields(SyntheticSpec)}
        for pair in args.overrides:
            key, value = pair.split("=", 1)
            if key not in obj:
                raise SyntheticSpecError(f"unknown spec key {key!r}")
            obj[key] = _coerce(value, types[key], key)
        spec = SyntheticSpec.from_dict(obj)
    if args.seed is not None:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = _out_dir(args)
    result = synthetic.generate_synthetic(spec, out)
    _json_dump(result, out / "generation_stats.json")
    _write_manifest(out, "gen", spec.to_dict(), spec.seed, args.overrides)
    for name, corr in result["correlation"].items():
        print(f"{name}: marker/label correlation {corr:+.4f}")
    return 0


def cmd_label(args) -> int:
    cfg = _load_train_config(args)
    records = load_jsonl(_split_path(cfg, "train"), strict=cfg.strict_data)
    vocab = Vocabulary.load(cfg.vocab_path) if cfg.vocab_path else Vocabulary.build(records)
    sequences = prepare_dataset(records, vocab, cfg.max_len, stopwords=cfg.stopwords,
                                allow_unlabeled=True)
    dump = [
        {
            "tokens": seq.words,
            "labels": seq.labels,
            "targets": seq.targets.tolist(),
            "gold": seq.record.label if seq.record else None,
            "flagged": seq.flagged,
        }
        for seq in sequences
    ]
    out = Path(args.out)
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        _json_dump(dump, out)
        _write_manifest(out.parent, "label", cfg.to_dict(), cfg.seed, args.overrides)
        print(f"wrote {len(dump)} labeled records to {out}")
    else:
        out = _out_dir(args)
        _json_dump(dump, out / "labels.json")
        _write_manifest(out, "label", cfg.to_dict(), cfg.seed, args.overrides)
        print(f"wrote {len(dump)} labeled records to {out / 'labels.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args)
    records = load_jsonl(_split_path(cfg, "train"), strict=cfg.strict_data)
    vocab = Vocabulary.load(cfg.vocab_path) if cfg.vocab_path else Vocabulary.build(records)
    if not cfg.vocab_path:
        vocab.save(out / "vocab.txt")
    sequences = prepare_dataset(records, vocab, cfg.max_len, stopwords=cfg.stopwords)
    ckpt_path = _checkpoint_path(cfg, out)
    cfg = cfg.with_overrides([("checkpoint_path", str(ckpt_path))])
    trainer = Trainer(cfg, sequences, vocab)
    metrics_path = out / "metrics.jsonl"
    final = trainer.train(metrics_path=metrics_path)
    if trainer.step_count:
        plots.plot_loss_curves(metrics_path, out / "loss_curves.png")
    _write_manifest(out, "train", cfg.to_dict(), cfg.seed, args.overrides)
    print(f"trained {trainer.step_count} steps; checkpoint at {final}")
    return 0


def _load_model(cfg: TrainConfig, out: Path):
    ckpt = load_checkpoint(_checkpoint_path(cfg, out))
    return ckpt.encoder, ckpt.vocab


def cmd_eval(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args)
    encoder, vocab = _load_model(cfg, out)
    sequences = _load_split(cfg, args.split, vocab, allow_unlabeled=True)
    report = evaluator.evaluate(encoder, sequences)
    payload = {"split": args.split, **report.to_dict()}
    labeled = [s for s in sequences if not s.flagged]
    if labeled:
        f1 = evaluator.token_f1(encoder, labeled)
        payload["token_f1"] = f1.to_dict()
        evaluator.write_token_f1_csv(f1, out / "token_f1.csv")
    _json_dump(payload, out / "eval_report.json")
    evaluator.write_eval_csv(report, out / "eval_report.csv")
    plots.plot_confusion(report.confusion, out / "confusion.png")
    _write_manifest(out, "eval", cfg.to_dict(), cfg.seed, args.overrides)
    print(f"{args.split} accuracy: {report.accuracy:.4f} ({report.correct}/{report.total})")
    return 0


def cmd_swap_eval(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args)
    encoder, vocab = _load_model(cfg, out)
    records = load_jsonl(_split_path(cfg, args.split), strict=cfg.strict_data)
    lexicon = evaluator.load_lexicon(args.lexicon)
    categories = sorted(evaluator.CATEGORIES) if args.category == "all" else [args.category]
    curves = {
        cat: evaluator.swap_eval(encoder, records, vocab, lexicon, cat,
                                 rounds=args.rounds, seed=cfg.seed, stopwords=cfg.stopwords)
        for cat in categories
    }
    evaluator.write_swap_csv(curves, out / "swap_curves.csv")
    plots.plot_swap_curves(curves, out / "swap_curves.png")
    _write_manifest(out, "swap-eval", cfg.to_dict(), cfg.seed, args.overrides)
    for cat in categories:
        print(f"{cat}: " + " ".join(f"{a:.3f}" for a in curves[cat]))
    return 0


def cmd_attn_report(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args)
    encoder, vocab = _load_model(cfg, out)
    sequences = _load_split(cfg, args.split, vocab, allow_unlabeled=True)
    blocks = ([int(b) for b in args.blocks.split(",")] if args.blocks
              else list(cfg.supervised_blocks()))
    limit = args.limit if args.limit > 0 else None
    report = evaluator.attention_report(encoder, sequences, blocks, max_examples=limit)
    _json_dump(report, out / "attention.json")
    plots.plot_attention_heatmap(report, out / "attention_heatmap.png")
    _write_manifest(out, "attn-report", cfg.to_dict(), cfg.seed, args.overrides)
    means = report["summary"]["mean_keyword_mass"]
    print("mean keyword mass: " + " ".join(f"block {h}: {means[str(h)]:.3f}" for h in blocks))
    return 0


def cmd_sub_report(args) -> int:
    cfg = _load_train_config(args)
    out = _out_dir(args)
    encoder, vocab = _load_model(cfg, out)
    sequences = _load_split(cfg, args.split, vocab, allow_unlabeled=True)
    top = max(cfg.supervised_blocks())
    report = evaluator.sub_inference_report(encoder, sequences, top)
    _json_dump(report, out / "sub_inference.json")
    _write_manifest(out, "sub-report", cfg.to_dict(), cfg.seed, args.overrides)
    print(f"consistency rate at block {top}: {report['consistency_rate']:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_gradient_suite

    results = run_gradient_suite(seed=args.seed, step=args.step)
    failed = False
    for name, err in results.items():
        status = "ok" if err <= args.tol else "FAIL"
        print(f"{name:6s} max relative error {err:.3e}  [{status}]")
        failed = failed or err > args.tol
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
