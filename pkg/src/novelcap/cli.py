"""Command-line interface.

Commands: gen-data, train, caption, eval, sweep-ndet. Every command is
deterministic given the config seed; all errors exit nonzero with a
message naming the failing module.
"""

import argparse
import dataclasses
import os
import sys
from collections import Counter

from . import checkpoint as ckpt
from . import data as datamod
from .config import RunConfig, apply_overrides, load_config, validate_config
from .decoder import CaptionModel
from .errors import CheckpointError, CoverageError, DomainError, NovelcapError
from .evaluation import average_f1_over, evaluate_split, format_report_lines, write_report
from .pipeline import make_captioner, train_model
from .vocabulary import Vocabulary, build_vocabulary, intersect_detectable


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "n_det": getattr(args, "n_det", None),
                 "checkpoint": getattr(args, "checkpoint", None)}
    apply_overrides(cfg, overrides)
    return validate_config(cfg)


def _load_world(args, cfg) -> datamod.SyntheticWorld:
    if getattr(args, "world_config", None):
        return datamod.load_world_config(args.world_config)
    if cfg.world:
        return datamod.load_world_config(cfg.world)
    return datamod.make_world(seed=cfg.seed)


def _load_common(cfg):
    records = datamod.load_dataset(cfg.dataset)
    vocab = Vocabulary.load(cfg.vocab)
    manifest = datamod.load_manifest(cfg.manifest)
    split = datamod.split_from_manifest(records, manifest)
    det_map = intersect_detectable(vocab, manifest["class_names"])
    return records, vocab, manifest, split, det_map


def _load_model(cfg, vocab) -> CaptionModel:
    params, _ = ckpt.load_checkpoint(cfg.checkpoint)
    model = CaptionModel.from_params(params)
    mismatches = [(name, got, want) for name, got, want in (
        ("hidden_size", model.hidden_size, cfg.hidden_size),
        ("embed_size", model.embed_size, cfg.embed_size),
        ("image_dim", model.image_dim, cfg.image_dim),
        ("key_dim", model.key_dim, cfg.key_dim),
        ("vocab_size", model.vocab_size, vocab.size),
    ) if got != want]
    if mismatches:
        detail = ", ".join(f"{n}: checkpoint {g} vs config {w}" for n, g, w in mismatches)
        raise CheckpointError(f"cli: checkpoint incompatible with config dims ({detail})")
    return model


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    world = _load_world(args, cfg)
    held_out = tuple(args.held_out.split(",")) if args.held_out else datamod.DEFAULT_HELD_OUT
    for w in held_out:
        if w not in world.names:
            raise CoverageError(f"cli: held-out word {w!r} is not in the object inventory")
    lo, hi = (int(x) for x in args.objects_per_image.split(","))
    ratios = tuple(float(x) for x in args.ratios.split(","))
    records = datamod.generate_synthetic(world, args.n_images, (lo, hi))
    split = datamod.build_heldout_split(records, held_out, ratios, seed=cfg.seed)

    out_dir = args.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        cfg.dataset = os.path.join(out_dir, "dataset.jsonl")
        cfg.vocab = os.path.join(out_dir, "vocab.txt")
        cfg.manifest = os.path.join(out_dir, "split.json")
    for path in (cfg.dataset, cfg.vocab, cfg.manifest):
        _ensure_parent(path)
    vocab = build_vocabulary([ref for rec in split.train for ref in rec.references],
                             min_count=cfg.min_count)
    datamod.save_dataset(records, cfg.dataset)
    vocab.save(cfg.vocab)
    datamod.save_manifest(split, world.names, cfg.manifest)

    counts = Counter()
    for rec in records:
        for name in world.names:
            if datamod.record_mentions(rec, [name]):
                counts[name] += 1
    print(f"dataset={cfg.dataset} records={len(records)} "
          f"train={len(split.train)} val={len(split.val)} test={len(split.test)}")
    print(f"vocab={cfg.vocab} size={vocab.size}")
    print(f"manifest={cfg.manifest} held_out={','.join(held_out)}")
    for name in world.names:
        marker = " (held out)" if name in held_out else ""
        print(f"  {name}: {counts[name]} images{marker}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    _, vocab, _, split, det_map = _load_common(cfg)
    _ensure_parent(cfg.checkpoint)
    _ensure_parent(cfg.train_log)
    with open(cfg.train_log, "w", encoding="utf-8") as logf:
        def log_fn(line):
            print(line)
            logf.write(line + "\n")

        result = train_model(split, vocab, det_map, cfg, mode=cfg.train_mode, log_fn=log_fn)
        best = f"best_epoch={result.best_epoch} best_val_f1={result.best_val_f1!r}"
        log_fn(best)
    ckpt.save_checkpoint(cfg.checkpoint, result.best_params, vocab_ref=cfg.vocab)
    print(f"checkpoint={cfg.checkpoint}")
    return 0


def cmd_caption(args) -> int:
    cfg = _build_config(args)
    records, vocab, _, _, det_map = _load_common(cfg)
    model = _load_model(cfg, vocab)
    by_id = {r.image_id: r for r in records}
    if args.image_id not in by_id:
        raise CoverageError(f"cli: image id {args.image_id!r} not found in {cfg.dataset}")
    captioner = make_captioner(model, vocab, det_map, cfg, mode=args.mode)
    caption = captioner(by_id[args.image_id])
    print(" ".join(caption.tokens))
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    _, vocab, _, split, det_map = _load_common(cfg)
    model = _load_model(cfg, vocab)
    split_hash = datamod.manifest_hash(cfg.manifest)
    manifest = datamod.load_manifest(cfg.manifest)
    known = manifest.get("known_words", [])
    captioner = make_captioner(model, vocab, det_map, cfg, mode=args.mode)
    report = evaluate_split(split, captioner, known_words=known, mode=args.mode,
                            split_hash=split_hash)
    for line in format_report_lines(report):
        print(line)
    out = args.out or cfg.report
    _ensure_parent(out)
    write_report(report, out)
    return 0


def cmd_sweep_ndet(args) -> int:
    cfg = _build_config(args)
    _, vocab, _, split, det_map = _load_common(cfg)
    model = _load_model(cfg, vocab)
    values = [int(x) for x in args.values.split(",")]
    if any(v < 1 for v in values):
        raise DomainError("cli: sweep values must all be >= 1")
    lines = ["n_det\taverage_f1"]
    for n_det in values:
        sweep_cfg = dataclasses.replace(cfg, n_det=n_det)
        captioner = make_captioner(model, vocab, det_map, sweep_cfg, mode="dnoc")
        f1 = average_f1_over(split.test, captioner, split.held_out_words)
        lines.append(f"{n_det}\t{f1!r}")
    for line in lines:
        print(line)
    if args.out:
        _ensure_parent(args.out)
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="novelcap",
                                     description="placeholder-based novel object captioning")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--config", help="key-value config file; flags override it")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--n-det", type=int, default=None, dest="n_det")
        p.add_argument("--out", default=None)
        if checkpoint:
            p.add_argument("--checkpoint", default=None)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset, vocabulary, and split")
    common(p, checkpoint=False)
    p.add_argument("--world-config", help="world definition file (plain key-value)")
    p.add_argument("--n-images", type=int, default=1300)
    p.add_argument("--held-out", help="comma-separated held-out object words")
    p.add_argument("--objects-per-image", default="1,2")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and save the best-validation checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="caption a single dataset record")
    common(p)
    p.add_argument("--image-id", required=True)
    p.add_argument("--mode", choices=("dnoc", "no-memory", "no-placeholder"), default="dnoc")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="score the test split and write a report")
    common(p)
    p.add_argument("--mode", choices=("dnoc", "no-memory", "no-placeholder"), default="dnoc")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-ndet", help="evaluate one checkpoint across memory capacities")
    common(p)
    p.add_argument("--values", default="1,2,3,4,5,6,7,8,9,10")
    p.set_defaults(func=cmd_sweep_ndet)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NovelcapError as e:
        print(f"novelcap: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"novelcap: io: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
