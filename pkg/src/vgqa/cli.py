"""Command-line entry point binding all modules.

Subcommands: generate | train | eval | ablate | trace | gradcheck.
Every command is reproducible from (config file, seed) alone; exit codes
are 0 ok, 2 config error, 3 data error, 4 divergence.
"""

import argparse
import json
import os
import sys

import torch

from . import report, tracing
from .config import load_run_config
from .data import load_dataset
from .decoder import ce_loss, hinge_loss
from .errors import ConfigError, DataError, DivergenceError, VgqaError
from .model import FeatureDims, VideoQAModel
from .reference import fd_gradient_check
from .synth import build_dataset, default_world, load_world
from .training import (align_config, evaluate_accuracy, load_checkpoint,
                       make_model, run_ablation_suite, save_checkpoint,
                       train_two_stage)


def _load_config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg = load_run_config(args.config, overrides)
    if getattr(args, "out", None):
        cfg.data.out_dir = args.out
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return cfg


def cmd_generate(args):
    cfg = _load_config(args)
    out_dir = args.out or cfg.data.dataset_dir
    if not out_dir:
        raise ConfigError("generate needs data.dataset_dir or --out")
    if cfg.data.world_path:
        world = load_world(cfg.data.world_path)
    else:
        world = default_world(noise_sigma=cfg.data.noise_sigma)
    sizes = {"train": cfg.data.train_episodes, "val": cfg.data.val_episodes,
             "test": cfg.data.test_episodes}
    ds = build_dataset(world, cfg.hierarchy, sizes, cfg.train.seed, out_dir,
                       mode=cfg.hierarchy.decoder_mode)
    print(f"wrote {ds.episode_count} episodes, "
          + ", ".join(f"{k}={len(v)} QAs" for k, v in ds.splits.items())
          + f" -> {out_dir}")


def _load_data(cfg):
    if not cfg.data.dataset_dir:
        raise ConfigError("data.dataset_dir is required")
    data = load_dataset(cfg.data.dataset_dir, cfg.hierarchy)
    align_config(cfg.hierarchy, data)
    return data


def cmd_train(args):
    cfg = _load_config(args)
    data = _load_data(cfg)
    out_dir = cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    model = make_model(cfg.hierarchy, data, cfg.data.embed_dim,
                       float64=cfg.train.float64, seed=cfg.train.seed)
    _, history = train_two_stage(model, data, cfg.train, out_dir=out_dir)
    best_acc, per_tag = evaluate_accuracy(model, data, "val")
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.npz"),
                    extra={"val_acc": best_acc, "seed": cfg.train.seed})
    report.plot_history(history, os.path.join(out_dir, "history.png"))
    with open(os.path.join(out_dir, "train_results.json"), "w") as fh:
        json.dump({"val_acc": best_acc, "per_tag": per_tag}, fh, sort_keys=True)
    print(f"best val accuracy {best_acc:.4f}; checkpoint -> {out_dir}/checkpoint.npz")


def _print_breakdown(overall, per_tag):
    print(f"overall accuracy: {overall:.4f}")
    for tag, acc in per_tag.items():
        print(f"  {tag:<10s} {acc:.4f}")


def cmd_eval(args):
    cfg = _load_config(args)
    model, extra = load_checkpoint(args.checkpoint)
    data = load_dataset(cfg.data.dataset_dir, model.cfg)
    split = args.split
    overall, per_tag = evaluate_accuracy(model, data, split)
    _print_breakdown(overall, per_tag)
    if extra.get("val_acc") is not None and split == "val":
        print(f"recorded val accuracy at save time: {extra['val_acc']:.4f}")
    out_dir = cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"eval_{split}.json"), "w") as fh:
        json.dump({"split": split, "overall": overall, "per_tag": per_tag}, fh, sort_keys=True)


def cmd_ablate(args):
    cfg = _load_config(args)
    data = _load_data(cfg)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    results = run_ablation_suite(data, cfg.hierarchy, cfg.train, seeds,
                                 embed_dim=cfg.data.embed_dim)
    out_dir = cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ablation.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    report.write_ablation_csv(results, os.path.join(out_dir, "ablation.csv"))
    report.plot_ablation(results, os.path.join(out_dir, "ablation.png"))
    for row in results:
        print(f"{row['variant']:<32s} median acc {row['median_accuracy']:.4f}")


def cmd_trace(args):
    cfg = _load_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(cfg.data.dataset_dir, model.cfg)
    wanted = set(args.samples.split(","))
    out_dir = args.out or cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for split in data.splits.values():
        for i, sample in enumerate(split.samples):
            if sample.sample_id in wanted:
                rec = tracing.trace_sample(model, data, split, i)
                records.append(rec)
                tracing.render_trace(rec, out_dir)
                wanted.discard(sample.sample_id)
    if wanted:
        raise DataError(f"sample ids not found in any split: {sorted(wanted)}")
    tracing.export_traces(records, os.path.join(out_dir, "traces.jsonl"))
    print(f"traced {len(records)} samples -> {out_dir}")


def cmd_gradcheck(args):
    cfg = _load_config(args)
    hier = cfg.hierarchy
    torch.manual_seed(cfg.train.seed)
    dims = FeatureDims(d_m=6, d_a=6, d_r=6, d_e=8, vocab_size=24)
    model = VideoQAModel(hier, dims).double()
    gen = torch.Generator().manual_seed(cfg.train.seed)
    motion = torch.randn(1, hier.K, dims.d_m, generator=gen, dtype=torch.float64)
    appearance = torch.randn(1, hier.T, dims.d_a, generator=gen, dtype=torch.float64)
    objects = torch.randn(1, hier.T, hier.N, dims.d_r + 8, generator=gen, dtype=torch.float64)

    if hier.decoder_mode == "mc":
        queries = torch.randint(1, dims.vocab_size, (1, hier.num_choices, hier.M), generator=gen)
        lengths = torch.full((1, hier.num_choices), hier.M, dtype=torch.long)

        def loss_fn():
            scores, _, _ = model.forward_mc(motion, appearance, objects, queries, lengths)
            return hinge_loss(scores, 0)
    else:
        tokens = torch.randint(1, dims.vocab_size, (1, hier.M), generator=gen)
        lengths = torch.full((1,), hier.M, dtype=torch.long)

        def loss_fn():
            return ce_loss(model.forward_oe(motion, appearance, objects, tokens, lengths), 0)

    rep = fd_gradient_check(loss_fn, model.named_parameters())
    out_dir = cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "gradcheck.json"), "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
    worst = max(rep.values(), key=lambda r: r["max_rel_err"])
    print(f"max relative error over all groups: {worst['max_rel_err']:.3e}")
    for name, row in rep.items():
        print(f"  {name:<48s} max_rel_err {row['max_rel_err']:.3e} "
              f"skipped {row['skipped_kinks']}/{row['count']}")


def build_parser():
    parser = argparse.ArgumentParser(prog="vgqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("generate", help="build a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="two-stage training")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    common(p)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="export and render attention traces")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True, help="comma-separated sample ids")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except VgqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
