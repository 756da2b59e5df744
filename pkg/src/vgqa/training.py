"""Two-stage optimization, evaluation and the ablation harness."""

import copy
import csv
import dataclasses
import math
import os
import statistics

import torch

from .archive import load_named_arrays, save_named_arrays
from .config import MC, OE, HierarchyConfig
from .decoder import ce_loss, hinge_loss, predict
from .errors import ConfigError, DataError, DivergenceError
from .model import FeatureDims, VideoQAModel


def align_config(cfg, data):
    """Point the decoder settings at what the dataset actually provides."""
    cfg.decoder_mode = MC if data.mode == "mc" else OE
    if cfg.decoder_mode == OE:
        cfg.answer_set_size = len(data.answer_vocab)
    return cfg.validate()


def make_model(cfg, data, embed_dim, float64=False, seed=0):
    """Seeded model construction for a loaded dataset."""
    dims = FeatureDims(d_m=data.dims.d_m, d_a=data.dims.d_a, d_r=data.dims.d_r,
                       d_e=embed_dim, vocab_size=data.dims.vocab_size)
    torch.manual_seed(seed)
    model = VideoQAModel(cfg, dims)
    if float64:
        model.double()
    return model


def batch_loss(model, data, split, idx):
    """Loss and per-sample predictions on one index batch."""
    motion, appearance, objects = data.bank.gather(split.episode_index[idx])
    if data.mode == "mc":
        scores, _, _ = model.forward_mc(motion, appearance, objects,
                                        split.queries[idx], split.lengths[idx])
        loss = hinge_loss(scores, split.answers[idx])
    else:
        scores = model.forward_oe(motion, appearance, objects,
                                  split.queries[idx], split.lengths[idx])
        loss = ce_loss(scores, split.answers[idx])
    return loss, predict(scores)


def evaluate_accuracy(model, data, split):
    """Overall accuracy plus a per-granularity-tag breakdown.

    Tags with no samples are omitted from the breakdown, not reported as
    zero.
    """
    if isinstance(split, str):
        split = data.splits[split]
    if len(split) == 0:
        raise DataError("cannot evaluate an empty split")
    correct, per_tag = 0, {}
    model.eval()
    with torch.no_grad():
        for start in range(0, len(split), 128):
            idx = torch.arange(start, min(start + 128, len(split)))
            _, preds = batch_loss(model, data, split, idx)
            for i, pred in zip(idx.tolist(), preds.tolist()):
                tag = split.tags[i]
                hit = int(pred == int(split.answers[i]))
                correct += hit
                n_ok, n_all = per_tag.get(tag, (0, 0))
                per_tag[tag] = (n_ok + hit, n_all + 1)
    model.train()
    breakdown = {tag: ok / n for tag, (ok, n) in sorted(per_tag.items())}
    return correct / len(split), breakdown


def _epoch(model, data, split, opt, batch_size, generator):
    perm = torch.randperm(len(split), generator=generator)
    total, batches = 0.0, 0
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        opt.zero_grad(set_to_none=True)
        loss, _ = batch_loss(model, data, split, idx)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite training loss {value} at batch {batches}")
        loss.backward()
        opt.step()
        total += value
        batches += 1
    return total / max(batches, 1)


def train_two_stage(model, data, tcfg, out_dir=None,
                    train_split="train", val_split="val"):
    """Stage 1 from init, stage 2 fine-tuning from the best stage-1 epoch.

    The best checkpoint is the one with the highest validation accuracy
    (ties broken by the earliest epoch, across both stages).  Returns
    ``(best_state_dict, history)``; the model is left holding the best
    parameters.
    """
    tcfg.validate()
    if train_split not in data.splits or val_split not in data.splits:
        raise DataError("dataset must provide train and val splits")
    torch.manual_seed(tcfg.seed)
    generator = torch.Generator().manual_seed(tcfg.seed)
    history = []
    best = {"acc": -1.0, "state": copy.deepcopy(model.state_dict())}

    for stage, lr in ((1, tcfg.lr_stage1), (2, tcfg.lr_stage2)):
        if stage == 2:
            if not tcfg.stage2_enabled:
                break
            model.load_state_dict(best["state"])
        opt = torch.optim.Adam(model.parameters(), lr=lr)
        for epoch in range(1, tcfg.max_epochs + 1):
            loss = _epoch(model, data, data.splits[train_split], opt,
                          tcfg.batch_size, generator)
            acc, _ = evaluate_accuracy(model, data, val_split)
            history.append({"epoch": epoch, "stage": stage, "loss": loss, "val_acc": acc})
            if acc > best["acc"]:
                best = {"acc": acc, "state": copy.deepcopy(model.state_dict())}

    model.load_state_dict(best["state"])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), history)
    return best["state"], history


def write_metrics_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "stage", "loss", "val_acc"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in writer.fieldnames})


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), "stage": int(r["stage"]),
                 "loss": float(r["loss"]), "val_acc": float(r["val_acc"])}
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path, extra=None):
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    manifest = {
        "hierarchy": dataclasses.asdict(model.cfg),
        "dims": dataclasses.asdict(model.dims),
        "float64": model.dtype == torch.float64,
        "extra": extra or {},
    }
    save_named_arrays(path, arrays, manifest)


def load_checkpoint(path):
    arrays, manifest = load_named_arrays(path)
    cfg = HierarchyConfig(**manifest["hierarchy"])
    dims = FeatureDims(**manifest["dims"])
    model = VideoQAModel(cfg, dims)
    if manifest.get("float64"):
        model.double()
    state = {k.removeprefix("param/"): torch.from_numpy(v.copy())
             for k, v in arrays.items() if k.startswith("param/")}
    model.load_state_dict(state)
    return model, manifest.get("extra", {})


# ---------------------------------------------------------------------------
# ablation harness


def ablation_variants(base_cfg):
    """The full model plus the twelve structural ablations."""
    rows = [
        ("full", {}),
        ("no object graph", {"use_object_graph": False}),
        ("no frame graph", {"use_frame_graph": False}),
        ("no object & frame graphs", {"use_object_graph": False, "use_frame_graph": False}),
        ("sum-pool clip level (s)", {"sumpool_clip": True}),
        ("sum-pool clip+frame (ss)", {"sumpool_clip": True, "sumpool_frame": True}),
        ("sum-pool all levels (sss)", {"sumpool_clip": True, "sumpool_frame": True,
                                       "sumpool_object": True}),
        ("no clip conditioning", {"cond_clip": False}),
        ("no clip & frame conditioning", {"cond_clip": False, "cond_frame": False}),
        ("no conditioning", {"cond_clip": False, "cond_frame": False, "cond_object": False}),
        ("global-query conditioning", {"global_query_condition": True}),
        ("no motion context", {"use_motion_ctx": False}),
        ("no appearance & motion context", {"use_appearance_ctx": False, "use_motion_ctx": False}),
    ]
    variants = []
    for name, overrides in rows:
        cfg = dataclasses.replace(base_cfg, **overrides)
        variants.append((name, cfg.validate()))
    return variants


def run_ablation_suite(data, base_cfg, tcfg, seeds, embed_dim=32, eval_split="val",
                       variants=None):
    """Train and evaluate every variant per seed; report median accuracies."""
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    results = []
    for name, cfg in (variants or ablation_variants(base_cfg)):
        align_config(cfg, data)
        accs, tag_accs = [], {}
        for seed in seeds:
            run_tcfg = dataclasses.replace(tcfg, seed=seed)
            model = make_model(cfg, data, embed_dim, float64=run_tcfg.float64, seed=seed)
            train_two_stage(model, data, run_tcfg)
            acc, per_tag = evaluate_accuracy(model, data, eval_split)
            accs.append(acc)
            for tag, v in per_tag.items():
                tag_accs.setdefault(tag, []).append(v)
        results.append({
            "variant": name,
            "config": dataclasses.asdict(cfg),
            "seeds": list(seeds),
            "accuracy": accs,
            "median_accuracy": statistics.median(accs),
            "median_per_tag": {tag: statistics.median(v) for tag, v in sorted(tag_accs.items())},
        })
    return results
