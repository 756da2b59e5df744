"""Loading a generated dataset into batch-ready tensors."""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .datamodel import QASample, build_mc_query, load_feature_archive, object_input_matrix
from .errors import DataError
from .model import FeatureDims

PAD_ID = 0


@dataclass
class SplitTensors:
    samples: list            # QASample records
    episode_index: torch.Tensor  # (S,) index into the episode bank
    queries: torch.Tensor    # MC: (S, C, M); OE: (S, M) token ids
    lengths: torch.Tensor    # MC: (S, C); OE: (S,)
    answers: torch.Tensor    # (S,)
    tags: list               # granularity tag per sample

    def __len__(self):
        return len(self.samples)


@dataclass
class EpisodeBank:
    refs: list
    motion: torch.Tensor      # (E, K, d_m)
    appearance: torch.Tensor  # (E, T, d_a)
    objects: torch.Tensor     # (E, T, N, d_r + 8)

    def gather(self, idx):
        return (self.motion.index_select(0, idx),
                self.appearance.index_select(0, idx),
                self.objects.index_select(0, idx))


@dataclass
class LoadedDataset:
    root: str
    mode: str
    dims: FeatureDims
    answer_vocab: list
    vocab: dict
    bank: EpisodeBank
    splits: dict  # name -> SplitTensors


def _pad(tokens, m):
    if len(tokens) > m:
        raise DataError(f"query of length {len(tokens)} exceeds capacity {m}")
    return list(tokens) + [PAD_ID] * (m - len(tokens))


def load_episode_bank(root, refs, cfg):
    motion, appearance, objects = [], [], []
    for ref in refs:
        bundle, _ = load_feature_archive(os.path.join(root, ref))
        motion.append(bundle.motion)
        appearance.append(bundle.appearance)
        objects.append(object_input_matrix(bundle, cfg).astype(np.float32))
    return EpisodeBank(
        refs=list(refs),
        motion=torch.from_numpy(np.stack(motion)),
        appearance=torch.from_numpy(np.stack(appearance)),
        objects=torch.from_numpy(np.stack(objects)),
    )


def _split_tensors(records, ref_index, cfg, mode):
    sm, lengths, queries, answers, tags, epi = [], [], [], [], [], []
    for rec in records:
        sample = QASample.from_dict(rec) if isinstance(rec, dict) else rec
        sample.validate(cfg)
        if sample.video_ref not in ref_index:
            raise DataError(f"sample {sample.sample_id} references unknown video {sample.video_ref}")
        if mode == "mc":
            if len(sample.candidates) != cfg.num_choices:
                raise DataError(f"sample {sample.sample_id} has {len(sample.candidates)} candidates, "
                                f"expected {cfg.num_choices}")
            qs = [build_mc_query(sample.question_tokens, c, cfg.M) for c in sample.candidates]
            queries.append([_pad(q, cfg.M) for q in qs])
            lengths.append([len(q) for q in qs])
        else:
            queries.append(_pad(sample.question_tokens, cfg.M))
            lengths.append(len(sample.question_tokens))
        sm.append(sample)
        answers.append(sample.answer_index)
        tags.append(sample.granularity_tag)
        epi.append(ref_index[sample.video_ref])
    return SplitTensors(
        samples=sm,
        episode_index=torch.tensor(epi, dtype=torch.long),
        queries=torch.tensor(queries, dtype=torch.long),
        lengths=torch.tensor(lengths, dtype=torch.long),
        answers=torch.tensor(answers, dtype=torch.long),
        tags=tags,
    )


def load_dataset(root, cfg):
    """Load dataset.json plus manifests and feature archives under ``root``.

    ``cfg`` is the HierarchyConfig the model will run with; its structure
    must match what the dataset was generated with.
    """
    try:
        with open(os.path.join(root, "dataset.json")) as fh:
            meta = json.load(fh)
        with open(os.path.join(root, "vocab.json")) as fh:
            vocab = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset at {root}: {exc}") from exc

    structure = meta["structure"]
    for key, want in (("K", cfg.K), ("N", cfg.N)):
        if structure[key] != want:
            raise DataError(f"dataset {key}={structure[key]} does not match config {key}={want}")

    split_records = {}
    refs = []
    for name, fname in meta["splits"].items():
        with open(os.path.join(root, fname)) as fh:
            split_records[name] = json.load(fh)
        for rec in split_records[name]:
            if rec["video_ref"] not in refs:
                refs.append(rec["video_ref"])
    ref_index = {r: i for i, r in enumerate(refs)}

    bank = load_episode_bank(root, refs, cfg)
    splits = {name: _split_tensors(records, ref_index, cfg, meta["mode"])
              for name, records in split_records.items()}
    dims = FeatureDims(d_m=structure["d_m"], d_a=structure["d_a"], d_r=structure["d_r"],
                       d_e=0, vocab_size=meta["vocab_size"])
    return LoadedDataset(root=root, mode=meta["mode"], dims=dims,
                         answer_vocab=meta["answer_vocab"], vocab=vocab,
                         bank=bank, splits=splits)
