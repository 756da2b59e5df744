"""Tensors, configs and pre-hierarchy feature projections.

Covers the raw/projected feature bundles, QA samples, the on-disk feature
archive schema, and the learned projections that map raw video features
and question tokens into the shared d-dimensional space.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import activations
from .archive import load_named_arrays, save_named_arrays
from .errors import ArchiveError, DataError

FEATURE_ARRAYS = ("motion", "appearance", "region_feats", "region_boxes", "frame_size", "frame_times")
FEATURE_MANIFEST_KEYS = ("K", "L", "gamma", "N", "d_m", "d_a", "d_r")

# geometric (6) + temporal (2) components appended to each region feature
GEOM_DIM = 6
TIME_DIM = 2


# ---------------------------------------------------------------------------
# data containers


@dataclass
class RawFeatureBundle:
    """Pre-projection features for one video."""

    motion: np.ndarray        # K x d_m
    appearance: np.ndarray    # T x d_a
    region_feats: np.ndarray  # T x N x d_r
    region_boxes: np.ndarray  # T x N x 4, pixel (x1, y1, x2, y2)
    frame_size: np.ndarray    # (width, height)
    frame_times: np.ndarray   # T, strictly increasing in [0, 1]

    def validate(self):
        for name in FEATURE_ARRAYS:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if self.motion.ndim != 2 or self.appearance.ndim != 2 or self.region_feats.ndim != 3:
            raise DataError("motion/appearance/region_feats have wrong rank")
        t, n = self.region_feats.shape[:2]
        if self.region_boxes.shape != (t, n, 4):
            raise DataError(f"region_boxes shape {self.region_boxes.shape} does not match regions ({t}, {n}, 4)")
        if self.appearance.shape[0] != t or self.frame_times.shape != (t,):
            raise DataError("appearance/frame_times length does not match the sparse frame count")
        if self.frame_size.shape != (2,) or np.any(self.frame_size <= 0):
            raise DataError("frame_size must be two positive numbers")
        w, h = float(self.frame_size[0]), float(self.frame_size[1])
        x1, y1, x2, y2 = (self.region_boxes[..., i] for i in range(4))
        if np.any(x1 < 0) or np.any(y1 < 0) or np.any(x2 > w) or np.any(y2 > h) \
                or np.any(x1 >= x2) or np.any(y1 >= y2):
            raise DataError("region_boxes violate 0 <= x1 < x2 <= width, 0 <= y1 < y2 <= height")
        times = self.frame_times
        if np.any(times < 0) or np.any(times > 1) or np.any(np.diff(times) <= 0):
            raise DataError("frame_times must be strictly increasing within [0, 1]")
        return self

    @property
    def dims(self):
        return {
            "d_m": self.motion.shape[1],
            "d_a": self.appearance.shape[1],
            "d_r": self.region_feats.shape[2],
        }


@dataclass
class ObjectDescriptor:
    """One region: appearance, normalized geometry and temporal position."""

    f_r: np.ndarray  # d_r
    f_s: np.ndarray  # 6: (x1/W, y1/H, x2/W, y2/H, w/W, h/H)
    f_t: np.ndarray  # 2: (frame_index/T, clip_index/K)


@dataclass
class FeatureBundle:
    """Projected d-dimensional features for one (video, question) pair."""

    motion: torch.Tensor      # K x d
    appearance: torch.Tensor  # T x d
    objects: torch.Tensor     # T x N x d
    question: torch.Tensor    # M x d
    query_global: torch.Tensor  # d

    def validate(self, cfg):
        d = cfg.d
        shapes = {
            "motion": (cfg.K, d),
            "appearance": (cfg.T, d),
            "objects": (cfg.T, cfg.N, d),
        }
        for name, want in shapes.items():
            got = tuple(getattr(self, name).shape)
            if got != want:
                raise DataError(f"{name} has shape {got}, expected {want}")
        if self.question.ndim != 2 or self.question.shape[1] != d or not 1 <= self.question.shape[0] <= cfg.M:
            raise DataError(f"question has shape {tuple(self.question.shape)}, expected (<= {cfg.M}, {d})")
        if tuple(self.query_global.shape) != (d,):
            raise DataError("query_global must be a d-vector")
        for name in ("motion", "appearance", "objects", "question", "query_global"):
            if not torch.isfinite(getattr(self, name)).all():
                raise DataError(f"{name} contains non-finite values")
        return self


@dataclass
class QASample:
    """One question instance from a dataset manifest."""

    sample_id: str
    question_tokens: list
    candidates: list = field(default_factory=list)  # list of token-id lists (MC) or empty (OE)
    answer_index: int = 0
    granularity_tag: str = ""  # object | relation | action | event (synthetic only)
    video_ref: str = ""

    def validate(self, cfg):
        if not self.question_tokens:
            raise DataError(f"sample {self.sample_id}: empty question")
        if len(self.question_tokens) > cfg.M:
            raise DataError(f"sample {self.sample_id}: question longer than M={cfg.M}")
        if self.candidates:
            if not 0 <= self.answer_index < len(self.candidates):
                raise DataError(f"sample {self.sample_id}: answer_index out of range")
        elif cfg.answer_set_size and not 0 <= self.answer_index < cfg.answer_set_size:
            raise DataError(f"sample {self.sample_id}: answer_index outside the answer set")
        return self

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "question_tokens": list(self.question_tokens),
            "candidates": [list(c) for c in self.candidates],
            "answer_index": self.answer_index,
            "granularity_tag": self.granularity_tag,
            "video_ref": self.video_ref,
        }

    @classmethod
    def from_dict(cls, rec):
        try:
            return cls(
                sample_id=rec["sample_id"],
                question_tokens=list(rec["question_tokens"]),
                candidates=[list(c) for c in rec.get("candidates", [])],
                answer_index=int(rec["answer_index"]),
                granularity_tag=rec.get("granularity_tag", ""),
                video_ref=rec.get("video_ref", ""),
            )
        except KeyError as exc:
            raise DataError(f"QA record missing field {exc}") from exc


# ---------------------------------------------------------------------------
# archive I/O


def save_feature_archive(bundle, path, meta):
    """Write a validated RawFeatureBundle plus its structural manifest."""
    bundle.validate()
    manifest = {k: meta[k] for k in FEATURE_MANIFEST_KEYS}
    arrays = {name: np.asarray(getattr(bundle, name), dtype=np.float32) for name in FEATURE_ARRAYS}
    save_named_arrays(path, arrays, manifest)


def load_feature_archive(path):
    """Load and validate a feature archive, returning (bundle, manifest)."""
    arrays, manifest = load_named_arrays(path, required=FEATURE_ARRAYS)
    missing = [k for k in FEATURE_MANIFEST_KEYS if k not in manifest]
    if missing:
        raise ArchiveError(f"archive {path} manifest is missing keys {missing}")
    bundle = RawFeatureBundle(**{name: arrays[name] for name in FEATURE_ARRAYS})
    try:
        bundle.validate()
    except DataError as exc:
        raise DataError(f"archive {path}: {exc}") from exc
    return bundle, manifest


def save_token_embeddings(path, embeddings, vocab):
    save_named_arrays(path, {"embeddings": np.asarray(embeddings, dtype=np.float32)}, {"vocab": vocab})


def load_token_embeddings(path):
    arrays, manifest = load_named_arrays(path, required=("embeddings",))
    vocab = manifest.get("vocab")
    if not isinstance(vocab, dict):
        raise ArchiveError(f"archive {path} manifest has no vocab map")
    emb = arrays["embeddings"]
    if emb.ndim != 2 or emb.shape[0] < len(vocab):
        raise ArchiveError(f"embedding table shape {emb.shape} does not cover the vocab")
    return emb, vocab


# ---------------------------------------------------------------------------
# object geometry


def geometric_embedding(box, frame_size):
    """Resolution-independent 6-vector for one pixel box."""
    w, h = float(frame_size[0]), float(frame_size[1])
    x1, y1, x2, y2 = (float(v) for v in box)
    return np.array([x1 / w, y1 / h, x2 / w, y2 / h, (x2 - x1) / w, (y2 - y1) / h])


def temporal_embedding(frame_index, num_frames, clip_index, num_clips):
    return np.array([frame_index / num_frames, clip_index / num_clips])


def object_descriptors(raw, cfg):
    """All T x N ObjectDescriptors of a raw bundle, in frame-major order."""
    t_total = raw.region_feats.shape[0]
    fpc = cfg.frames_per_clip
    out = []
    for t in range(t_total):
        row = []
        for n in range(raw.region_feats.shape[1]):
            row.append(ObjectDescriptor(
                f_r=raw.region_feats[t, n],
                f_s=geometric_embedding(raw.region_boxes[t, n], raw.frame_size),
                f_t=temporal_embedding(t, t_total, t // fpc, cfg.K),
            ))
        out.append(row)
    return out


def object_input_matrix(raw, cfg):
    """Stack [f_r; f_s; f_t] for every region into a T x N x (d_r+8) array."""
    t_total, n, d_r = raw.region_feats.shape
    out = np.empty((t_total, n, d_r + GEOM_DIM + TIME_DIM), dtype=np.float64)
    out[:, :, :d_r] = raw.region_feats
    w, h = float(raw.frame_size[0]), float(raw.frame_size[1])
    boxes = raw.region_boxes.astype(np.float64)
    out[:, :, d_r + 0] = boxes[..., 0] / w
    out[:, :, d_r + 1] = boxes[..., 1] / h
    out[:, :, d_r + 2] = boxes[..., 2] / w
    out[:, :, d_r + 3] = boxes[..., 3] / h
    out[:, :, d_r + 4] = (boxes[..., 2] - boxes[..., 0]) / w
    out[:, :, d_r + 5] = (boxes[..., 3] - boxes[..., 1]) / h
    frame_idx = np.arange(t_total, dtype=np.float64)
    out[:, :, d_r + 6] = (frame_idx / t_total)[:, None]
    out[:, :, d_r + 7] = ((frame_idx // cfg.frames_per_clip) / cfg.K)[:, None]
    return out


# ---------------------------------------------------------------------------
# learned projections


class TemporalConv(nn.Module):
    """Window-3 1-D convolution over time; linear, zero same-padding."""

    def __init__(self, d_in, d_out):
        super().__init__()
        self.conv = nn.Conv1d(d_in, d_out, kernel_size=3, padding=1)

    def forward(self, x):
        # x: (..., S, d_in) -> (..., S, d_out)
        if x.shape[-1] != self.conv.in_channels:
            raise DataError(f"temporal conv expects width {self.conv.in_channels}, got {x.shape[-1]}")
        lead = x.shape[:-2]
        flat = x.reshape(-1, x.shape[-2], x.shape[-1]).transpose(1, 2)
        out = self.conv(flat).transpose(1, 2)
        return out.reshape(*lead, x.shape[-2], -1)


class ObjectEncoder(nn.Module):
    """Project [f_r; f_s; f_t] to d dimensions with a linear map + ELU."""

    def __init__(self, d_r, d_out):
        super().__init__()
        self.proj = nn.Linear(d_r + GEOM_DIM + TIME_DIM, d_out)

    def forward(self, x):
        if x.shape[-1] != self.proj.in_features:
            raise DataError(f"object encoder expects width {self.proj.in_features}, got {x.shape[-1]}")
        if not torch.isfinite(x).all():
            raise DataError("object encoder input contains non-finite values")
        return activations.elu(self.proj(x))

    def encode_descriptor(self, desc):
        x = torch.as_tensor(
            np.concatenate([desc.f_r, desc.f_s, desc.f_t]),
            dtype=self.proj.weight.dtype,
        )
        return self.forward(x)


class QuestionEncoder(nn.Module):
    """Bi-GRU question projection.

    Each output row m concatenates the forward state over tokens 1..m with
    the backward state over tokens M..m (each d/2 wide).  The global query
    vector is the output at the final real token.
    """

    def __init__(self, d_e, d):
        super().__init__()
        self.gru = nn.GRU(d_e, d // 2, batch_first=True, bidirectional=True)

    def forward(self, emb, lengths):
        # emb: (B, M, d_e); lengths: (B,) real token counts
        if int(lengths.min()) < 1:
            raise DataError("empty question")
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.gru(packed)
        q, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=emb.shape[1])
        idx = (lengths - 1).view(-1, 1, 1).expand(-1, 1, q.shape[-1])
        f_q = q.gather(1, idx).squeeze(1)
        return q, f_q

    def encode_single(self, emb):
        # emb: (m, d_e) for one question
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise DataError("question embeddings must be a nonempty (m, d_e) matrix")
        q, f_q = self.forward(emb.unsqueeze(0), torch.tensor([emb.shape[0]]))
        return q.squeeze(0), f_q.squeeze(0)


def build_mc_query(question_tokens, candidate_tokens, max_len):
    """Concatenate a candidate after the question, truncating the question
    tail (never the candidate) so that the result fits in ``max_len``."""
    cand = list(candidate_tokens)
    if len(cand) > max_len:
        raise DataError(f"candidate of length {len(cand)} exceeds the token capacity {max_len}")
    keep = max_len - len(cand)
    return list(question_tokens)[:keep] + cand
