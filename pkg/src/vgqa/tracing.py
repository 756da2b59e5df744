"""Attention-trace recording, JSONL export and figure rendering.

A trace captures every unit's word attention (alpha), soft adjacency and
pooling weights (beta) for one sample, organized by hierarchy level, and
supports the top-down clip -> frame -> object evidence path.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .decoder import predict
from .errors import DataError

LEVELS = ("O", "F", "C")
SIG_DIGITS = 9  # enough for exact float32 round-trips
ROW_SUM_TOL = 1e-6


@dataclass
class TraceRecord:
    sample_id: str
    levels: dict = field(default_factory=lambda: {lv: [] for lv in LEVELS})
    prediction: int = -1
    answer_index: int = -1

    def validate(self):
        for lv in LEVELS:
            for unit in self.levels.get(lv, []):
                for key in ("A", "beta"):
                    arr = np.asarray(unit[key])
                    sums = arr.sum(axis=-1)
                    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
                        raise DataError(f"{self.sample_id}: {key} rows of level {lv} "
                                        f"unit {unit['unit']} are not stochastic")
                if unit.get("alpha") is not None:
                    sums = np.asarray(unit["alpha"]).sum(axis=-1)
                    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
                        raise DataError(f"{self.sample_id}: alpha rows of level {lv} "
                                        f"unit {unit['unit']} are not stochastic")
        return self


def _to_array(x):
    return np.asarray(x.detach().cpu().numpy() if hasattr(x, "detach") else x, dtype=np.float64)


def record_trace(sample_id, hier_trace, prediction=-1, answer_index=-1, q_len=None):
    """Build a TraceRecord from a forward pass's HierTrace.

    ``q_len`` trims padded word columns out of the recorded alphas.
    """
    rec = TraceRecord(sample_id=sample_id, prediction=int(prediction),
                      answer_index=int(answer_index))
    for lv, units in (("O", hier_trace.level_object),
                      ("F", hier_trace.level_frame),
                      ("C", hier_trace.level_clip)):
        for i, unit in enumerate(units):
            alpha = unit["alpha"]
            if alpha is not None:
                alpha = _to_array(alpha)
                if q_len is not None:
                    alpha = alpha[..., :q_len]
            rec.levels[lv].append({
                "unit": i,
                "alpha": alpha,
                "A": _to_array(unit["adjacency"]),
                "beta": _to_array(unit["beta"]),
            })
    return rec.validate()


def top_down_path(record, cfg):
    """Argmax-beta tracing: clip -> frame within the clip -> object.

    Returns (clip_index, global_frame_index, object_index), ties broken
    toward the lowest index.  Raises DataError if any level was ablated.
    """
    for lv in LEVELS:
        if not record.levels.get(lv):
            raise DataError(f"top-down path unavailable: level {lv} is absent from the trace")
    clip = int(np.argmax(record.levels["C"][0]["beta"]))
    local = int(np.argmax(record.levels["F"][clip]["beta"]))
    frame = clip * cfg.frames_per_clip + local
    obj = int(np.argmax(record.levels["O"][frame]["beta"]))
    return clip, frame, obj


def trace_sample(model, data, split, index):
    """Run one sample with tracing and return its TraceRecord.

    In multi-choice mode the traced forward uses the predicted
    candidate's holistic query, since that is the evidence behind the
    model's answer.
    """
    sample = split.samples[index]
    motion, appearance, objects = data.bank.gather(split.episode_index[index:index + 1])
    with torch.no_grad():
        if data.mode == "mc":
            scores, _, _ = model.forward_mc(motion, appearance, objects,
                                            split.queries[index:index + 1],
                                            split.lengths[index:index + 1])
            pred = int(predict(scores)[0])
            tokens = split.queries[index, pred:pred + 1]
            lengths = split.lengths[index, pred:pred + 1]
        else:
            scores = model.forward_oe(motion, appearance, objects,
                                      split.queries[index:index + 1],
                                      split.lengths[index:index + 1])
            pred = int(predict(scores)[0])
            tokens = split.queries[index:index + 1]
            lengths = split.lengths[index:index + 1]
        _, hier_trace = model.traced_video_vector(motion, appearance, objects, tokens, lengths)[:2]
    return record_trace(sample.sample_id, hier_trace, prediction=pred,
                        answer_index=sample.answer_index, q_len=int(lengths[0]))


# ---------------------------------------------------------------------------
# JSONL export / import


def _round_sig(x):
    return float(f"{float(x):.{SIG_DIGITS}g}")


def _jsonable(arr):
    if arr is None:
        return None
    return [[_round_sig(v) for v in row] if np.ndim(row) else _round_sig(row)
            for row in np.asarray(arr).tolist()]


def record_to_dict(record):
    return {
        "sample_id": record.sample_id,
        "levels": {lv: [{"unit": u["unit"],
                         "alpha": _jsonable(u["alpha"]),
                         "A": _jsonable(u["A"]),
                         "beta": [_round_sig(v) for v in np.asarray(u["beta"]).tolist()]}
                        for u in record.levels.get(lv, [])]
                   for lv in LEVELS},
        "prediction": int(record.prediction),
        "answer_index": int(record.answer_index),
    }


def validate_trace_dict(obj):
    """Schema check for one exported trace object."""
    if not isinstance(obj, dict):
        raise DataError("trace record must be an object")
    for key in ("sample_id", "levels", "prediction"):
        if key not in obj:
            raise DataError(f"trace record missing key {key!r}")
    if not isinstance(obj["sample_id"], str) or not isinstance(obj["prediction"], int):
        raise DataError("trace record has wrong field types")
    levels = obj["levels"]
    if not isinstance(levels, dict) or set(levels) - set(LEVELS):
        raise DataError(f"trace levels must be a subset of {LEVELS}")
    for lv, units in levels.items():
        if not isinstance(units, list):
            raise DataError(f"level {lv} must hold a list of units")
        for u in units:
            if not isinstance(u.get("unit"), int):
                raise DataError(f"level {lv} unit index missing")
            if not (u.get("alpha") is None or isinstance(u["alpha"], list)):
                raise DataError("alpha must be a matrix or null")
            if not isinstance(u.get("A"), list) or not isinstance(u.get("beta"), list):
                raise DataError("A and beta are required matrices")
    return obj


def record_from_dict(obj):
    validate_trace_dict(obj)
    rec = TraceRecord(sample_id=obj["sample_id"], prediction=obj["prediction"],
                      answer_index=obj.get("answer_index", -1))
    for lv in LEVELS:
        for u in obj["levels"].get(lv, []):
            rec.levels[lv].append({
                "unit": u["unit"],
                "alpha": None if u["alpha"] is None else np.asarray(u["alpha"], dtype=np.float64),
                "A": np.asarray(u["A"], dtype=np.float64),
                "beta": np.asarray(u["beta"], dtype=np.float64),
            })
    return rec


def export_traces(records, path):
    """One JSON object per line per record."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")


def import_traces(path):
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# rendering


def render_trace(record, out_dir, dpi=100):
    """Write PNG figures for every recorded tensor; read-only on the record.

    Files are named ``<sample_id>_<level>_<unit>_<tensor>.png``.  Heatmap
    color scales are fixed to [0, 1] so plots compare across samples.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for lv in LEVELS:
        for u in record.levels.get(lv, []):
            stem = os.path.join(out_dir, f"{record.sample_id}_{lv}_{u['unit']}")

            fig, ax = plt.subplots(figsize=(4, 4))
            im = ax.imshow(np.asarray(u["A"]), cmap="viridis", vmin=0.0, vmax=1.0)
            ax.set_xlabel("node")
            ax.set_ylabel("node")
            ax.set_title(f"adjacency {lv}{u['unit']}")
            fig.colorbar(im, ax=ax)
            fig.savefig(f"{stem}_A.png", dpi=dpi)
            plt.close(fig)
            written.append(f"{stem}_A.png")

            beta = np.asarray(u["beta"])
            fig, ax = plt.subplots(figsize=(4, 3))
            ax.bar(np.arange(len(beta)), beta, color="tab:blue")
            ax.set_ylim(0.0, 1.0)
            ax.set_xlabel("node")
            ax.set_ylabel("pooling weight")
            ax.set_title(f"pooling {lv}{u['unit']}")
            fig.savefig(f"{stem}_beta.png", dpi=dpi)
            plt.close(fig)
            written.append(f"{stem}_beta.png")

            if u["alpha"] is not None:
                alpha = np.atleast_2d(np.asarray(u["alpha"]))
                n = alpha.shape[0]
                fig, axes = plt.subplots(n, 1, figsize=(4, 1.2 * n + 1), squeeze=False)
                for i in range(n):
                    axes[i][0].bar(np.arange(alpha.shape[1]), alpha[i], color="tab:orange")
                    axes[i][0].set_ylim(0.0, 1.0)
                    axes[i][0].set_ylabel(f"node {i}", fontsize=8)
                axes[-1][0].set_xlabel("word")
                fig.suptitle(f"word attention {lv}{u['unit']}")
                fig.tight_layout()
                fig.savefig(f"{stem}_alpha.png", dpi=dpi)
                plt.close(fig)
                written.append(f"{stem}_alpha.png")
    return written
