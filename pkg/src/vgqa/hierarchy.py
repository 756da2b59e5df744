"""Three-level conditional graph hierarchy over objects, frames and clips.

Stacks shared-parameter graph units: one per sparse frame over its
objects, one per clip over the clip's frames, and one over the clips,
producing a single video vector.  Appearance and motion features are
merged in as global context between levels.  Every ablation switch from
the config is honored here.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import torch
from torch import nn

from . import activations
from .errors import ConfigError, DataError
from .graph_unit import (COND_GLOBAL, COND_NONE, COND_TOKENS, GraphUnitParams,
                         unit_forward)

LEVEL_OBJECT = "O"
LEVEL_FRAME = "F"
LEVEL_CLIP = "C"


@dataclass
class HierTrace:
    """Per-unit attention tensors (alpha, adjacency, beta) by level.

    Levels that are ablated away or replaced by sum-pooling are empty.
    """

    level_object: List[dict] = field(default_factory=list)
    level_frame: List[dict] = field(default_factory=list)
    level_clip: List[dict] = field(default_factory=list)


class HierarchyParams(nn.Module):
    """One parameter set per level; unit count never multiplies weights."""

    def __init__(self, d, num_layers):
        super().__init__()
        self.object_unit = GraphUnitParams(d, num_layers)
        self.frame_unit = GraphUnitParams(d, num_layers)
        self.clip_unit = GraphUnitParams(d, num_layers)
        self.merge_appearance = nn.Linear(2 * d, d)  # [appearance; object-level out]
        self.merge_motion = nn.Linear(2 * d, d)      # [motion; frame-level out]


def _condition_mode(cfg, enabled):
    if not enabled:
        return COND_NONE
    return COND_GLOBAL if cfg.global_query_condition else COND_TOKENS


def merge_context(level_out, context, linear):
    """ELU(W [context; level_out]) applied position-wise."""
    return activations.elu(linear(torch.cat([context, level_out], dim=-1)))


def _split_units(out, count):
    """Slice a batched unit output into per-unit trace dicts.

    ``out`` fields have shape (B, count, ...); traces assume B == 1.
    """
    records = []
    for i in range(count):
        records.append({
            "alpha": None if out.alpha is None else out.alpha[0, i].detach(),
            "adjacency": out.adjacency[0, i].detach(),
            "beta": out.beta[0, i].detach(),
        })
    return records


def level_object(objects, q, params, cfg, q_mask=None, query_global=None):
    """Frame-wise unit over each frame's objects: (B,T,N,d) -> (B,T,d)."""
    qx = q.unsqueeze(-3).expand(*objects.shape[:-2], *q.shape[-2:])
    mask = None if q_mask is None else q_mask.unsqueeze(-2).expand(*objects.shape[:-3], objects.shape[-3], q_mask.shape[-1])
    g = None if query_global is None else query_global.unsqueeze(-2).expand(*objects.shape[:-2], query_global.shape[-1])
    return unit_forward(objects, qx, params, condition=_condition_mode(cfg, cfg.cond_object),
                        sum_pool=cfg.sumpool_object, q_mask=mask, query_global=g)


def level_frame(frame_vecs, q, params, cfg, q_mask=None, query_global=None):
    """Clip-wise unit over each clip's frames: (B,T,d) -> (B,K,d)."""
    fpc = cfg.frames_per_clip
    if frame_vecs.shape[-2] != cfg.K * fpc:
        raise ConfigError(
            f"{frame_vecs.shape[-2]} frames do not partition into {cfg.K} clips of {fpc}")
    clips = frame_vecs.reshape(*frame_vecs.shape[:-2], cfg.K, fpc, frame_vecs.shape[-1])
    qx = q.unsqueeze(-3).expand(*clips.shape[:-2], *q.shape[-2:])
    mask = None if q_mask is None else q_mask.unsqueeze(-2).expand(*clips.shape[:-3], cfg.K, q_mask.shape[-1])
    g = None if query_global is None else query_global.unsqueeze(-2).expand(*clips.shape[:-2], query_global.shape[-1])
    return unit_forward(clips, qx, params, condition=_condition_mode(cfg, cfg.cond_frame),
                        sum_pool=cfg.sumpool_frame, q_mask=mask, query_global=g)


def level_clip(clip_vecs, q, params, cfg, q_mask=None, query_global=None):
    """Top unit over the clips: (B,K,d) -> (B,d)."""
    return unit_forward(clip_vecs, q, params, condition=_condition_mode(cfg, cfg.cond_clip),
                        sum_pool=cfg.sumpool_clip, q_mask=q_mask, query_global=query_global)


def middle_frame_indices(cfg):
    """Global sparse-frame index of each clip's middle frame (0-based)."""
    fpc = cfg.frames_per_clip
    return [k * fpc + fpc // 2 for k in range(cfg.K)]


def hierarchy_forward(params, cfg, q, query_global, motion=None, appearance=None,
                      objects=None, q_mask=None, trace=False):
    """Full conditional hierarchy producing the video vector.

    Tensors carry one leading batch dimension: motion (B,K,d), appearance
    (B,T,d), objects (B,T,N,d), q (B,M,d), query_global (B,d).  Inputs
    not needed under the active switches may be None.  Returns
    ``(video_vec, HierTrace | None)``; tracing requires B == 1.
    """
    cfg.validate()
    rec = HierTrace() if trace else None
    if trace and q.shape[0] != 1:
        raise DataError("tracing supports a single sample at a time")

    # bottom level: objects per frame
    if cfg.use_object_graph:
        if objects is None:
            raise DataError("object features are required when the object graph is enabled")
        out_o = level_object(objects, q, params.object_unit, cfg, q_mask, query_global)
        frame_vecs = out_o.pooled
        if rec is not None and not cfg.sumpool_object:
            rec.level_object = _split_units(out_o, cfg.T)
        if cfg.use_appearance_ctx:
            if appearance is None:
                raise DataError("appearance features are required when use_appearance_ctx is set")
            frame_vecs = merge_context(frame_vecs, appearance, params.merge_appearance)
    elif cfg.use_frame_graph:
        if appearance is None:
            raise DataError("appearance features stand in for the object level but are missing")
        frame_vecs = appearance
    else:
        frame_vecs = None  # clip level runs directly over motion

    # middle level: frames per clip
    if frame_vecs is None:
        if motion is None:
            raise DataError("motion features are required when both lower levels are ablated")
        clip_vecs = motion
        merge_motion_in = False  # motion already is the input
    elif cfg.use_frame_graph:
        out_f = level_frame(frame_vecs, q, params.frame_unit, cfg, q_mask, query_global)
        clip_vecs = out_f.pooled
        if rec is not None and not cfg.sumpool_frame:
            rec.level_frame = _split_units(out_f, cfg.K)
        merge_motion_in = cfg.use_motion_ctx
    else:
        idx = torch.tensor(middle_frame_indices(cfg), device=frame_vecs.device)
        clip_vecs = frame_vecs.index_select(-2, idx)
        merge_motion_in = cfg.use_motion_ctx

    if merge_motion_in:
        if motion is None:
            raise DataError("motion features are required when use_motion_ctx is set")
        clip_vecs = merge_context(clip_vecs, motion, params.merge_motion)

    # top level: clips
    out_c = level_clip(clip_vecs, q, params.clip_unit, cfg, q_mask, query_global)
    if rec is not None and not cfg.sumpool_clip:
        rec.level_clip = [{
            "alpha": None if out_c.alpha is None else out_c.alpha[0].detach(),
            "adjacency": out_c.adjacency[0].detach(),
            "beta": out_c.beta[0].detach(),
        }]
    return out_c.pooled, rec
