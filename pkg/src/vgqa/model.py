"""End-to-end model: projections + graph hierarchy + answer decoder."""

from dataclasses import dataclass

import torch
from torch import nn

from .config import MC, OE
from .datamodel import ObjectEncoder, QuestionEncoder, TemporalConv
from .decoder import DecoderParams, mc_scores, oe_scores
from .errors import DataError
from .hierarchy import HierarchyParams, hierarchy_forward

PAD_ID = 0


@dataclass
class FeatureDims:
    d_m: int   # raw motion width
    d_a: int   # raw appearance width
    d_r: int   # raw region width (before geometry/time concat)
    d_e: int   # token embedding width
    vocab_size: int


class VideoQAModel(nn.Module):
    def __init__(self, cfg, dims):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dims = dims
        self.embed = nn.Embedding(dims.vocab_size, dims.d_e, padding_idx=PAD_ID)
        self.question_enc = QuestionEncoder(dims.d_e, cfg.d)
        self.hier = HierarchyParams(cfg.d, cfg.H)
        if cfg.decoder_mode == MC:
            self.decoder = DecoderParams(cfg.d, MC)
        else:
            self.decoder = DecoderParams(cfg.d, OE, cfg.answer_set_size)
        # branches for unused inputs are never built nor evaluated, so
        # ablated-away features cannot influence the output
        if self.needs_objects:
            self.object_proj = ObjectEncoder(dims.d_r, cfg.d)
        if self.needs_appearance:
            self.appearance_proj = TemporalConv(dims.d_a, cfg.d)
        if self.needs_motion:
            self.motion_proj = TemporalConv(dims.d_m, cfg.d)

    @property
    def needs_objects(self):
        return self.cfg.use_object_graph

    @property
    def needs_appearance(self):
        c = self.cfg
        if c.use_object_graph:
            return c.use_appearance_ctx
        return c.use_frame_graph

    @property
    def needs_motion(self):
        c = self.cfg
        if not c.use_object_graph and not c.use_frame_graph:
            return True
        return c.use_motion_ctx

    @property
    def dtype(self):
        return self.embed.weight.dtype

    def encode_video(self, motion=None, appearance=None, objects=None):
        """Project raw video tensors into the hidden space.

        motion: (B,K,d_m); appearance: (B,T,d_a); objects: (B,T,N,d_r+8)
        with geometry/time already concatenated.  Only the branches the
        active configuration needs are evaluated.
        """
        out = {}
        if self.needs_motion:
            if motion is None:
                raise DataError("motion features required by the active configuration")
            out["motion"] = self.motion_proj(motion.to(self.dtype))
        if self.needs_appearance:
            if appearance is None:
                raise DataError("appearance features required by the active configuration")
            out["appearance"] = self.appearance_proj(appearance.to(self.dtype))
        if self.needs_objects:
            if objects is None:
                raise DataError("object features required by the active configuration")
            out["objects"] = self.object_proj(objects.to(self.dtype))
        return out

    def encode_question(self, tokens, lengths):
        """tokens: (B,M) padded ids; lengths: (B,).  Returns (q, f_q, mask)."""
        emb = self.embed(tokens)
        q, f_q = self.question_enc(emb, lengths)
        mask = torch.arange(tokens.shape[1], device=tokens.device).unsqueeze(0) < lengths.unsqueeze(1)
        return q, f_q, mask

    def video_vector(self, video, q, f_q, mask, trace=False):
        return hierarchy_forward(
            self.hier, self.cfg, q, f_q,
            motion=video.get("motion"), appearance=video.get("appearance"),
            objects=video.get("objects"), q_mask=mask, trace=trace)

    def forward_mc(self, motion, appearance, objects, queries, lengths):
        """queries: (B,C,M) one holistic query per candidate; lengths (B,C).

        Returns (scores (B,C), f_q (B,C,d), f_v (B,C,d)).
        """
        b, c, m = queries.shape
        q, f_q, mask = self.encode_question(queries.reshape(b * c, m), lengths.reshape(b * c))
        video = self.encode_video(
            motion=None if motion is None else motion.repeat_interleave(c, dim=0),
            appearance=None if appearance is None else appearance.repeat_interleave(c, dim=0),
            objects=None if objects is None else objects.repeat_interleave(c, dim=0))
        f_v, _ = self.video_vector(video, q, f_q, mask)
        f_q = f_q.reshape(b, c, -1)
        f_v = f_v.reshape(b, c, -1)
        return mc_scores(f_q, f_v, self.decoder), f_q, f_v

    def forward_oe(self, motion, appearance, objects, tokens, lengths):
        """tokens: (B,M); returns scores over the global answer set (B,|A|)."""
        q, f_q, mask = self.encode_question(tokens, lengths)
        video = self.encode_video(motion=motion, appearance=appearance, objects=objects)
        f_v, _ = self.video_vector(video, q, f_q, mask)
        return oe_scores(f_q, f_v, self.decoder)

    def traced_video_vector(self, motion, appearance, objects, tokens, lengths):
        """Single-sample (B=1) forward that also returns the HierTrace."""
        q, f_q, mask = self.encode_question(tokens, lengths)
        video = self.encode_video(motion=motion, appearance=appearance, objects=objects)
        return self.video_vector(video, q, f_q, mask, trace=True) + (f_q,)
