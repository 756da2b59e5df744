"""Answer scoring and losses for multi-choice and open-ended QA."""

import numpy as np
import torch
from torch import nn

from . import activations
from .config import MC, OE
from .errors import ConfigError

PROB_FLOOR = 1e-12  # clamp before log in the cross-entropy


class DecoderParams(nn.Module):
    def __init__(self, d, mode, answer_set_size=0):
        super().__init__()
        self.mode = mode
        if mode == MC:
            self.score = nn.Linear(d, 1)
        elif mode == OE:
            if answer_set_size < 1:
                raise ConfigError("open-ended decoder needs answer_set_size >= 1")
            self.fuse = nn.Linear(2 * d, d)
            self.score = nn.Linear(d, answer_set_size)
        else:
            raise ConfigError(f"unknown decoder mode {mode!r}")


def mc_scores(query_vecs, video_vecs, params):
    """Softmax over the candidate set of Hadamard-fusion logits.

    query_vecs/video_vecs: (..., C, d), one row per candidate (the video
    vector is recomputed per candidate because the holistic query
    conditions the hierarchy).  Returns (..., C) probabilities.
    """
    if query_vecs.shape[-2] < 2:
        raise ConfigError("multi-choice scoring needs at least 2 candidates")
    logits = params.score(query_vecs * video_vecs).squeeze(-1)
    return torch.softmax(logits, dim=-1)


def hinge_loss(scores, positive_index):
    """Sum over negative candidates of max(0, 1 + s_n - s_p).

    ``positive_index`` is an int for a single score row or a (...,) index
    tensor for batched rows; batched losses are averaged.
    """
    if isinstance(positive_index, int):
        if not 0 <= positive_index < scores.shape[-1]:
            raise ConfigError(f"positive_index {positive_index} out of range")
        positive_index = torch.tensor(positive_index, device=scores.device)
    idx = positive_index.long().expand(scores.shape[:-1]).unsqueeze(-1)
    pos = scores.gather(-1, idx)
    # the hinge is itself a kink; route it through the monitored relu so
    # finite-difference checks can detect crossings
    margins = activations.relu(1.0 + scores - pos)
    total = margins.sum(dim=-1) - margins.gather(-1, idx).squeeze(-1)
    return total.mean()


def oe_scores(query_vec, video_vec, params):
    """Distribution over the global answer set: (..., d) x2 -> (..., |A|)."""
    fused = activations.elu(params.fuse(torch.cat([query_vec, video_vec], dim=-1)))
    return torch.softmax(params.score(fused), dim=-1)


def ce_loss(scores, answer_index):
    """Negative log-probability of the true answer, probability-floored."""
    if isinstance(answer_index, int):
        picked = scores[..., answer_index]
    else:
        picked = scores.gather(-1, answer_index.unsqueeze(-1)).squeeze(-1)
    return -torch.log(torch.clamp(picked, min=PROB_FLOOR)).mean()


def predict(scores):
    """Argmax answer index with lowest-index tie-breaking."""
    arr = np.asarray(scores.detach().cpu().numpy() if torch.is_tensor(scores) else scores)
    return arr.argmax(axis=-1)
