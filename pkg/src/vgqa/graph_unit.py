"""Query-conditioned graph attention unit.

One unit conditions a node set on the question tokens, builds a soft
row-stochastic adjacency from pairwise similarities, refines the nodes
with H graph-attention layers plus skip connections, and pools them into
a single descriptor with self-attention weights.  All operations accept
arbitrary leading batch dimensions on top of the (nodes, d) core shape.
"""

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from . import activations
from .errors import DataError

COND_TOKENS = "tokens"
COND_GLOBAL = "global"
COND_NONE = "none"


@dataclass
class GraphUnitOutput:
    nodes_out: Optional[torch.Tensor]   # (..., n, d); None in sum-pool mode
    pooled: torch.Tensor                # (..., d)
    alpha: Optional[torch.Tensor]       # (..., n, M) word attention, or None
    adjacency: Optional[torch.Tensor]   # (..., n, n), or None in sum-pool mode
    beta: Optional[torch.Tensor]        # (..., n), or None in sum-pool mode


class GraphUnitParams(nn.Module):
    """Learnable weights of one unit (shared by every unit at a level)."""

    def __init__(self, d, num_layers):
        super().__init__()
        if d % 2 != 0:
            raise DataError("graph unit width d must be even")
        self.d = d
        self.num_layers = num_layers
        self.w_value = nn.Parameter(torch.empty(d, d // 2))
        self.w_key = nn.Parameter(torch.empty(d, d // 2))
        self.w_graph = nn.ParameterList(nn.Parameter(torch.empty(d, d)) for _ in range(num_layers))
        self.w_pool = nn.Parameter(torch.empty(d, 1))
        # only used when conditioning with the global query vector
        self.global_proj = nn.Linear(2 * d, d)
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.d)
        for w in (self.w_value, self.w_key, self.w_pool, *self.w_graph):
            nn.init.uniform_(w, -bound, bound)


def query_condition(x, q, q_mask=None):
    """Augment each node with word features attended by dot-product.

    x: (..., n, d); q: (..., M, d); optional boolean q_mask (..., M) marks
    real tokens.  Returns (x_hat, alpha) with alpha row-stochastic over
    words.
    """
    if not torch.isfinite(x).all() or not torch.isfinite(q).all():
        raise DataError("query conditioning received non-finite inputs")
    logits = torch.matmul(x, q.transpose(-1, -2))  # (..., n, M)
    if q_mask is not None:
        logits = logits.masked_fill(~q_mask.unsqueeze(-2), float("-inf"))
    alpha = torch.softmax(logits, dim=-1)
    x_hat = x + torch.matmul(alpha, q)
    return x_hat, alpha


def build_adjacency(x_hat, w_value, w_key):
    """Row-softmax of pairwise similarities between projected nodes."""
    v = torch.matmul(x_hat, w_value)
    k = torch.matmul(x_hat, w_key)
    return torch.softmax(torch.matmul(v, k.transpose(-1, -2)), dim=-1)


def graph_attention(x_hat, adjacency, w_graph):
    """H graph-attention layers over (A + I), with a final skip connection."""
    h = x_hat
    eye = torch.eye(x_hat.shape[-2], dtype=x_hat.dtype, device=x_hat.device)
    prop = adjacency + eye
    for w in w_graph:
        h = activations.relu(torch.matmul(torch.matmul(prop, h), w))
    return x_hat + h


def pool_nodes(x_out, w_pool):
    """Self-attention pooling of the output nodes into one descriptor."""
    beta = torch.softmax(torch.matmul(x_out, w_pool).squeeze(-1), dim=-1)
    pooled = torch.matmul(beta.unsqueeze(-2), x_out).squeeze(-2)
    return pooled, beta


def unit_forward(x, q, params, condition=COND_TOKENS, sum_pool=False,
                 q_mask=None, query_global=None):
    """Run one unit end to end.

    ``condition`` selects token-wise attention conditioning, global-query
    concatenation, or none.  ``sum_pool=True`` bypasses the unit entirely
    and returns the plain sum of the input nodes.
    """
    if x.shape[-2] < 1:
        raise DataError("graph unit needs at least one input node")
    if sum_pool:
        return GraphUnitOutput(nodes_out=None, pooled=x.sum(dim=-2),
                               alpha=None, adjacency=None, beta=None)
    alpha = None
    if condition == COND_TOKENS:
        x_hat, alpha = query_condition(x, q, q_mask)
    elif condition == COND_GLOBAL:
        if query_global is None:
            raise DataError("global conditioning requires the global query vector")
        g = query_global.unsqueeze(-2).expand(*x.shape[:-1], x.shape[-1])
        x_hat = activations.elu(params.global_proj(torch.cat([x, g], dim=-1)))
    elif condition == COND_NONE:
        x_hat = x
    else:
        raise DataError(f"unknown condition mode {condition!r}")
    adjacency = build_adjacency(x_hat, params.w_value, params.w_key)
    nodes_out = graph_attention(x_hat, adjacency, list(params.w_graph))
    pooled, beta = pool_nodes(nodes_out, params.w_pool)
    return GraphUnitOutput(nodes_out=nodes_out, pooled=pooled, alpha=alpha,
                           adjacency=adjacency, beta=beta)
