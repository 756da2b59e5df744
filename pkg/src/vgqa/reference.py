"""Independent brute-force references and gradient verification.

Everything here is written as explicit scalar loops in 64-bit numpy, on
purpose sharing nothing with the main modules beyond elementary math, so
it can serve as a trust anchor for them.  Weight-copying helpers at the
bottom are plumbing, not math.
"""

import math

import numpy as np
import torch

from . import activations
from .errors import DataError

REL_ERR_FLOOR = 1e-8  # denominator floor so 0/0 cannot occur


def _softmax_row(vals):
    m = max(vals)
    exps = [math.exp(v - m) for v in vals]
    s = sum(exps)
    return [e / s for e in exps]


def _relu(v):
    return v if v > 0.0 else 0.0


def _elu(v):
    return v if v > 0.0 else math.exp(v) - 1.0


def naive_query_condition(x, q):
    n, d = len(x), len(x[0])
    m = len(q)
    alpha = []
    x_hat = []
    for i in range(n):
        logits = [sum(x[i][c] * q[j][c] for c in range(d)) for j in range(m)]
        a = _softmax_row(logits)
        alpha.append(a)
        row = [x[i][c] + sum(a[j] * q[j][c] for j in range(m)) for c in range(d)]
        x_hat.append(row)
    return x_hat, alpha


def naive_adjacency(x_hat, w_value, w_key):
    n, d = len(x_hat), len(x_hat[0])
    half = len(w_value[0])
    v = [[sum(x_hat[i][c] * w_value[c][j] for c in range(d)) for j in range(half)] for i in range(n)]
    k = [[sum(x_hat[i][c] * w_key[c][j] for c in range(d)) for j in range(half)] for i in range(n)]
    adj = []
    for i in range(n):
        logits = [sum(v[i][j] * k[p][j] for j in range(half)) for p in range(n)]
        adj.append(_softmax_row(logits))
    return adj


def naive_graph_attention(x_hat, adj, w_graph):
    n, d = len(x_hat), len(x_hat[0])
    h = [row[:] for row in x_hat]
    for w in w_graph:
        agg = [[sum((adj[i][p] + (1.0 if i == p else 0.0)) * h[p][c] for p in range(n))
                for c in range(d)] for i in range(n)]
        h = [[_relu(sum(agg[i][c] * w[c][j] for c in range(d))) for j in range(d)]
             for i in range(n)]
    return [[x_hat[i][c] + h[i][c] for c in range(d)] for i in range(n)]


def naive_pool(x_out, w_pool):
    n, d = len(x_out), len(x_out[0])
    logits = [sum(x_out[i][c] * w_pool[c] for c in range(d)) for i in range(n)]
    beta = _softmax_row(logits)
    pooled = [sum(beta[i] * x_out[i][c] for i in range(n)) for c in range(d)]
    return pooled, beta


def naive_unit(x, q, params, condition="tokens", sum_pool=False, query_global=None):
    """Loop transcription of one query-conditioned graph unit.

    ``params`` is a plain dict of nested lists (see unit_params_numpy).
    Returns a dict with nodes_out, pooled, alpha, adjacency, beta.
    """
    x = [list(map(float, row)) for row in x]
    n, d = len(x), len(x[0])
    if n > 64:
        raise DataError("reference unit is meant for small instances only")
    if sum_pool:
        pooled = [sum(x[i][c] for i in range(n)) for c in range(d)]
        return {"nodes_out": None, "pooled": pooled, "alpha": None,
                "adjacency": None, "beta": None}
    alpha = None
    if condition == "tokens":
        q = [list(map(float, row)) for row in q]
        x_hat, alpha = naive_query_condition(x, q)
    elif condition == "global":
        w, b = params["global_w"], params["global_b"]
        g = list(map(float, query_global))
        x_hat = []
        for i in range(n):
            cat = x[i] + g
            x_hat.append([_elu(sum(w[r][c] * cat[c] for c in range(len(cat))) + b[r])
                          for r in range(d)])
    else:
        x_hat = x
    adj = naive_adjacency(x_hat, params["w_value"], params["w_key"])
    nodes_out = naive_graph_attention(x_hat, adj, params["w_graph"])
    pooled, beta = naive_pool(nodes_out, params["w_pool"])
    return {"nodes_out": nodes_out, "pooled": pooled, "alpha": alpha,
            "adjacency": adj, "beta": beta}


def _naive_merge(level_out, context, w, b):
    merged = []
    for t in range(len(level_out)):
        cat = list(map(float, context[t])) + list(level_out[t])
        merged.append([_elu(sum(w[r][c] * cat[c] for c in range(len(cat))) + b[r])
                       for r in range(len(b))])
    return merged


def naive_hierarchy(params, cfg, q, query_global, motion=None, appearance=None,
                    objects=None):
    """Loop transcription of the full three-level hierarchy.

    All inputs are nested lists / small numpy arrays for a single sample;
    returns the video vector as a list of floats.
    """
    fpc = cfg.frames_per_clip

    def mode(enabled):
        if not enabled:
            return "none"
        return "global" if cfg.global_query_condition else "tokens"

    if cfg.use_object_graph:
        frame_vecs = []
        for t in range(cfg.T):
            out = naive_unit(objects[t], q, params["object"], mode(cfg.cond_object),
                             cfg.sumpool_object, query_global)
            frame_vecs.append(out["pooled"])
        if cfg.use_appearance_ctx:
            frame_vecs = _naive_merge(frame_vecs, appearance,
                                      params["merge_appearance_w"], params["merge_appearance_b"])
    elif cfg.use_frame_graph:
        frame_vecs = [list(map(float, appearance[t])) for t in range(cfg.T)]
    else:
        frame_vecs = None

    if frame_vecs is None:
        clip_vecs = [list(map(float, motion[k])) for k in range(cfg.K)]
        merge_motion = False
    elif cfg.use_frame_graph:
        clip_vecs = []
        for k in range(cfg.K):
            out = naive_unit(frame_vecs[k * fpc:(k + 1) * fpc], q, params["frame"],
                             mode(cfg.cond_frame), cfg.sumpool_frame, query_global)
            clip_vecs.append(out["pooled"])
        merge_motion = cfg.use_motion_ctx
    else:
        clip_vecs = [frame_vecs[k * fpc + fpc // 2] for k in range(cfg.K)]
        merge_motion = cfg.use_motion_ctx

    if merge_motion:
        clip_vecs = _naive_merge(clip_vecs, motion,
                                 params["merge_motion_w"], params["merge_motion_b"])

    out = naive_unit(clip_vecs, q, params["clip"], mode(cfg.cond_clip),
                     cfg.sumpool_clip, query_global)
    return out["pooled"]


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def fd_gradient_check(loss_fn, named_params, step=1e-5, rel_tol=1e-4, kink_window=None):
    """Central finite differences vs autograd for every scalar parameter.

    Per parameter group reports the max relative error
    |analytic - fd| / max(|analytic|, |fd|, 1e-8) over non-skipped
    entries.  An entry is skipped (and counted) when its error exceeds
    ``rel_tol`` while some ReLU/ELU preactivation came within
    ``kink_window`` of zero during its evaluations; finite differences
    are meaningless across an activation kink.  Non-finite perturbed
    losses are reported, not fatal.
    """
    if kink_window is None:
        kink_window = 10.0 * step
    params = list(named_params)
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise DataError("loss is not finite at the unperturbed parameters")
    loss.backward()

    report = {}
    for name, p in params:
        analytic = (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        flat = p.data.reshape(-1)
        max_rel, skipped, nonfinite = 0.0, 0, 0
        for i in range(flat.numel()):
            orig = float(flat[i])

            def value_at(v):
                flat[i] = v
                with torch.no_grad(), activations.monitor_kinks() as mon:
                    out = float(loss_fn())
                return out, mon.min_abs

            f_plus, kink_plus = value_at(orig + step)
            f_minus, kink_minus = value_at(orig - step)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                nonfinite += 1
                continue
            fd = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[i])
            rel = abs(a - fd) / max(abs(a), abs(fd), REL_ERR_FLOOR)
            if rel > rel_tol and min(kink_plus, kink_minus) < kink_window:
                skipped += 1
                continue
            max_rel = max(max_rel, rel)
        report[name] = {"max_rel_err": max_rel, "skipped_kinks": skipped,
                        "nonfinite": nonfinite, "count": flat.numel()}
    return report


# ---------------------------------------------------------------------------
# weight extraction plumbing (copies only; no shared math)


def _mat(t):
    return [[float(v) for v in row] for row in t.detach().cpu().numpy()]


def unit_params_numpy(unit):
    w = unit.global_proj.weight
    return {
        "w_value": _mat(unit.w_value),
        "w_key": _mat(unit.w_key),
        "w_graph": [_mat(g) for g in unit.w_graph],
        "w_pool": [float(v) for v in unit.w_pool.detach().cpu().numpy().reshape(-1)],
        "global_w": _mat(w),
        "global_b": [float(v) for v in unit.global_proj.bias.detach().cpu().numpy()],
    }


def hierarchy_params_numpy(hier):
    return {
        "object": unit_params_numpy(hier.object_unit),
        "frame": unit_params_numpy(hier.frame_unit),
        "clip": unit_params_numpy(hier.clip_unit),
        "merge_appearance_w": _mat(hier.merge_appearance.weight),
        "merge_appearance_b": [float(v) for v in hier.merge_appearance.bias.detach().cpu().numpy()],
        "merge_motion_w": _mat(hier.merge_motion.weight),
        "merge_motion_b": [float(v) for v in hier.merge_motion.bias.detach().cpu().numpy()],
    }
