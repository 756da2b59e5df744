import json

import numpy as np
import pytest
import torch

from vgqa.config import HierarchyConfig
from vgqa.data import load_dataset
from vgqa.errors import DataError
from vgqa.tracing import (TraceRecord, export_traces, import_traces,
                          record_from_dict, record_to_dict, render_trace,
                          top_down_path, trace_sample, validate_trace_dict)
from vgqa.training import align_config, make_model

CFG_KW = dict(K=4, L=8, gamma=0.25, N=3, M=8, d=16, H=2)


def _softmax(v):
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _record(cfg, seed=0):
    rng = np.random.default_rng(seed)
    rec = TraceRecord(sample_id=f"synthetic{seed}", prediction=1, answer_index=1)
    fpc = cfg.frames_per_clip
    for lv, count, n in (("O", cfg.T, cfg.N), ("F", cfg.K, fpc), ("C", 1, cfg.K)):
        for i in range(count):
            rec.levels[lv].append({
                "unit": i,
                "alpha": _softmax(rng.standard_normal((n, 4))),
                "A": _softmax(rng.standard_normal((n, n))),
                "beta": _softmax(rng.standard_normal(n)),
            })
    return rec.validate()


def test_validate_rejects_nonstochastic(tiny_cfg):
    rec = _record(tiny_cfg)
    rec.levels["C"][0]["A"][0, 0] += 0.1
    with pytest.raises(DataError):
        rec.validate()


def test_jsonl_round_trip(tiny_cfg, tmp_path):
    recs = [_record(tiny_cfg, s) for s in range(3)]
    path = tmp_path / "t.jsonl"
    export_traces(recs, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3
    back = import_traces(path)
    for a, b in zip(recs, back):
        assert a.sample_id == b.sample_id
        assert a.prediction == b.prediction
        for lv in ("O", "F", "C"):
            for ua, ub in zip(a.levels[lv], b.levels[lv]):
                # 9 significant digits: lossless for the float32-scale values
                np.testing.assert_allclose(ub["A"], ua["A"], rtol=1e-8, atol=1e-12)
                np.testing.assert_allclose(ub["beta"], ua["beta"], rtol=1e-8, atol=1e-12)
        # and a second export of the re-imported records is byte-identical
    export_traces(back, tmp_path / "t2.jsonl")
    assert (tmp_path / "t2.jsonl").read_bytes() == path.read_bytes()


def test_schema_validation():
    with pytest.raises(DataError):
        validate_trace_dict({"sample_id": "x"})
    with pytest.raises(DataError):
        validate_trace_dict({"sample_id": "x", "prediction": 0,
                             "levels": {"Z": []}})
    with pytest.raises(DataError):
        record_from_dict({"sample_id": "x", "prediction": 0,
                          "levels": {"O": [{"unit": 0, "alpha": None, "A": "bad", "beta": []}]}})


def test_top_down_path_argmax(tiny_cfg):
    rec = _record(tiny_cfg, seed=2)
    fpc = tiny_cfg.frames_per_clip
    clip = int(np.argmax(rec.levels["C"][0]["beta"]))
    local = int(np.argmax(rec.levels["F"][clip]["beta"]))
    frame = clip * fpc + local
    obj = int(np.argmax(rec.levels["O"][frame]["beta"]))
    assert top_down_path(rec, tiny_cfg) == (clip, frame, obj)


def test_top_down_path_requires_all_levels(tiny_cfg):
    rec = _record(tiny_cfg)
    rec.levels["F"] = []
    with pytest.raises(DataError):
        top_down_path(rec, tiny_cfg)


def test_trace_sample_end_to_end(tiny_dataset):
    cfg = HierarchyConfig(**CFG_KW)
    data = load_dataset(tiny_dataset, cfg)
    align_config(cfg, data)
    model = make_model(cfg, data, embed_dim=12, seed=0)
    split = data.splits["val"]
    rec = trace_sample(model, data, split, 0)
    assert rec.sample_id == split.samples[0].sample_id
    assert 0 <= rec.prediction < cfg.num_choices
    assert len(rec.levels["O"]) == cfg.T
    # alphas are trimmed to the real token count of the traced query
    q_len = int(split.lengths[0, rec.prediction])
    assert rec.levels["C"][0]["alpha"].shape[-1] == q_len
    clip, frame, obj = top_down_path(rec, cfg)
    assert 0 <= clip < cfg.K and 0 <= frame < cfg.T and 0 <= obj < cfg.N


def test_render_trace_writes_figures(tiny_cfg, tmp_path):
    rec = _record(tiny_cfg, seed=3)
    files = render_trace(rec, str(tmp_path))
    # every unit gets A + beta + alpha figures
    units = tiny_cfg.T + tiny_cfg.K + 1
    assert len(files) == 3 * units
    for f in files:
        assert (tmp_path / f.split("/")[-1]).stat().st_size > 0


def test_round_trip_preserves_dict_form(tiny_cfg):
    rec = _record(tiny_cfg, seed=4)
    d = record_to_dict(rec)
    rec2 = record_from_dict(json.loads(json.dumps(d)))
    assert record_to_dict(rec2) == d
