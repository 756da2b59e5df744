import math

import numpy as np
import pytest
import torch

from vgqa.config import HierarchyConfig
from vgqa.datamodel import (QASample, QuestionEncoder, RawFeatureBundle,
                            TemporalConv, build_mc_query, geometric_embedding,
                            load_feature_archive, object_input_matrix,
                            save_feature_archive, temporal_embedding)
from vgqa.errors import ArchiveError, DataError


def _bundle(cfg, d_m=5, d_a=6, d_r=7, seed=0):
    rng = np.random.default_rng(seed)
    t = cfg.T
    n = cfg.N
    w, h = 320.0, 240.0
    x1 = rng.uniform(0, w - 30, (t, n))
    y1 = rng.uniform(0, h - 30, (t, n))
    boxes = np.stack([x1, y1, x1 + rng.uniform(5, 30, (t, n)),
                      y1 + rng.uniform(5, 30, (t, n))], axis=-1)
    return RawFeatureBundle(
        motion=rng.standard_normal((cfg.K, d_m)).astype(np.float32),
        appearance=rng.standard_normal((t, d_a)).astype(np.float32),
        region_feats=rng.standard_normal((t, n, d_r)).astype(np.float32),
        region_boxes=boxes.astype(np.float32),
        frame_size=np.array([w, h], dtype=np.float32),
        frame_times=((np.arange(t) + 0.5) / t).astype(np.float32),
    ).validate()


def test_bundle_validation_rejects_bad_boxes(tiny_cfg):
    b = _bundle(tiny_cfg)
    b.region_boxes[0, 0] = [10, 10, 5, 20]  # x1 >= x2
    with pytest.raises(DataError):
        b.validate()


def test_bundle_validation_rejects_nonfinite(tiny_cfg):
    b = _bundle(tiny_cfg)
    b.motion[0, 0] = np.nan
    with pytest.raises(DataError):
        b.validate()


def test_geometric_embedding_values():
    emb = geometric_embedding([32, 24, 96, 120], [320, 240])
    np.testing.assert_allclose(emb, [0.1, 0.1, 0.3, 0.5, 0.2, 0.4])


def test_temporal_embedding_values():
    np.testing.assert_allclose(temporal_embedding(3, 8, 1, 4), [0.375, 0.25])


def test_object_input_matrix_layout(tiny_cfg):
    b = _bundle(tiny_cfg, d_r=7)
    mat = object_input_matrix(b, tiny_cfg)
    assert mat.shape == (tiny_cfg.T, tiny_cfg.N, 7 + 8)
    t, n = 3, 1
    np.testing.assert_allclose(mat[t, n, :7], b.region_feats[t, n], rtol=1e-6)
    np.testing.assert_allclose(
        mat[t, n, 7:13], geometric_embedding(b.region_boxes[t, n], b.frame_size), rtol=1e-6)
    fpc = tiny_cfg.frames_per_clip
    np.testing.assert_allclose(mat[t, n, 13:], [t / tiny_cfg.T, (t // fpc) / tiny_cfg.K])


def test_feature_archive_round_trip(tmp_path, tiny_cfg):
    b = _bundle(tiny_cfg)
    meta = {"K": 4, "L": 8, "gamma": 0.25, "N": 3, "d_m": 5, "d_a": 6, "d_r": 7}
    path = tmp_path / "feat.npz"
    save_feature_archive(b, path, meta)
    loaded, manifest = load_feature_archive(path)
    assert manifest == meta
    np.testing.assert_array_equal(loaded.region_feats, b.region_feats)


def test_feature_archive_missing_manifest_key(tmp_path, tiny_cfg):
    from vgqa.archive import save_named_arrays
    from vgqa.datamodel import FEATURE_ARRAYS
    b = _bundle(tiny_cfg)
    arrays = {k: getattr(b, k) for k in FEATURE_ARRAYS}
    save_named_arrays(tmp_path / "x.npz", arrays, {"K": 4})
    with pytest.raises(ArchiveError):
        load_feature_archive(tmp_path / "x.npz")


def test_temporal_conv_is_windowed_linear():
    """Each output must be the conv of exactly its 3-frame window (zero pad)."""
    torch.manual_seed(0)
    conv = TemporalConv(5, 4).double()
    x = torch.randn(7, 5, dtype=torch.float64)
    y = conv(x)
    w = conv.conv.weight.detach().numpy()   # (4, 5, 3)
    bvec = conv.conv.bias.detach().numpy()
    xp = np.concatenate([np.zeros((1, 5)), x.numpy(), np.zeros((1, 5))])
    for t in range(7):
        window = xp[t:t + 3]                # (3, 5)
        want = np.einsum("oik,ki->o", w, window) + bvec
        np.testing.assert_allclose(y[t].detach().numpy(), want, atol=1e-12)


def test_temporal_conv_batch_broadcast():
    conv = TemporalConv(3, 4)
    x = torch.randn(2, 6, 5, 3)
    y = conv(x)
    assert y.shape == (2, 6, 5, 4)
    y0 = conv(x[0, 0])
    torch.testing.assert_close(y[0, 0], y0)


def test_question_encoder_final_state_matches_unpadded():
    """f_q must come from the last real token, unaffected by padding."""
    torch.manual_seed(1)
    enc = QuestionEncoder(6, 8).double()
    emb_full = torch.randn(1, 10, 6, dtype=torch.float64)
    length = torch.tensor([4])
    q_pad, fq_pad = enc(emb_full, length)
    q_exact, fq_exact = enc(emb_full[:, :4], torch.tensor([4]))
    torch.testing.assert_close(fq_pad, fq_exact)
    torch.testing.assert_close(q_pad[:, :4], q_exact)
    # padded rows carry no state
    assert torch.all(q_pad[:, 4:] == 0)


def test_question_encoder_forward_half_is_causal():
    """The forward d/2 half at position m only depends on tokens <= m."""
    torch.manual_seed(2)
    enc = QuestionEncoder(6, 8).double()
    emb = torch.randn(1, 5, 6, dtype=torch.float64)
    q, _ = enc(emb, torch.tensor([5]))
    emb2 = emb.clone()
    emb2[0, 4] += 1.0  # perturb the last token
    q2, _ = enc(emb2, torch.tensor([5]))
    torch.testing.assert_close(q[0, :4, :4], q2[0, :4, :4])  # forward half unchanged
    assert not torch.allclose(q[0, :4, 4:], q2[0, :4, 4:])   # backward half changed


def test_build_mc_query_truncates_question_not_candidate():
    q = list(range(1, 9))
    assert build_mc_query(q, [99], 8) == [1, 2, 3, 4, 5, 6, 7, 99]
    assert build_mc_query(q, [98, 99], 8) == [1, 2, 3, 4, 5, 6, 98, 99]
    assert build_mc_query([1, 2], [9], 8) == [1, 2, 9]
    with pytest.raises(DataError):
        build_mc_query([1], list(range(9)), 8)


def test_qasample_round_trip(tiny_cfg):
    s = QASample(sample_id="s0", question_tokens=[1, 2, 3], candidates=[[4], [5]],
                 answer_index=1, granularity_tag="object", video_ref="features/e.npz")
    s2 = QASample.from_dict(s.to_dict())
    assert s2 == s
    s2.validate(tiny_cfg)
    s2.answer_index = 7
    with pytest.raises(DataError):
        s2.validate(tiny_cfg)
