import json

import numpy as np
import pytest

from vgqa.config import HierarchyConfig
from vgqa.errors import ConfigError, GenerationError
from vgqa.synth import (answer_vocabulary, build_dataset, build_vocab,
                        default_world, make_questions, oracle_answer,
                        render_features, sample_script, script_boxes,
                        world_from_grammar)

CFG = HierarchyConfig(K=4, L=8, gamma=0.25, N=3, M=8, d=16, H=2)


@pytest.fixture(scope="module")
def world():
    return default_world(d_r=8, d_m=8, d_a=8)


def test_world_validation_catches_bad_grammar(world):
    grammar = world.grammar_dict()
    grammar["activities"]["broken"] = ["move"]  # too short
    with pytest.raises(ConfigError):
        world_from_grammar(grammar)


def test_prototypes_are_unit_norm(world):
    for key, vec in world.prototypes.items():
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6, key


def test_script_determinism(world):
    s1 = sample_script(world, CFG, 123)
    s2 = sample_script(world, CFG, 123)
    assert s1 == s2
    s3 = sample_script(world, CFG, 124)
    assert s1 != s3


def test_script_covers_event_verbs(world):
    s = sample_script(world, CFG, 7)
    want = [v for a in s.activities for v in world.activities[a]]
    # clip verbs are the event's verbs in activity order, possibly repeated
    seen = []
    for v in s.clip_verbs:
        if not seen or seen[-1] != v:
            seen.append(v)
    assert seen == want
    assert set(s.activities) == set(world.events[s.event])


def test_script_cast_distinct(world):
    s = sample_script(world, CFG, 11)
    classes = [o.cls for o in s.objects]
    attrs = [o.attribute for o in s.objects]
    assert len(set(classes)) == len(classes)
    assert len(set(attrs)) == len(attrs)


def test_adjacent_pair_geometry(world):
    """The planted pair must be each other's nearest neighbor in every frame."""
    s = sample_script(world, CFG, 13)
    boxes = script_boxes(s, CFG)
    a, b = s.adjacent_pair
    centers = np.stack([(boxes[..., 0] + boxes[..., 2]) / 2,
                        (boxes[..., 1] + boxes[..., 3]) / 2], axis=-1)
    for t in range(CFG.T):
        dist = np.linalg.norm(centers[t] - centers[t, a], axis=-1)
        dist[a] = np.inf
        assert dist.argmin() == b


def test_too_small_k_rejected(world):
    small = HierarchyConfig(K=2, L=4, gamma=0.5, N=3, M=8, d=16, H=2)
    with pytest.raises(GenerationError):
        sample_script(world, small, 0)


def test_features_reflect_prototypes(world):
    """With zero noise, features are exact prototype sums."""
    world0 = world_from_grammar({**world.grammar_dict(), "noise_sigma": 0.0})
    s = sample_script(world0, CFG, 3)
    bundle = render_features(s, world0, CFG, 3)
    for k, verb in enumerate(s.clip_verbs):
        np.testing.assert_allclose(bundle.motion[k], world0.prototype("verb", verb), atol=1e-6)
    for i, obj in enumerate(s.objects):
        want = world0.prototype("class", obj.cls) + world0.prototype("attr", obj.attribute)
        np.testing.assert_allclose(bundle.region_feats[0, i], want, atol=1e-6)


def test_vocab_has_pad_zero_and_no_collisions(world):
    vocab = build_vocab(world, CFG)
    assert vocab["<pad>"] == 0
    assert len(set(vocab.values())) == len(vocab)
    for w in ("what", "clip0", "cat", "parade"):
        assert w in vocab


def test_oracle_answers_match_generated(world):
    """Questions carry answers the script-level oracle re-derives."""
    vocab = build_vocab(world, CFG)
    inv = {v: k for k, v in vocab.items()}
    for seed in range(20):
        script = sample_script(world, CFG, seed)
        for s in make_questions(script, world, CFG, "mc", seed):
            words = [inv[t] for t in s.question_tokens]
            want = oracle_answer(script, world, CFG, words)
            got = inv[s.candidates[s.answer_index][0]]
            assert got == want, (seed, words)


def test_mc_distractors_same_category_and_distinct(world):
    pools = {"object": set(world.object_classes), "relation": set(world.object_classes),
             "action": set(world.verbs), "event": set(world.events)}
    vocab = build_vocab(world, CFG)
    inv = {v: k for k, v in vocab.items()}
    script = sample_script(world, CFG, 5)
    for s in make_questions(script, world, CFG, "mc", 5):
        cands = [inv[c[0]] for c in s.candidates]
        assert len(cands) == CFG.num_choices
        assert len(set(cands)) == len(cands)
        assert set(cands) <= pools[s.granularity_tag]


def test_oe_answer_indices(world):
    answers = answer_vocabulary(world)
    script = sample_script(world, CFG, 9)
    vocab = build_vocab(world, CFG)
    inv = {v: k for k, v in vocab.items()}
    for s in make_questions(script, world, CFG, "oe", 9):
        assert s.candidates == []
        words = [inv[t] for t in s.question_tokens]
        assert answers[s.answer_index] == oracle_answer(script, world, CFG, words)


def test_build_dataset_layout_and_determinism(tmp_path, world):
    sizes = {"train": 3, "val": 2, "test": 1}
    d1 = build_dataset(world, CFG, sizes, 42, str(tmp_path / "a"))
    d2 = build_dataset(world, CFG, sizes, 42, str(tmp_path / "b"))
    assert d1.episode_count == 6
    for split, count in sizes.items():
        assert len(d1.splits[split]) == 4 * count
    for name in ("dataset.json", "vocab.json", "world.json", "train.json"):
        b1 = (tmp_path / "a" / name).read_bytes()
        b2 = (tmp_path / "b" / name).read_bytes()
        assert b1 == b2, name
    f1 = (tmp_path / "a" / "features" / "ep00000.npz").read_bytes()
    f2 = (tmp_path / "b" / "features" / "ep00000.npz").read_bytes()
    assert f1 == f2
    meta = json.loads((tmp_path / "a" / "dataset.json").read_text())
    assert meta["mode"] == "mc" and meta["structure"]["K"] == CFG.K


def test_split_episodes_disjoint(tmp_path, world):
    ds = build_dataset(world, CFG, {"train": 2, "val": 2, "test": 2}, 1, str(tmp_path / "ds"))
    refs = {split: {s.video_ref for s in samples} for split, samples in ds.splits.items()}
    assert not (refs["train"] & refs["val"])
    assert not (refs["train"] & refs["test"])
    assert not (refs["val"] & refs["test"])
