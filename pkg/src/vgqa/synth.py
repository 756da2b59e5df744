"""Seeded generator of compositional synthetic VideoQA episodes.

The world grammar is hierarchical: atomic verbs compose into activities,
pairs of activities compose into events.  Each episode scripts an event
over the video's clips and places a persistent cast of attributed objects
in every frame; features are noisy prototype sums, so every question is
exactly answerable from the script.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .archive import load_named_arrays, save_named_arrays
from .datamodel import QASample, RawFeatureBundle, save_feature_archive
from .errors import ConfigError, DataError, GenerationError

GRANULARITY_TAGS = ("object", "relation", "action", "event")

FUNCTION_WORDS = ("what", "is", "the", "next", "to", "does", "do", "happening", "object", "in")


# ---------------------------------------------------------------------------
# world specification


@dataclass
class WorldSpec:
    object_classes: list
    attributes: list
    verbs: list
    activities: dict        # name -> verb sequence (2-3 verbs)
    events: dict            # name -> pair of activities
    event_weights: dict
    d_r: int
    d_m: int
    d_a: int
    noise_sigma: float
    prototypes: dict = field(default_factory=dict)  # key -> unit-norm vector

    def validate(self):
        if len(self.object_classes) < 8:
            raise ConfigError("world needs at least 8 object classes")
        if len(self.attributes) < 3:
            raise ConfigError("world needs at least 3 attributes")
        if len(self.verbs) < 6:
            raise ConfigError("world needs at least 6 verbs")
        for name, seq in self.activities.items():
            if not 2 <= len(seq) <= 3 or any(v not in self.verbs for v in seq):
                raise ConfigError(f"activity {name!r} must be a sequence of 2-3 known verbs")
        for name, acts in self.events.items():
            if len(acts) != 2 or any(a not in self.activities for a in acts):
                raise ConfigError(f"event {name!r} must pair two known activities")
        if set(self.event_weights) != set(self.events) or min(self.event_weights.values()) <= 0:
            raise ConfigError("event_weights must assign a positive weight to every event")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        for key, vec in self.prototypes.items():
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-5:
                raise ConfigError(f"prototype {key!r} is not unit-norm (|v|={norm:.6f})")
        return self

    def prototype(self, kind, name):
        return self.prototypes[f"{kind}:{name}"]

    def grammar_dict(self):
        # copies, so callers cannot mutate the spec through the dict
        return {
            "object_classes": list(self.object_classes),
            "attributes": list(self.attributes),
            "verbs": list(self.verbs),
            "activities": {k: list(v) for k, v in self.activities.items()},
            "events": {k: list(v) for k, v in self.events.items()},
            "event_weights": dict(self.event_weights),
            "d_r": self.d_r, "d_m": self.d_m, "d_a": self.d_a,
            "noise_sigma": self.noise_sigma,
        }


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _make_prototypes(grammar, rng):
    protos = {}
    for c in grammar["object_classes"]:
        protos[f"class:{c}"] = _unit(rng, grammar["d_r"])
        protos[f"classctx:{c}"] = _unit(rng, grammar["d_a"])
    for a in grammar["attributes"]:
        protos[f"attr:{a}"] = _unit(rng, grammar["d_r"])
    for v in grammar["verbs"]:
        protos[f"verb:{v}"] = _unit(rng, grammar["d_m"])
    for a in grammar["activities"]:
        protos[f"activity:{a}"] = _unit(rng, grammar["d_m"])
    for e in grammar["events"]:
        protos[f"scene:{e}"] = _unit(rng, grammar["d_a"])
    return protos


def world_from_grammar(grammar, proto_seed=7):
    spec = WorldSpec(
        object_classes=list(grammar["object_classes"]),
        attributes=list(grammar["attributes"]),
        verbs=list(grammar["verbs"]),
        activities={k: list(v) for k, v in grammar["activities"].items()},
        events={k: list(v) for k, v in grammar["events"].items()},
        event_weights=dict(grammar.get("event_weights")
                           or {e: 1.0 for e in grammar["events"]}),
        d_r=int(grammar["d_r"]), d_m=int(grammar["d_m"]), d_a=int(grammar["d_a"]),
        noise_sigma=float(grammar.get("noise_sigma", 0.1)),
    )
    spec.prototypes = _make_prototypes(spec.grammar_dict(), np.random.default_rng(proto_seed))
    return spec.validate()


def default_world(d_r=32, d_m=32, d_a=32, noise_sigma=0.1, proto_seed=7):
    grammar = {
        "object_classes": ["cat", "dog", "bird", "car", "ball", "cup", "book", "lamp", "tree", "fish"],
        "attributes": ["red", "blue", "green", "small", "big", "shiny"],
        "verbs": ["move", "rest", "spin", "jump", "shake", "slide", "rise", "drop"],
        "activities": {
            "wander": ["move", "rest"],
            "dance": ["spin", "jump"],
            "rattle": ["shake", "slide"],
            "hover": ["rise", "drop"],
            "chase": ["move", "jump"],
            "tumble": ["drop", "spin"],
        },
        "events": {
            "parade": ["wander", "dance"],
            "workout": ["dance", "chase"],
            "storm": ["rattle", "hover"],
            "drift": ["hover", "wander"],
            "ruckus": ["rattle", "tumble"],
            "carnival": ["tumble", "chase"],
        },
        "event_weights": None,
        "d_r": d_r, "d_m": d_m, "d_a": d_a,
        "noise_sigma": noise_sigma,
    }
    return world_from_grammar(grammar, proto_seed)


def load_world(path):
    try:
        with open(path) as fh:
            grammar = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read world spec {path}: {exc}") from exc
    return world_from_grammar(grammar, int(grammar.get("proto_seed", 7)))


# ---------------------------------------------------------------------------
# episode scripts


FRAME_W, FRAME_H = 320.0, 240.0
BOX_W_FRAC, BOX_H_FRAC = 0.10, 0.15
PAIR_OFFSET_FRAC = 0.06


@dataclass
class ScriptObject:
    cls: str
    attribute: str
    start: tuple     # center (x, y) at t=0, pixels
    velocity: tuple  # total center drift over the episode, pixels


@dataclass
class EpisodeScript:
    event: str
    activities: list        # temporal order
    activity_spans: list    # [start_clip, end_clip) per activity
    clip_verbs: list        # one verb per clip
    objects: list           # cast of ScriptObject, length N
    clip_roles: list        # (subject_idx, object_idx) per clip
    adjacent_pair: tuple    # cast indices that stay next to each other
    frame_size: tuple = (FRAME_W, FRAME_H)


def _rng_for(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, *stream]))


def sample_script(world, cfg, seed):
    """Deterministically sample one episode script from the grammar."""
    world.validate()
    rng = _rng_for(seed, 0)
    events = sorted(world.events)
    weights = np.array([world.event_weights[e] for e in events])
    event = events[rng.choice(len(events), p=weights / weights.sum())]

    order = rng.permutation(len(world.events[event]))
    activities = [world.events[event][i] for i in order]
    verbs = [v for a in activities for v in world.activities[a]]
    if len(verbs) > cfg.K:
        raise GenerationError(f"event {event!r} needs {len(verbs)} clips, config has K={cfg.K}")
    chunks = np.array_split(np.arange(cfg.K), len(verbs))
    clip_verbs = []
    for verb, chunk in zip(verbs, chunks):
        clip_verbs.extend([verb] * len(chunk))
    spans, pos = [], 0
    for a in activities:
        width = sum(len(chunks[i]) for i in range(pos, pos + len(world.activities[a])))
        start = sum(len(c) for c in chunks[:pos])
        spans.append((start, start + width))
        pos += len(world.activities[a])

    n = cfg.N
    if n > len(world.object_classes) or n > len(world.attributes):
        raise GenerationError("cast size N exceeds the number of classes or attributes")
    classes = [world.object_classes[i] for i in rng.choice(len(world.object_classes), n, replace=False)]
    attrs = [world.attributes[i] for i in rng.choice(len(world.attributes), n, replace=False)]

    # anchor slots spread along x; the adjacent pair shares one slot
    slots_x = np.linspace(0.15, 0.85, n) * FRAME_W
    slot_order = rng.permutation(n)
    pair = tuple(rng.choice(n, 2, replace=False))
    cast = []
    for i in range(n):
        cx = slots_x[slot_order[i]]
        cy = (0.5 + rng.uniform(-0.05, 0.05)) * FRAME_H
        vel = (rng.uniform(-5, 5), rng.uniform(-5, 5))
        cast.append(ScriptObject(cls=classes[i], attribute=attrs[i], start=(cx, cy), velocity=vel))
    # place the second pair member right next to the first, moving together
    a, b = pair
    cast[b] = ScriptObject(
        cls=cast[b].cls, attribute=cast[b].attribute,
        start=(cast[a].start[0] + PAIR_OFFSET_FRAC * FRAME_W, cast[a].start[1]),
        velocity=cast[a].velocity)

    roles = []
    for _ in range(cfg.K):
        subj = int(rng.integers(n))
        obj = int((subj + 1 + rng.integers(n - 1)) % n)
        roles.append((subj, obj))
    return EpisodeScript(event=event, activities=activities, activity_spans=spans,
                         clip_verbs=clip_verbs, objects=cast, clip_roles=roles,
                         adjacent_pair=pair)


def script_boxes(script, cfg):
    """Recompute the T x N x 4 pixel boxes from the script trajectories."""
    t_total, n = cfg.T, len(script.objects)
    w, h = script.frame_size
    bw, bh = BOX_W_FRAC * w / 2, BOX_H_FRAC * h / 2
    boxes = np.empty((t_total, n, 4), dtype=np.float64)
    for i, obj in enumerate(script.objects):
        frac = np.arange(t_total) / max(t_total - 1, 1)
        cx = np.clip(obj.start[0] + obj.velocity[0] * frac, bw + 1, w - bw - 1)
        cy = np.clip(obj.start[1] + obj.velocity[1] * frac, bh + 1, h - bh - 1)
        boxes[:, i, 0] = cx - bw
        boxes[:, i, 1] = cy - bh
        boxes[:, i, 2] = cx + bw
        boxes[:, i, 3] = cy + bh
    return boxes


def render_features(script, world, cfg, seed):
    """Noisy prototype-sum features for one scripted episode."""
    rng = _rng_for(seed, 1)
    sigma = world.noise_sigma
    t_total, n = cfg.T, len(script.objects)

    region = np.empty((t_total, n, world.d_r), dtype=np.float64)
    for i, obj in enumerate(script.objects):
        base = world.prototype("class", obj.cls) + world.prototype("attr", obj.attribute)
        region[:, i, :] = base
    region += sigma * rng.standard_normal(region.shape)

    motion = np.stack([world.prototype("verb", v) for v in script.clip_verbs])
    motion = motion + sigma * rng.standard_normal(motion.shape)

    ctx = np.mean([world.prototype("classctx", o.cls) for o in script.objects], axis=0)
    appearance = world.prototype("scene", script.event) + ctx
    appearance = np.tile(appearance, (t_total, 1)) + sigma * rng.standard_normal((t_total, world.d_a))

    bundle = RawFeatureBundle(
        motion=motion.astype(np.float32),
        appearance=appearance.astype(np.float32),
        region_feats=region.astype(np.float32),
        region_boxes=script_boxes(script, cfg).astype(np.float32),
        frame_size=np.array(script.frame_size, dtype=np.float32),
        frame_times=((np.arange(t_total) + 0.5) / t_total).astype(np.float32),
    )
    return bundle.validate()


# ---------------------------------------------------------------------------
# vocabulary and questions


def build_vocab(world, cfg):
    """Token -> id map; id 0 is the padding token."""
    words = ["<pad>"]
    words += list(FUNCTION_WORDS)
    words += [f"clip{k}" for k in range(cfg.K)]
    for group in (world.object_classes, world.attributes, world.verbs,
                  sorted(world.activities), sorted(world.events)):
        words += list(group)
    vocab = {}
    for w in words:
        if w in vocab:
            raise ConfigError(f"vocabulary collision on token {w!r}")
        vocab[w] = len(vocab)
    return vocab


def answer_vocabulary(world):
    """Global open-ended answer set: every class, verb and event."""
    return sorted(set(world.object_classes) | set(world.verbs) | set(world.events))


def _nearest_cast_index(script, cfg, anchor):
    boxes = script_boxes(script, cfg)[cfg.T // 2]
    centers = np.stack([(boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2], axis=1)
    dist = np.linalg.norm(centers - centers[anchor], axis=1)
    dist[anchor] = np.inf
    return int(dist.argmin())


def _question_texts(script, cfg, rng):
    """One (tag, tokens, answer) triple per granularity level."""
    cast = script.objects
    obj_idx = int(rng.integers(len(cast)))
    clip_idx = int(rng.integers(cfg.K))
    subj = cast[script.clip_roles[clip_idx][0]]
    pair_a, pair_b = script.adjacent_pair
    return [
        ("object", ["what", "is", "the", cast[obj_idx].attribute, "object"], cast[obj_idx].cls),
        ("relation", ["what", "is", "next", "to", cast[pair_a].cls], cast[pair_b].cls),
        ("action", ["what", "does", subj.cls, "do", "in", f"clip{clip_idx}"], script.clip_verbs[clip_idx]),
        ("event", ["what", "is", "happening"], script.event),
    ]


def oracle_answer(script, world, cfg, question_words):
    """Recompute a question's answer from the script alone."""
    q = list(question_words)
    if q == ["what", "is", "happening"]:
        return script.event
    if len(q) == 5 and q[:3] == ["what", "is", "the"] and q[4] == "object":
        for obj in script.objects:
            if obj.attribute == q[3]:
                return obj.cls
        raise DataError(f"no cast member has attribute {q[3]!r}")
    if len(q) == 5 and q[:4] == ["what", "is", "next", "to"]:
        for i, obj in enumerate(script.objects):
            if obj.cls == q[4]:
                return script.objects[_nearest_cast_index(script, cfg, i)].cls
        raise DataError(f"no cast member of class {q[4]!r}")
    if len(q) == 6 and q[0] == "what" and q[1] == "does" and q[3] == "do" and q[4] == "in":
        clip = int(q[5].removeprefix("clip"))
        return script.clip_verbs[clip]
    raise DataError(f"unrecognized question {q}")


def _candidate_pool(world, tag):
    if tag in ("object", "relation"):
        return list(world.object_classes)
    if tag == "action":
        return list(world.verbs)
    return sorted(world.events)


def make_questions(script, world, cfg, mode, seed, id_prefix="", video_ref=""):
    """Emit one exactly-answerable QASample per granularity tag."""
    rng = _rng_for(seed, 2)
    vocab = build_vocab(world, cfg)
    answers = answer_vocabulary(world)
    samples = []
    for j, (tag, words, answer) in enumerate(_question_texts(script, cfg, rng)):
        tokens = [vocab[w] for w in words]
        if mode == "mc":
            pool = [c for c in _candidate_pool(world, tag) if c != answer]
            if len(pool) < cfg.num_choices - 1:
                raise GenerationError(
                    f"cannot draw {cfg.num_choices - 1} distinct distractors for tag {tag!r}")
            picks = [pool[i] for i in rng.choice(len(pool), cfg.num_choices - 1, replace=False)]
            cands = picks + [answer]
            order = rng.permutation(cfg.num_choices)
            cands = [cands[i] for i in order]
            answer_index = cands.index(answer)
            candidates = [[vocab[c]] for c in cands]
        else:
            candidates = []
            answer_index = answers.index(answer)
        samples.append(QASample(
            sample_id=f"{id_prefix}q{j}_{tag}",
            question_tokens=tokens,
            candidates=candidates,
            answer_index=answer_index,
            granularity_tag=tag,
            video_ref=video_ref,
        ))
    return samples


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class SyntheticDataset:
    root: str
    splits: dict          # split -> list of QASample
    vocab: dict
    answer_vocab: list
    dims: dict
    episode_count: int


def build_dataset(world, cfg, sizes, seed, out_dir, mode="mc"):
    """Generate episodes + questions and write the on-disk dataset.

    ``sizes`` maps split name -> episode count; splits are disjoint by
    episode.  Fully deterministic in (world, cfg, sizes, seed).
    """
    world.validate()
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    vocab = build_vocab(world, cfg)
    answers = answer_vocabulary(world)
    meta = {"K": cfg.K, "L": cfg.L, "gamma": cfg.gamma, "N": cfg.N,
            "d_m": world.d_m, "d_a": world.d_a, "d_r": world.d_r}

    splits = {}
    epi_idx = 0
    for split in ("train", "val", "test"):
        count = int(sizes.get(split, 0))
        records = []
        for _ in range(count):
            epid = f"ep{epi_idx:05d}"
            script = sample_script(world, cfg, seed * 1_000_003 + epi_idx)
            bundle = render_features(script, world, cfg, seed * 1_000_003 + epi_idx)
            ref = f"features/{epid}.npz"
            save_feature_archive(bundle, os.path.join(out_dir, ref), meta)
            records.extend(make_questions(
                script, world, cfg, mode, seed * 1_000_003 + epi_idx,
                id_prefix=f"{epid}_", video_ref=ref))
            epi_idx += 1
        splits[split] = records
        with open(os.path.join(out_dir, f"{split}.json"), "w") as fh:
            json.dump([s.to_dict() for s in records], fh, sort_keys=True)

    with open(os.path.join(out_dir, "vocab.json"), "w") as fh:
        json.dump(vocab, fh, sort_keys=True)
    with open(os.path.join(out_dir, "world.json"), "w") as fh:
        json.dump(world.grammar_dict(), fh, sort_keys=True)
    save_named_arrays(os.path.join(out_dir, "prototypes.npz"),
                      world.prototypes, {"keys": sorted(world.prototypes)})
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump({
            "mode": mode,
            "seed": seed,
            "sizes": {k: int(sizes.get(k, 0)) for k in ("train", "val", "test")},
            "structure": meta,
            "M": cfg.M,
            "num_choices": cfg.num_choices if mode == "mc" else 0,
            "answer_vocab": answers,
            "vocab_size": len(vocab),
            "splits": {k: f"{k}.json" for k in splits},
        }, fh, sort_keys=True)
    return SyntheticDataset(root=out_dir, splits=splits, vocab=vocab,
                            answer_vocab=answers, dims={"d_m": world.d_m, "d_a": world.d_a, "d_r": world.d_r},
                            episode_count=epi_idx)
