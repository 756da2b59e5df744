"""Structural and training configuration.

``HierarchyConfig`` carries every structural hyperparameter of the model
plus the ablation switches; ``TrainConfig`` the optimization settings.
``RunConfig`` bundles both with filesystem paths for the CLI and supports
dotted-key overrides (``train.seed=3``).
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

MC = "mc"
OE = "oe"


@dataclass
class HierarchyConfig:
    # structure: K clips of L dense frames, gamma-subsampled sparse stream,
    # N regions per sparse frame, question capacity M, hidden width d,
    # H graph layers per unit
    K: int = 4
    L: int = 16
    gamma: float = 0.25
    N: int = 5
    M: int = 20
    d: int = 64
    H: int = 2

    # level switches
    use_object_graph: bool = True
    use_frame_graph: bool = True
    use_clip_graph: bool = True
    # per-level query conditioning
    cond_object: bool = True
    cond_frame: bool = True
    cond_clip: bool = True
    # replace token-wise conditioning with a global query concat at all levels
    global_query_condition: bool = False
    # substitute a level's graph unit with a plain sum over its input nodes
    sumpool_object: bool = False
    sumpool_frame: bool = False
    sumpool_clip: bool = False
    # global context merges
    use_appearance_ctx: bool = True
    use_motion_ctx: bool = True

    decoder_mode: str = MC
    num_choices: int = 5
    answer_set_size: int = 0

    @property
    def frames_per_clip(self):
        return int(round(self.gamma * self.L))

    @property
    def T(self):
        return self.K * self.frames_per_clip

    def validate(self):
        if self.K < 1 or self.N < 1 or self.H < 1 or self.M < 1 or self.L < 1:
            raise ConfigError("K, L, N, M, H must all be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0,1), got {self.gamma}")
        if abs(self.gamma * self.L - round(self.gamma * self.L)) > 1e-9 or self.frames_per_clip < 1:
            raise ConfigError(f"gamma*L must be a positive integer, got {self.gamma * self.L}")
        if self.d % 2 != 0 or self.d < 2:
            raise ConfigError(f"d must be even and >= 2, got {self.d}")
        for name in ("object", "frame", "clip"):
            if getattr(self, f"sumpool_{name}") and not getattr(self, f"use_{name}_graph"):
                raise ConfigError(f"sumpool_{name} requires use_{name}_graph")
        if not self.use_clip_graph:
            raise ConfigError("the top-level aggregation cannot be removed (use sumpool_clip instead)")
        if self.decoder_mode not in (MC, OE):
            raise ConfigError(f"decoder_mode must be {MC!r} or {OE!r}, got {self.decoder_mode!r}")
        if self.decoder_mode == MC and self.num_choices < 2:
            raise ConfigError("multi-choice mode needs at least 2 candidates")
        if self.decoder_mode == OE and self.answer_set_size < 1:
            raise ConfigError("open-ended mode needs answer_set_size >= 1")
        return self


@dataclass
class TrainConfig:
    lr_stage1: float = 1e-4
    lr_stage2: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 25
    seed: int = 0
    stage2_enabled: bool = True
    float64: bool = False

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_stage1 < 0 or self.lr_stage2 < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.lr_stage2 > self.lr_stage1:
            raise ConfigError("lr_stage2 must not exceed lr_stage1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        return self


@dataclass
class DataConfig:
    dataset_dir: str = ""
    out_dir: str = "runs"
    train_episodes: int = 200
    val_episodes: int = 50
    test_episodes: int = 50
    noise_sigma: float = 0.1
    embed_dim: int = 32
    world_path: str = ""

    def validate(self):
        if min(self.train_episodes, self.val_episodes, self.test_episodes) < 0:
            raise ConfigError("episode counts must be nonnegative")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        return self


@dataclass
class RunConfig:
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        self.hierarchy.validate()
        self.train.validate()
        self.data.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _apply_section(obj, values, prefix):
    known = {f.name: f.type for f in dataclasses.fields(obj)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}{key}")
        setattr(obj, key, val)


def run_config_from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    cfg = RunConfig()
    for section, obj in (("hierarchy", cfg.hierarchy), ("train", cfg.train), ("data", cfg.data)):
        values = raw.get(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _apply_section(obj, values, f"{section}.")
    unknown = set(raw) - {"hierarchy", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg.validate()


def load_run_config(path, overrides=()):
    """Load a RunConfig JSON file and apply ``key.sub=value`` overrides.

    Precedence: overrides > file > defaults.  Override values are parsed
    as JSON when possible, else taken as strings.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, _, text = item.partition("=")
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.field")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        raw.setdefault(parts[0], {})
        if not isinstance(raw[parts[0]], dict):
            raise ConfigError(f"config section {parts[0]!r} must be an object")
        raw[parts[0]][parts[1]] = value
    return run_config_from_dict(raw)
