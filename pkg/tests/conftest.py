import pytest
import torch

from vgqa.config import HierarchyConfig
from vgqa.synth import build_dataset, default_world

TINY = dict(K=4, L=8, gamma=0.25, N=3, M=8, d=16, H=2)


@pytest.fixture
def tiny_cfg():
    return HierarchyConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small generated dataset shared by the slower integration tests."""
    root = tmp_path_factory.mktemp("tinyds")
    cfg = HierarchyConfig(**TINY)
    world = default_world(d_r=8, d_m=8, d_a=8)
    build_dataset(world, cfg, {"train": 6, "val": 3, "test": 3}, seed=0,
                  out_dir=str(root), mode="mc")
    return str(root)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
