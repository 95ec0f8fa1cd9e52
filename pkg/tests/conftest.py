from pathlib import Path

import pytest

from mdksim.config import Flags, HardwareConfig, ModelConfig, RunConfig, SimConfig, load_config
from mdksim.model import build_quantized

ROOT = Path(__file__).resolve().parent.parent
DESK = ROOT / "configs" / "desk.yaml"
DEFAULT = ROOT / "configs" / "default.yaml"


@pytest.fixture(scope="session")
def desk_cfg() -> SimConfig:
    return load_config(DESK)


@pytest.fixture(scope="session")
def desk_model(desk_cfg):
    return build_quantized(desk_cfg.model, desk_cfg.run.seed)


def tiny_cfg(n_nodes=1, n_layers=2, prompt=4, gen=4, flags=None, **hw) -> SimConfig:
    model = ModelConfig(n_layers=n_layers, l_embed=64, n_heads=8, ffn_dim=256, vocab_size=128,
                        max_seq_len=64)
    return SimConfig(model, HardwareConfig(n_nodes=n_nodes, **hw), RunConfig(prompt, gen),
                     flags or Flags())
