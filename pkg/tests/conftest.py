import numpy as np
import pytest

from scenediff.decoder import DecoderConfig
from scenediff.diffusion import DiffusionConfig
from scenediff.encoder import EncoderConfig
from scenediff.model import ModelConfig
from scenediff.scenario import SceneGenConfig, generate_synthetic_scene


def small_model_config(T_f=8, d_model=16, **enc):
    return ModelConfig(
        encoder=EncoderConfig(d_model=d_model, heads=2, **enc),
        decoder=DecoderConfig(T_f=T_f, mlp_hidden=16, heads=2),
        diffusion=DiffusionConfig(T_steps=10, d_latent=4, d_hidden=8, n_blocks=2, heads=2, d_time=4, mlp_ratio=2),
    )


def small_scene(seed=0, T_f=8, family="intersection", agents=(4, 4), predicted=(2, 2)):
    cfg = SceneGenConfig(agent_count_range=agents, predicted_count_range=predicted,
                         lane_families=(family,), horizon_future=T_f)
    return generate_synthetic_scene(seed, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------ acceptance log

ACCEPTANCE = {}


def record(name, ok, detail):
    ACCEPTANCE[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
