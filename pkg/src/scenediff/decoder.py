"""Trajectory decoder: per-step displacement head plus kinematic reconstruction."""

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import init_attention, multi_head_attention
from .errors import ConfigError, ShapeError
from .scenario import wrap_angle
from .tensor import linear_from

HEADING_EPS = 1e-6


@dataclass
class DecoderConfig:
    enable_self_attention: bool = True
    mlp_hidden: int = 128
    T_f: int = 80
    heads: int = 4

    def validate(self):
        if self.mlp_hidden < 1:
            raise ConfigError(f"mlp_hidden must be >= 1, got {self.mlp_hidden}")
        if self.T_f < 1:
            raise ConfigError(f"T_f must be >= 1, got {self.T_f}")
        return self


@dataclass
class TrajectoryBundle:
    """Decoded futures for the predicted agents of one scene (world-centric frame)."""

    scene_id: str
    agent_ids: list
    deltas: np.ndarray  # [A_p, T_f, 2]
    positions: np.ndarray  # [A_p, T_f, 2]
    headings: np.ndarray  # [A_p, T_f]
    speeds: np.ndarray  # [A_p, T_f]
    sample_seed: int = None

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "agent_ids": list(self.agent_ids),
            "positions": self.positions.tolist(),
            "headings": self.headings.tolist(),
            "speeds": self.speeds.tolist(),
            "sample_seed": self.sample_seed,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def init_decoder_params(store, cfg, d_model):
    cfg.validate()
    if cfg.enable_self_attention:
        if d_model % cfg.heads:
            raise ConfigError(f"d_model {d_model} is not divisible by decoder heads {cfg.heads}")
        init_attention(store, "dec.attn", d_model)
    store.linear("dec.mlp1", d_model, cfg.mlp_hidden)
    store.linear("dec.mlp2", cfg.mlp_hidden, 2 * cfg.T_f)


def decode_deltas(fused, cfg, params):
    """[A_p, d_model] -> per-step (dx, dy) displacements [A_p, T_f, 2]."""
    fused = T.as_tensor(fused)
    d_model = params["dec.mlp1.W"].shape[0]
    if fused.ndim != 2 or fused.shape[1] != d_model:
        raise ShapeError(f"fused encoding must be [A_p, {d_model}], got {fused.shape}")
    x = fused
    if cfg.enable_self_attention and fused.shape[0]:
        x = x + multi_head_attention(x, x, cfg.heads, params, "dec.attn")
    h = T.relu(linear_from(params, "dec.mlp1", x))
    out = linear_from(params, "dec.mlp2", h)
    return T.reshape(out, (fused.shape[0], cfg.T_f, 2))


def integrate_trajectory(start_pos, deltas):
    """Inclusive prefix sum of displacements added to each agent's start position."""
    if isinstance(deltas, T.Tensor):
        return T.cumsum(deltas, axis=1) + np.asarray(start_pos)[:, None, :]
    return np.asarray(start_pos)[:, None, :] + np.cumsum(deltas, axis=1)


def compute_heading(deltas, fallback=None, eps=HEADING_EPS):
    """atan2 of each displacement; near-zero steps carry the previous heading.

    ``fallback`` gives the per-agent heading used when the first step is stationary.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    n_agents, n_steps, _ = deltas.shape
    raw = wrap_angle(np.arctan2(deltas[..., 1], deltas[..., 0]))
    moving = np.hypot(deltas[..., 0], deltas[..., 1]) > eps
    prev = np.zeros(n_agents) if fallback is None else wrap_angle(np.asarray(fallback, dtype=np.float64))
    out = np.empty((n_agents, n_steps))
    for t in range(n_steps):
        prev = np.where(moving[:, t], raw[:, t], prev)
        out[:, t] = prev
    return out


def compute_speed(deltas, dt):
    """Displacement magnitude per step divided by the step duration."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    deltas = np.asarray(deltas, dtype=np.float64)
    return np.hypot(deltas[..., 0], deltas[..., 1]) / dt


def bundle_from_deltas(deltas, inputs, sample_seed=None):
    deltas = np.asarray(deltas, dtype=np.float64)
    pred = inputs.predicted_index
    return TrajectoryBundle(
        scene_id=inputs.scene_id,
        agent_ids=[inputs.agent_ids[i] for i in pred],
        deltas=deltas,
        positions=integrate_trajectory(inputs.current_pos[pred], deltas),
        headings=compute_heading(deltas, inputs.current_heading[pred]),
        speeds=compute_speed(deltas, inputs.dt),
        sample_seed=sample_seed,
    )


def ground_truth_deltas(inputs):
    start = inputs.current_pos[inputs.predicted_index][:, None, :]
    return np.diff(np.concatenate([start, inputs.gt_future], axis=1), axis=1)


def ground_truth_bundle(inputs):
    """Bundle replaying the recorded future; positions are the recorded points themselves."""
    b = bundle_from_deltas(ground_truth_deltas(inputs), inputs)
    b.positions = np.array(inputs.gt_future, dtype=np.float64)
    return b


def decode(fused, inputs, cfg, params, sample_seed=None):
    with T.no_grad():
        deltas = decode_deltas(fused, cfg, params).data
    return bundle_from_deltas(deltas, inputs, sample_seed)
