"""World-centric scene encoder: embedding blocks, agent former and map former."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, ValidationError
from .scenario import AGENT_TYPES, D_MOTION, LANE_TYPES, LIGHT_STATES
from .tensor import linear_from

D_POSE = 2
D_AGENT_FEAT = 2 + len(AGENT_TYPES)  # width, length, type one-hot
D_MAP_POINT = 2 + len(LANE_TYPES)
# absolute coordinates enter the embeddings in units of 10 m so that map and
# agent positions land on the same O(1) scale as the other features
POS_SCALE = 0.1


@dataclass
class EncoderConfig:
    d_model: int = 64
    heads: int = 4
    enable_other_agent_former: bool = True
    enable_hd_map_former: bool = True
    map_patch_len: int = 5
    n_layers: int = 1

    def validate(self):
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.map_patch_len < 2:
            raise ConfigError(f"map_patch_len must be >= 2, got {self.map_patch_len}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        return self


@dataclass
class SceneEncoding:
    predicted_tokens: T.Tensor
    other_tokens: T.Tensor
    map_tokens: T.Tensor
    fused: T.Tensor
    history: T.Tensor  # per-agent temporal tokens, all agents


# ------------------------------------------------------------------ attention


def init_attention(store, name, d):
    for proj in ("q", "k", "v", "o"):
        store.linear(f"{name}.{proj}", d, d)


def _split_heads(x, heads):
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, heads, d // heads))
    nd = len(lead)
    return T.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))


def _merge_heads(x):
    *lead, h, n, dk = x.shape
    nd = len(lead)
    x = T.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))
    return T.reshape(x, (*lead, n, h * dk))


def multi_head_attention(q_in, kv_in, heads, params, name):
    """Per-head scaled dot-product attention with learned Q/K/V/output projections.

    Accepts leading batch axes: q_in [..., Nq, d], kv_in [..., Nk, d].
    """
    d = q_in.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigError(f"width {d} is not divisible by heads {heads}")
    if kv_in.shape[-1] != d:
        raise ShapeError(f"attention widths differ: query {q_in.shape}, key/value {kv_in.shape}")
    q = _split_heads(linear_from(params, f"{name}.q", q_in), heads)
    k = _split_heads(linear_from(params, f"{name}.k", kv_in), heads)
    v = _split_heads(linear_from(params, f"{name}.v", kv_in), heads)
    return linear_from(params, f"{name}.o", _merge_heads(T.attention(q, k, v)))


# ----------------------------------------------------------------- embeddings


def init_encoder_params(store, cfg, d_latent, history_steps):
    cfg.validate()
    d, half = cfg.d_model, cfg.d_model // 2
    store.linear("enc.agent.pose", D_POSE, half)
    store.linear("enc.agent.feat", D_AGENT_FEAT, half)
    store.add("enc.agent.ln.gain", np.ones(d))
    store.add("enc.agent.ln.bias", np.zeros(d))
    store.linear("enc.light.state", len(LIGHT_STATES), half)
    store.add("enc.light.ln.gain", np.ones(d))
    store.add("enc.light.ln.bias", np.zeros(d))
    store.linear("enc.history.step", D_MOTION, d)
    store.uniform("enc.history.pos", (history_steps, d), 1.0 / np.sqrt(d))
    init_attention(store, "enc.history.attn", d)
    store.linear("enc.latent", d_latent, d)
    if cfg.enable_hd_map_former:
        store.linear("enc.map.patch", cfg.map_patch_len * D_MAP_POINT, d)
        store.add("enc.map.ln.gain", np.ones(d))
        store.add("enc.map.ln.bias", np.zeros(d))
    for layer in range(cfg.n_layers):
        if cfg.enable_other_agent_former:
            init_attention(store, f"enc.oaf{layer}.self", d)
            init_attention(store, f"enc.oaf{layer}.cross", d)
            store.linear(f"enc.oaf{layer}.out", d, d)
        if cfg.enable_hd_map_former:
            init_attention(store, f"enc.hdm{layer}.self", d)
            init_attention(store, f"enc.hdm{layer}.cross", d)
            store.linear(f"enc.hdm{layer}.out", d, d)


def _check_one_hot(v, what):
    v = np.asarray(v)
    if v.size and not (np.all((v == 0) | (v == 1)) and np.all(v.sum(axis=-1) == 1)):
        raise ValidationError(f"{what} must be one-hot")


def _pose_feature_block(pose, feats, feat_name, ln_name, params):
    e_p = linear_from(params, "enc.agent.pose", T.as_tensor(pose) * POS_SCALE)
    e_f = linear_from(params, feat_name, feats)
    h = T.layer_norm(T.concat([e_p, e_f], axis=-1), params[f"{ln_name}.gain"], params[f"{ln_name}.bias"])
    return T.relu(h)


def embed_agent(pose, feats, params):
    """ReLU(LayerNorm(concat(pose embedding, feature embedding))).

    pose [..., 2]; feats [..., 5] = (width, length, type one-hot).
    """
    _check_one_hot(T.as_tensor(feats).data[..., 2:], "agent type vector")
    return _pose_feature_block(pose, feats, "enc.agent.feat", "enc.agent.ln", params)


def embed_lights(tl_feat, params):
    """Traffic-light tokens from the current-step position and signal one-hot."""
    cur = tl_feat[:, -1, :]
    _check_one_hot(cur[:, 2:], "traffic-light state vector")
    return _pose_feature_block(cur[:, :2], cur[:, 2:], "enc.light.state", "enc.light.ln", params)


def embed_history(motion, params, heads):
    """Temporal encoding of motion deltas, mean-pooled to one token per agent."""
    motion = T.as_tensor(motion)
    steps = params["enc.history.pos"].shape[0]
    if motion.ndim != 3 or motion.shape[1:] != (steps, D_MOTION):
        raise ShapeError(f"motion must be [A, {steps}, {D_MOTION}], got {motion.shape}")
    h = linear_from(params, "enc.history.step", motion) + params["enc.history.pos"]
    h = h + multi_head_attention(h, h, heads, params, "enc.history.attn")
    return T.mean(h, axis=1)


def map_patches(map_feat, patch_len, lane_lengths=None):
    """Chunk each lane into ``patch_len``-point patches, flattened: [M, patch_len * D].

    The final patch of a lane is padded by repeating the lane's last point.
    """
    map_feat = np.asarray(map_feat)
    _, n_lanes, n_pts, dim = map_feat.shape
    if lane_lengths is None:
        lane_lengths = np.full(n_lanes, n_pts)
    rows = []
    for lane, n in zip(map_feat[0], lane_lengths):
        pts = lane[:n]
        n_patch = -(-n // patch_len)
        pad = n_patch * patch_len - n
        pts = np.concatenate([pts, np.repeat(pts[-1:], pad, axis=0)])
        rows.append(pts.reshape(n_patch, patch_len * dim))
    if not rows:
        return np.zeros((0, patch_len * dim))
    return np.concatenate(rows)


def embed_map(map_feat, patch_len, params, lane_lengths=None):
    """Map tokens [M, d_model]: ReLU(LayerNorm(linear(flattened patch))).

    The normalization makes keys nonlinear in patch position, which attention
    needs to pick out lanes near an agent rather than the map's extremes.
    """
    patches = map_patches(map_feat, patch_len, lane_lengths)
    if patches.shape[0] == 0:
        return T.Tensor(np.zeros((0, params["enc.map.patch.W"].shape[1])))
    scale = np.ones(D_MAP_POINT)
    scale[:2] = POS_SCALE
    h = linear_from(params, "enc.map.patch", patches * np.tile(scale, patch_len))
    return T.relu(T.layer_norm(h, params["enc.map.ln.gain"], params["enc.map.ln.bias"]))


# -------------------------------------------------------------------- formers


def _former(queries, context, heads, params, name):
    s = multi_head_attention(queries, queries, heads, params, f"{name}.self")
    c = multi_head_attention(s, context, heads, params, f"{name}.cross") if context.shape[0] else s
    return linear_from(params, f"{name}.out", c) + queries


def other_agent_former(pred_tokens, other_tokens, cfg, params):
    """Self-attention over predicted agents, cross-attention onto other agents, residual out."""
    if not cfg.enable_other_agent_former:
        return pred_tokens
    x = pred_tokens
    for layer in range(cfg.n_layers):
        x = _former(x, other_tokens, cfg.heads, params, f"enc.oaf{layer}")
    return x


def hd_map_former(agent_tokens, map_tokens, cfg, params):
    """Self-attention over agents, cross-attention onto map tokens, residual out."""
    if not cfg.enable_hd_map_former:
        return agent_tokens
    x = agent_tokens
    for layer in range(cfg.n_layers):
        x = _former(x, map_tokens, cfg.heads, params, f"enc.hdm{layer}")
    return x


def encode_scene(inputs, action_latent, cfg, params, history=None):
    """Embed every agent, inject the action latent into predicted agents, run the formers."""
    action_latent = T.as_tensor(action_latent)
    pred_idx, other_idx = inputs.predicted_index, inputs.other_index
    if action_latent.ndim != 2 or action_latent.shape[0] != len(pred_idx):
        raise ShapeError(f"action latent has shape {action_latent.shape}, expected {len(pred_idx)} rows")
    if history is None:
        history = embed_history(inputs.motion, params, cfg.heads)
    feat = inputs.agent_feat[:, 0, :]
    tokens = embed_agent(feat[:, :2], feat[:, 2:], params) + history

    pred = T.getitem(tokens, pred_idx) + linear_from(params, "enc.latent", action_latent)
    context = [T.getitem(tokens, other_idx)]
    if inputs.tl_feat.shape[0]:
        context.append(embed_lights(inputs.tl_feat, params))
    other = T.concat(context, axis=0) if len(context) > 1 else context[0]

    x = other_agent_former(pred, other, cfg, params)
    if cfg.enable_hd_map_former:
        map_tokens = embed_map(inputs.map_feat, cfg.map_patch_len, params, inputs.lane_lengths)
        x = hd_map_former(x, map_tokens, cfg, params)
    else:
        map_tokens = T.Tensor(np.zeros((0, cfg.d_model)))
    return SceneEncoding(predicted_tokens=pred, other_tokens=other, map_tokens=map_tokens,
                         fused=x, history=history)
