"""Finite-difference verification of every differentiable block on a toy scene."""

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .decoder import DecoderConfig, decode_deltas
from .diffusion import DiffusionConfig, diffusion_loss, dit_denoiser
from .encoder import (EncoderConfig, embed_agent, embed_history, embed_lights, embed_map,
                      hd_map_former, other_agent_former)
from .model import ModelConfig, SceneModel
from .scenario import SceneGenConfig, generate_synthetic_scene, preprocess_world_centric
from .training import LossConfig, fde, huber, total_loss, virtual_trajectory, w_ade

THRESHOLD = 1e-4


@dataclass
class BlockResult:
    name: str
    max_rel_error: float
    worst_param: str
    n_coords: int
    seconds: float

    def passed(self, threshold=THRESHOLD):
        return self.max_rel_error < threshold


def toy_setup(seed=0, T_f=8):
    """Small model on a seeded 2-agent intersection scene (one predicted, with lights)."""
    scfg = SceneGenConfig(agent_count_range=(2, 2), predicted_count_range=(1, 1),
                          lane_families=("intersection",), horizon_future=T_f)
    scene = generate_synthetic_scene(seed, scfg)
    inputs = preprocess_world_centric(scene)
    mcfg = ModelConfig(
        encoder=EncoderConfig(d_model=8, heads=2),
        decoder=DecoderConfig(T_f=T_f, mlp_hidden=16, heads=2),
        diffusion=DiffusionConfig(T_steps=10, d_latent=4, d_hidden=8, n_blocks=2, heads=2, d_time=4, mlp_ratio=2),
        horizon_history=scfg.horizon_history,
    )
    model = SceneModel(mcfg, seed=seed)
    # open the residual gates so the checked gradients flow through every block
    rng = np.random.default_rng(seed + 1)
    for name, p in model.params.subset("dit.block").items():
        if name.endswith(".mod.W") or name.endswith(".mod.b"):
            p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    return model, inputs


def _project(out, seed):
    """Random linear functional making a tensor output scalar."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return T.sum(out * r)


def _blocks(model, inputs, seed):
    P = model.params
    ecfg, dcfg, fcfg = model.cfg.encoder, model.cfg.decoder, model.cfg.diffusion
    rng = np.random.default_rng(seed + 2)
    feat = inputs.agent_feat[:, 0, :]
    d = ecfg.d_model
    with T.no_grad():
        pred_tok = rng.standard_normal((inputs.n_predicted, d))
        other_tok = rng.standard_normal((len(inputs.other_index) + inputs.tl_feat.shape[0], d))
        map_tok = embed_map(inputs.map_feat, ecfg.map_patch_len, P, inputs.lane_lengths).data
    n_rows = max(inputs.n_predicted, 2)
    fused = rng.standard_normal((n_rows, d))
    x_t = rng.standard_normal((n_rows, fcfg.d_latent))
    ctx = rng.standard_normal((n_rows, d))
    gt = inputs.gt_future
    pred = T.Tensor(gt + rng.normal(0.0, 1.5, gt.shape), requires_grad=True)
    x0 = T.Tensor(rng.standard_normal((n_rows, fcfg.d_latent)), requires_grad=True)
    eps = rng.standard_normal((n_rows, fcfg.d_latent))
    lcfg = LossConfig()
    virtual = virtual_trajectory(gt, lcfg.virtual_knot_stride)
    t_mid = fcfg.T_steps // 2

    def embedding(_):
        a = embed_agent(feat[:, :2], feat[:, 2:], P)
        h = embed_history(inputs.motion, P, ecfg.heads)
        lights = embed_lights(inputs.tl_feat, P)
        m = embed_map(inputs.map_feat, ecfg.map_patch_len, P, inputs.lane_lengths)
        return _project(a, 1) + _project(h, 2) + _project(lights, 3) + _project(m, 4)

    def full(_):
        cfg = model.cfg.diffusion
        e = np.random.default_rng(seed + 3).standard_normal((inputs.n_predicted, cfg.d_latent))
        out = model.forward_train(inputs, t_mid, e)
        return total_loss(out.positions, gt, out.diffusion, lcfg, virtual).total

    params_of = lambda *prefixes: {k: v for k, v in P.items() if k.startswith(prefixes)}  # noqa: E731
    return {
        "embedding": (embedding, params_of("enc.agent", "enc.light", "enc.history", "enc.map")),
        "other_agent_former": (lambda _: _project(other_agent_former(T.Tensor(pred_tok), T.Tensor(other_tok), ecfg, P), 5),
                               params_of("enc.oaf")),
        "hd_map_former": (lambda _: _project(hd_map_former(T.Tensor(pred_tok), T.Tensor(map_tok), ecfg, P), 6),
                          params_of("enc.hdm")),
        "dit": (lambda _: _project(dit_denoiser(x_t, t_mid, ctx, P, fcfg), 7), params_of("dit.")),
        "decoder": (lambda _: _project(decode_deltas(fused, dcfg, P), 8), params_of("dec.")),
        "w_ade": (lambda p: w_ade(p["pred"], gt, lcfg.weights(gt.shape[1])), {"pred": pred}),
        "fde": (lambda p: fde(p["pred"], gt), {"pred": pred}),
        "huber_virtual": (lambda p: huber(p["pred"] - virtual, lcfg.huber_delta), {"pred": pred}),
        "diffusion": (lambda p: diffusion_loss(p["x0"], t_mid, eps, ctx, P, model.schedule, fcfg),
                      {"x0": x0, **params_of("dit.")}),
        "full": (full, dict(P.items())),
    }


BLOCK_NAMES = ("embedding", "other_agent_former", "hd_map_former", "dit", "decoder",
               "w_ade", "fde", "huber_virtual", "diffusion", "full")


def run_grad_checks(seed=0, max_coords=40, blocks=None):
    """Check each registered block; returns a list of :class:`BlockResult`."""
    model, inputs = toy_setup(seed)
    registry = _blocks(model, inputs, seed)
    results = []
    for name in blocks or BLOCK_NAMES:
        f, params = registry[name]
        t0 = time.perf_counter()
        r = T.grad_check(f, params, max_coords=max_coords, seed=seed, detail=True)
        results.append(BlockResult(name, r.max_rel_error, r.worst_param, r.n_coords, time.perf_counter() - t0))
    return results


def format_table(results, threshold=THRESHOLD):
    lines = [f"{'block':<20} {'max_rel_error':>14} {'coords':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.max_rel_error:>14.3e} {r.n_coords:>7}  {'PASS' if r.passed(threshold) else 'FAIL'}")
    return "\n".join(lines)
