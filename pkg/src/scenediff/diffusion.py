"""DDPM over per-agent action latents with an adaptive-norm transformer denoiser."""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import init_attention, multi_head_attention
from .errors import ConfigError, NumericError, ShapeError
from .tensor import linear_from


@dataclass
class DiffusionConfig:
    T_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    d_latent: int = 16
    d_hidden: int = 64
    n_blocks: int = 2
    heads: int = 2
    d_time: int = 16
    mlp_ratio: int = 4

    def validate(self):
        make_schedule(self.T_steps, self.beta_start, self.beta_end)
        if self.d_latent < 1 or self.d_hidden < 2 or self.n_blocks < 0 or self.mlp_ratio < 1:
            raise ConfigError("need d_latent >= 1, d_hidden >= 2, mlp_ratio >= 1, n_blocks >= 0")
        if self.heads < 1 or self.d_hidden % self.heads:
            raise ConfigError(f"d_hidden {self.d_hidden} is not divisible by heads {self.heads}")
        if self.d_time < 2 or self.d_time % 2:
            raise ConfigError(f"d_time must be an even number >= 2, got {self.d_time}")
        return self


@dataclass
class DiffusionSchedule:
    T_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray


def make_schedule(T_steps, beta_start, beta_end):
    """Linear beta schedule with derived alphas and cumulative products."""
    if T_steps < 1:
        raise ConfigError(f"T_steps must be >= 1, got {T_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T_steps)
    alphas = 1.0 - betas
    return DiffusionSchedule(T_steps, betas, alphas, np.cumprod(alphas))


def _check_t(t, sched):
    if not 0 <= t < sched.T_steps:
        raise IndexError(f"diffusion step {t} outside [0, {sched.T_steps})")


def forward_noise(x0, t, eps, sched):
    """Closed-form q(x_t | x_0) draw given the caller's noise."""
    _check_t(t, sched)
    ab = sched.alpha_bars[t]
    if isinstance(x0, T.Tensor) or isinstance(eps, T.Tensor):
        return math.sqrt(ab) * T.as_tensor(x0) + math.sqrt(1.0 - ab) * T.as_tensor(eps)
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(eps)


def predict_x0(x_t, eps_hat, t, sched):
    """Invert the closed form for x_0 given a noise estimate."""
    ab = sched.alpha_bars[t]
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def timestep_embedding(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t * freqs
    return np.concatenate([np.cos(args), np.sin(args)])


# ------------------------------------------------------------------ denoiser


def init_dit_params(store, cfg, d_ctx, zero_gates=True):
    """Register denoiser parameters.

    With ``zero_gates`` the modulation rows producing each block's residual
    gates start at zero, so every block begins as the identity.
    """
    cfg.validate()
    h = cfg.d_hidden
    store.linear("dit.in", cfg.d_latent, h)
    store.linear("dit.time1", cfg.d_time, h)
    store.linear("dit.time2", h, h)
    for i in range(cfg.n_blocks):
        name = f"dit.block{i}"
        store.linear(f"{name}.mod", h + d_ctx, 6 * h)
        if zero_gates:
            for gate in (2, 5):
                store[f"{name}.mod.W"].data[:, gate * h:(gate + 1) * h] = 0.0
                store[f"{name}.mod.b"].data[gate * h:(gate + 1) * h] = 0.0
        init_attention(store, f"{name}.attn", h)
        store.linear(f"{name}.mlp1", h, cfg.mlp_ratio * h)
        store.linear(f"{name}.mlp2", cfg.mlp_ratio * h, h)
    store.linear("dit.final.mod", h + d_ctx, 2 * h)
    store.linear("dit.head", h, cfg.d_latent)


def _modulate(x, shift, scale):
    return x * (1.0 + scale) + shift


def _conditioning(t, context, params, cfg):
    n = context.shape[0]
    temb = np.tile(timestep_embedding(t, cfg.d_time), (n, 1))
    te = linear_from(params, "dit.time2", T.silu(linear_from(params, "dit.time1", temb)))
    return T.silu(T.concat([te, context], axis=-1))


def final_head(x, cond, params, cfg):
    """Adaptive-norm output layer: linear(LN(x) * (1 + scale) + shift) back to latent width."""
    h = cfg.d_hidden
    mod = linear_from(params, "dit.final.mod", cond)
    return linear_from(params, "dit.head", _modulate(T.layer_norm(x), mod[:, :h], mod[:, h:]))


def dit_denoiser(x_t, t, context, params, cfg):
    """Predict the noise in ``x_t`` [A_p, d_latent] conditioned on step ``t`` and per-agent context."""
    x_t = T.as_tensor(x_t)
    context = T.as_tensor(context)
    h = cfg.d_hidden
    if x_t.ndim != 2 or x_t.shape[1] != cfg.d_latent:
        raise ShapeError(f"latent must be [A_p, {cfg.d_latent}], got {x_t.shape}")
    if context.ndim != 2 or context.shape[0] != x_t.shape[0]:
        raise ShapeError(f"context rows {context.shape} do not align with latent rows {x_t.shape}")
    cond = _conditioning(t, context, params, cfg)
    x = linear_from(params, "dit.in", x_t)
    for i in range(cfg.n_blocks):
        name = f"dit.block{i}"
        mod = linear_from(params, f"{name}.mod", cond)
        shift1, scale1, gate1, shift2, scale2, gate2 = (mod[:, j * h:(j + 1) * h] for j in range(6))
        a = _modulate(T.layer_norm(x), shift1, scale1)
        x = x + gate1 * multi_head_attention(a, a, cfg.heads, params, f"{name}.attn")
        m = T.layer_norm(x)
        m = linear_from(params, f"{name}.mlp2", T.silu(linear_from(params, f"{name}.mlp1", _modulate(m, shift2, scale2))))
        x = x + gate2 * m
    return final_head(x, cond, params, cfg)


def diffusion_loss(x0, t, eps, context, params, sched, cfg, denoiser=None):
    """MSE between the true noise and the denoiser's estimate at step ``t``."""
    x_t = forward_noise(x0, t, eps, sched)
    f = denoiser or (lambda xt, tt, ctx: dit_denoiser(xt, tt, ctx, params, cfg))
    eps_hat = f(x_t, t, context)
    diff = T.as_tensor(eps_hat) - T.as_tensor(eps)
    return T.mean(diff * diff)


def sample_action_latent(context, params, sched, cfg, rng_seed, denoiser=None, stochastic=True,
                         n_rows=None):
    """Ancestral DDPM sampling, x_T ~ N(0, I) down to an x_0 estimate.

    ``sigma_t = sqrt(beta_t)``; no noise is added on the last step.
    ``denoiser(x_t, t, context)`` overrides the learned network.
    """
    rng = np.random.default_rng(rng_seed)
    ctx = context.data if isinstance(context, T.Tensor) else np.asarray(context)
    n = ctx.shape[0] if n_rows is None else n_rows
    f = denoiser or (lambda xt, tt, c: dit_denoiser(xt, tt, c, params, cfg).data)
    x = rng.standard_normal((n, cfg.d_latent))
    with T.no_grad():
        for t in range(sched.T_steps - 1, -1, -1):
            eps_hat = np.asarray(T.as_tensor(f(x, t, ctx)).data)
            beta, alpha, ab = sched.betas[t], sched.alphas[t], sched.alpha_bars[t]
            x = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
            if stochastic and t > 0:
                x = x + math.sqrt(beta) * rng.standard_normal(x.shape)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite latent during reverse sampling at t={t}")
    return x
