"""Composite training objective and the training loop."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .model import SceneModel, derive_seed
from .scenario import preprocess_world_centric

log = logging.getLogger(__name__)

TERMS = ("diffusion", "w_ade", "fde", "huber_virtual")


@dataclass
class LossConfig:
    step_weights: tuple = None  # None -> linear decay 2.0 -> 0.5 over T_f
    huber_delta: float = 1.0
    virtual_knot_stride: int = 5
    lambda_diffusion: float = 1.0
    lambda_wade: float = 1.0
    lambda_fde: float = 1.0
    lambda_huber: float = 1.0

    def weights(self, T_f):
        if self.step_weights is None:
            return default_step_weights(T_f)
        w = np.asarray(self.step_weights, dtype=np.float64)
        if w.shape != (T_f,):
            raise ConfigError(f"step_weights has {w.size} entries, expected T_f={T_f}")
        return w

    def validate(self, T_f=None):
        if self.huber_delta <= 0:
            raise ConfigError(f"huber_delta must be positive, got {self.huber_delta}")
        if self.virtual_knot_stride < 2:
            raise ConfigError(f"virtual_knot_stride must be >= 2, got {self.virtual_knot_stride}")
        if min(self.lambdas) < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if T_f is not None:
            _check_weights(self.weights(T_f))
        return self

    @property
    def lambdas(self):
        return (self.lambda_diffusion, self.lambda_wade, self.lambda_fde, self.lambda_huber)


def default_step_weights(T_f):
    return np.linspace(2.0, 0.5, T_f) if T_f > 1 else np.ones(1)


def _check_weights(w):
    if not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
        raise ConfigError("step weights must be finite, non-negative and not all zero")


# ---------------------------------------------------------------- loss terms


def _check_pair(pred, gt):
    if tuple(pred.shape) != tuple(np.shape(gt)):
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {np.shape(gt)}")


def w_ade(pred, gt, weights):
    """Per-agent step-weighted mean displacement, averaged over agents."""
    pred = T.as_tensor(pred)
    _check_pair(pred, gt)
    w = np.asarray(weights, dtype=np.float64)
    _check_weights(w)
    dist = T.norm(pred - np.asarray(gt), axis=-1)  # [A_p, T_f]
    per_agent = T.sum(dist * (w / w.sum()), axis=-1)
    return T.mean(per_agent)


def fde(pred, gt):
    pred = T.as_tensor(pred)
    _check_pair(pred, gt)
    gt = np.asarray(gt)
    return T.mean(T.norm(pred[:, -1, :] - gt[:, -1, :], axis=-1))


def huber(residuals, delta):
    return T.huber(residuals, delta)


# ------------------------------------------------------------- cubic spline


def natural_cubic_spline(x, y):
    """Second derivatives at the knots of the natural cubic spline through (x, y).

    Solves the tridiagonal system with the Thomas algorithm; end second
    derivatives are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    m = np.zeros(n)
    if n < 3:
        return m
    h = np.diff(x)
    rhs = 6.0 * (np.diff(y[1:]) / h[1:] - np.diff(y[:-1]) / h[:-1])
    diag = 2.0 * (h[:-1] + h[1:])
    sub = h[1:-1].copy()
    sup = h[1:-1].copy()
    k = n - 2
    c = np.zeros(k)
    d = np.zeros(k)
    c[0] = sup[0] / diag[0] if k > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, k):
        denom = diag[i] - sub[i - 1] * c[i - 1]
        if i < k - 1:
            c[i] = sup[i] / denom
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / denom
    inner = np.zeros(k)
    inner[-1] = d[-1]
    for i in range(k - 2, -1, -1):
        inner[i] = d[i] - c[i] * inner[i + 1]
    m[1:-1] = inner
    return m


def eval_cubic_spline(x, y, m, xq):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    i = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    h = x[i + 1] - x[i]
    a = (x[i + 1] - xq) / h
    b = (xq - x[i]) / h
    return (a * y[i] + b * y[i + 1]
            + ((a ** 3 - a) * m[i] + (b ** 3 - b) * m[i + 1]) * h * h / 6.0)


def knot_indices(T_f, stride):
    return sorted(set(range(0, T_f, stride)) | {T_f - 1})


def virtual_trajectory(gt_future, stride=5):
    """Smoothed future: natural cubic spline through every ``stride``-th point and the endpoint.

    Accepts [T_f, 2] or [A, T_f, 2]. Futures shorter than 4 steps are returned unchanged.
    """
    gt = np.asarray(gt_future, dtype=np.float64)
    if stride < 2:
        raise ConfigError(f"knot stride must be >= 2, got {stride}")
    if gt.ndim == 3:
        return np.stack([virtual_trajectory(g, stride) for g in gt]) if len(gt) else gt.copy()
    n = gt.shape[0]
    if n < 4:
        return gt.copy()
    knots = np.array(knot_indices(n, stride), dtype=np.float64)
    idx = knots.astype(int)
    xq = np.arange(n, dtype=np.float64)
    out = np.empty_like(gt)
    for c in range(gt.shape[1]):
        m = natural_cubic_spline(knots, gt[idx, c])
        out[:, c] = eval_cubic_spline(knots, gt[idx, c], m, xq)
    out[idx] = gt[idx]
    return out


def turning_sum(points):
    """Sum over vertices of the absolute heading change between consecutive segments."""
    d = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    th = np.arctan2(d[:, 1], d[:, 0])
    dth = np.mod(np.diff(th) + math.pi, 2 * math.pi) - math.pi
    return float(np.abs(dth).sum())


def bending_energy(points):
    """Sum over vertices of the squared heading change between consecutive segments."""
    d = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    th = np.arctan2(d[:, 1], d[:, 0])
    dth = np.mod(np.diff(th) + math.pi, 2 * math.pi) - math.pi
    return float((dth ** 2).sum())


# ---------------------------------------------------------------- composite


@dataclass
class LossBreakdown:
    total: T.Tensor
    diffusion: T.Tensor
    w_ade: T.Tensor
    fde: T.Tensor
    huber_virtual: T.Tensor

    def record(self):
        return {
            "total": float(self.total.data),
            "diffusion": float(self.diffusion.data),
            "w_ade": float(self.w_ade.data),
            "fde": float(self.fde.data),
            "huber_virtual": float(self.huber_virtual.data),
        }


def total_loss(positions, gt_future, diffusion_term, cfg, virtual=None):
    """Weighted sum of the diffusion, weighted-ADE, FDE and virtual-trajectory Huber terms."""
    positions = T.as_tensor(positions)
    gt = np.asarray(gt_future, dtype=np.float64)
    T_f = gt.shape[1]
    if virtual is None:
        virtual = virtual_trajectory(gt, cfg.virtual_knot_stride)
    terms = (
        T.as_tensor(diffusion_term),
        w_ade(positions, gt, cfg.weights(T_f)),
        fde(positions, gt),
        huber(positions - virtual, cfg.huber_delta),
    )
    total = None
    for lam, term in zip(cfg.lambdas, terms):
        total = lam * term if total is None else total + lam * term
    return LossBreakdown(total, *terms)


def _add_breakdowns(a, b):
    return LossBreakdown(*(getattr(a, f) + getattr(b, f) for f in ("total",) + TERMS))


# ---------------------------------------------------------------- train loop


@dataclass
class TrainConfig:
    steps: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints
    draws_per_step: int = 1  # (t, eps) draws averaged into each optimizer step

    def validate(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.draws_per_step < 1:
            raise ConfigError("draws_per_step must be >= 1")
        return self


def train_loop(dataset, model_cfg, loss_cfg=None, train_cfg=None, init_seed=0, train_seed=0,
               on_step=None, on_checkpoint=None):
    """Train a fresh :class:`SceneModel` on ``dataset`` (a list of scenes).

    Each step draws one scene, then ``draws_per_step`` diffusion steps with
    their noise, from a generator seeded by ``(train_seed, step)``; the
    composite loss is averaged over the draws. Runs are reproducible.
    Returns ``(model, log)`` where ``log`` holds one record per step.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    loss_cfg = (loss_cfg or LossConfig()).validate(model_cfg.decoder.T_f)
    train_cfg = (train_cfg or TrainConfig()).validate()
    model = SceneModel(model_cfg, seed=init_seed)
    prepared = []
    for scene in dataset:
        inputs = preprocess_world_centric(scene)
        if inputs.n_predicted == 0:
            continue
        model._check(inputs)
        prepared.append((inputs, virtual_trajectory(inputs.gt_future, loss_cfg.virtual_knot_stride)))
    if not prepared:
        raise DataError("no scene in the dataset has a predicted agent")

    state = T.AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    records = []
    sched = model.schedule
    for step in range(train_cfg.steps):
        rng = np.random.default_rng(derive_seed(train_seed, step))
        inputs, virtual = prepared[int(rng.integers(len(prepared)))]
        model.params.zero_grad()
        losses = None
        for _ in range(train_cfg.draws_per_step):
            t = int(rng.integers(sched.T_steps))
            eps = rng.standard_normal((inputs.n_predicted, model_cfg.diffusion.d_latent))
            out = model.forward_train(inputs, t, eps)
            draw = total_loss(out.positions, inputs.gt_future, out.diffusion, loss_cfg, virtual)
            losses = draw if losses is None else _add_breakdowns(losses, draw)
        if train_cfg.draws_per_step > 1:
            k = 1.0 / train_cfg.draws_per_step
            losses = LossBreakdown(*(k * getattr(losses, f) for f in ("total",) + TERMS))
        rec = losses.record()
        for term in ("total",) + TERMS:
            if not math.isfinite(rec[term]):
                bad = next((k for k in TERMS if not math.isfinite(rec[k])), term)
                raise DivergenceError(step, bad)
        losses.total.backward()
        T.adam_step(model.params, state)
        rec = {"step": step, **rec}
        records.append(rec)
        if on_step is not None:
            on_step(rec)
        if on_checkpoint is not None and train_cfg.checkpoint_every and (step + 1) % train_cfg.checkpoint_every == 0:
            on_checkpoint(step + 1, model)
        if step % 100 == 0:
            log.debug("step %d total %.4f", step, rec["total"])
    return model, records
