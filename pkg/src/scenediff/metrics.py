"""Evaluation metrics: displacement errors, kernel MMD and a collision diagnostic."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .decoder import ground_truth_bundle
from .errors import ConfigError, DataError, ShapeError
from .model import derive_seed
from .scenario import preprocess_world_centric

ROUNDING_FLOOR = 16 * np.finfo(np.float64).eps
CSV_HEADER = "ade,fde,speed_mmd,heading_mmd,collision_rate,n_scenes,n_samples"


@dataclass
class KernelConfig:
    kernel: str = "RBF"
    bandwidth: object = "median"  # positive float or "median"
    max_pool: int = 2000  # pools larger than this are subsampled (seeded)
    pool_seed: int = 0
    include_position_mmd: bool = False

    def validate(self):
        if self.kernel != "RBF":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")
        if self.bandwidth != "median":
            if isinstance(self.bandwidth, bool) or not isinstance(self.bandwidth, (int, float)) or self.bandwidth <= 0:
                raise ConfigError(f"bandwidth must be positive or 'median', got {self.bandwidth!r}")
        if self.max_pool < 2:
            raise ConfigError("max_pool must be >= 2")
        return self


@dataclass
class EvalReport:
    ade: float
    fde: float
    speed_mmd: float
    heading_mmd: float
    collision_rate: float
    n_scenes: int
    n_samples_per_scene: int
    kernel_sigma_speed: float
    kernel_sigma_heading: float
    kernel: str = "RBF"
    bandwidth_fallback: bool = False
    position_mmd: float = None

    def to_dict(self):
        d = asdict(self)
        if d["position_mmd"] is None:
            del d["position_mmd"]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def csv_row(self):
        vals = (self.ade, self.fde, self.speed_mmd, self.heading_mmd, self.collision_rate,
                self.n_scenes, self.n_samples_per_scene)
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals)

    def to_csv(self):
        return CSV_HEADER + "\n" + self.csv_row() + "\n"


# ------------------------------------------------------------- displacement


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return pred, gt


def ade(pred, gt):
    """Mean Euclidean error over agents and steps."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt):
    """Mean Euclidean error at the last step."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred[:, -1] - gt[:, -1], axis=-1).mean())


# ---------------------------------------------------------------------- mmd


def _as_points(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _sq_dists(a, b):
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def median_pairwise_distance(z):
    z = _as_points(z)
    d = np.sqrt(_sq_dists(z, z))
    iu = np.triu_indices(len(z), k=1)
    return float(np.median(d[iu])) if len(iu[0]) else 0.0


def kernel_bandwidth(X, Y, kcfg):
    """Resolve the RBF bandwidth; returns ``(sigma, fell_back)``."""
    if kcfg.bandwidth != "median":
        return float(kcfg.bandwidth), False
    sigma = median_pairwise_distance(np.concatenate([_as_points(X), _as_points(Y)]))
    if sigma <= 0:
        return 1.0, True
    return sigma, False


def mmd_squared(X, Y, kcfg=None, sigma=None):
    """Biased (V-statistic) squared MMD with an RBF kernel.

    Values inside the cancellation rounding band of ``kxx + kyy - 2 kxy`` are
    reported as exactly zero, so identical populations give 0 after the sqrt.
    """
    kcfg = (kcfg or KernelConfig()).validate()
    X, Y = _as_points(X), _as_points(Y)
    if len(X) < 1 or len(Y) < 1:
        raise DataError("mmd needs at least one sample in each set")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"sample dimensions differ: {X.shape} vs {Y.shape}")
    if sigma is None:
        sigma, _ = kernel_bandwidth(X, Y, kcfg)
    g = -0.5 / (sigma * sigma)
    kxx = np.exp(g * _sq_dists(X, X)).mean()
    kyy = np.exp(g * _sq_dists(Y, Y)).mean()
    kxy = np.exp(g * _sq_dists(X, Y)).mean()
    val = float(kxx + kyy - 2.0 * kxy)
    if val <= ROUNDING_FLOOR * (kxx + kyy):
        return 0.0
    return val


def _subsample(points, kcfg, tag):
    points = _as_points(points)
    if len(points) <= kcfg.max_pool:
        return points
    rng = np.random.default_rng(derive_seed(kcfg.pool_seed, tag))
    return points[np.sort(rng.choice(len(points), kcfg.max_pool, replace=False))]


def pooled_mmd(X, Y, kcfg):
    """sqrt(MMD^2) of two pools after capping their size; returns ``(mmd, sigma, fell_back)``."""
    kcfg = kcfg.validate()
    X = _subsample(X, kcfg, 1)
    Y = _subsample(Y, kcfg, 2)
    if len(X) == 0 or len(Y) == 0:
        raise DataError("empty sample pool")
    sigma, fell_back = kernel_bandwidth(X, Y, kcfg)
    return math.sqrt(mmd_squared(X, Y, kcfg, sigma=sigma)), sigma, fell_back


def _pool(bundles, attr):
    arrays = [np.asarray(getattr(b, attr)).ravel() for b in bundles]
    return np.concatenate(arrays) if arrays else np.zeros(0)


def heading_embedding(theta):
    theta = np.asarray(theta, dtype=np.float64).ravel()
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def speed_mmd(generated, reference, kcfg=None):
    """MMD between pooled per-step speeds of two bundle collections."""
    X, Y = _pool(generated, "speeds"), _pool(reference, "speeds")
    if X.size == 0 or Y.size == 0:
        raise DataError("empty speed pool")
    return pooled_mmd(X, Y, kcfg or KernelConfig())[0]


def heading_mmd(generated, reference, kcfg=None):
    """MMD between pooled headings embedded on the unit circle."""
    X, Y = _pool(generated, "headings"), _pool(reference, "headings")
    if X.size == 0 or Y.size == 0:
        raise DataError("empty heading pool")
    return pooled_mmd(heading_embedding(X), heading_embedding(Y), kcfg or KernelConfig())[0]


# ---------------------------------------------------------------- collisions


def box_corners(center, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    u = np.array([c, s]) * length / 2
    v = np.array([-s, c]) * width / 2
    center = np.asarray(center, dtype=np.float64)
    return np.array([center + u + v, center - u + v, center - u - v, center + u - v])


def boxes_overlap(c1, h1, l1, w1, c2, h2, l2, w2):
    """Separating-axis test for oriented rectangles, vectorized over leading axes.

    Boxes that merely touch are not counted as overlapping.
    """
    c1, c2 = np.asarray(c1, dtype=np.float64), np.asarray(c2, dtype=np.float64)
    h1, h2 = np.asarray(h1, dtype=np.float64), np.asarray(h2, dtype=np.float64)
    a1 = np.stack([np.cos(h1), np.sin(h1)], -1)
    b1 = np.stack([-np.sin(h1), np.cos(h1)], -1)
    a2 = np.stack([np.cos(h2), np.sin(h2)], -1)
    b2 = np.stack([-np.sin(h2), np.cos(h2)], -1)
    d = c2 - c1
    separated = np.zeros(np.broadcast_shapes(h1.shape, h2.shape), dtype=bool)
    for axis in (a1, b1, a2, b2):
        r1 = np.abs((axis * a1).sum(-1)) * l1 / 2 + np.abs((axis * b1).sum(-1)) * w1 / 2
        r2 = np.abs((axis * a2).sum(-1)) * l2 / 2 + np.abs((axis * b2).sum(-1)) * w2 / 2
        separated |= np.abs((axis * d).sum(-1)) >= r1 + r2
    return ~separated


def collision_rate(bundles, scenes, margin=0.0):
    """Fraction of generated agents whose box overlaps another agent's replayed box.

    Every other agent (either role) is replayed from ground truth. ``margin``
    inflates each footprint's length and width.
    """
    hits = total = 0
    for bundle, scene in zip(bundles, scenes):
        center = preprocess_world_centric(scene).world_center
        th = scene.horizon_history
        by_id = {a.agent_id: a for a in scene.agents}
        for k, agent_id in enumerate(bundle.agent_ids):
            me = by_id[agent_id]
            pos = bundle.positions[k] + center
            hit = False
            for other in scene.agents:
                if other.agent_id == agent_id:
                    continue
                ov = boxes_overlap(pos, bundle.headings[k], me.length + margin, me.width + margin,
                                   other.positions[th:], other.headings[th:],
                                   other.length + margin, other.width + margin)
                if np.any(ov):
                    hit = True
                    break
            hits += hit
            total += 1
    return hits / total if total else 0.0


# ---------------------------------------------------------------- evaluate


def evaluate(model, scenes, n_samples=1, seed=0, kcfg=None):
    """Sample ``n_samples`` futures per scene and score them against ground truth.

    ADE and FDE use the minimum-ADE sample of each scene; MMD pools every
    sample. Deterministic given ``seed``.
    """
    kcfg = (kcfg or KernelConfig()).validate()
    if not scenes:
        raise DataError("evaluation needs at least one scene")
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    scenes = sorted(scenes, key=lambda s: s.scene_id)
    ades, fdes = [], []
    generated, reference, all_bundles, all_scenes = [], [], [], []
    for si, scene in enumerate(scenes):
        inputs = preprocess_world_centric(scene)
        if inputs.n_predicted == 0:
            continue
        gt = ground_truth_bundle(inputs)
        reference.append(gt)
        best = None
        for k in range(n_samples):
            b = model.sample(inputs, derive_seed(seed, si, k))
            generated.append(b)
            all_bundles.append(b)
            all_scenes.append(scene)
            a = ade(b.positions, inputs.gt_future)
            if best is None or a < best[0]:
                best = (a, fde(b.positions, inputs.gt_future))
        ades.append(best[0])
        fdes.append(best[1])
    if not ades:
        raise DataError("no scene has a predicted agent")
    s_mmd, s_sigma, s_fb = pooled_mmd(_pool(generated, "speeds"), _pool(reference, "speeds"), kcfg)
    h_mmd, h_sigma, h_fb = pooled_mmd(heading_embedding(_pool(generated, "headings")),
                                      heading_embedding(_pool(reference, "headings")), kcfg)
    position_mmd = None
    if kcfg.include_position_mmd:
        gp = np.concatenate([b.positions.reshape(-1, 2) for b in generated])
        rp = np.concatenate([b.positions.reshape(-1, 2) for b in reference])
        position_mmd = pooled_mmd(gp, rp, kcfg)[0]
    return EvalReport(
        ade=float(np.mean(ades)),
        fde=float(np.mean(fdes)),
        speed_mmd=s_mmd,
        heading_mmd=h_mmd,
        collision_rate=collision_rate(all_bundles, all_scenes),
        n_scenes=len(ades),
        n_samples_per_scene=n_samples,
        kernel_sigma_speed=s_sigma,
        kernel_sigma_heading=h_sigma,
        kernel=kcfg.kernel,
        bandwidth_fallback=bool(s_fb or h_fb),
        position_mmd=position_mmd,
    )
