"""Traffic-scene data model, synthetic scene generator and world-centric preprocessing."""

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError, ValidationError, VersionError

SCHEMA_VERSION = 1
D_MOTION = 4


class Role(enum.Enum):
    PREDICTED = "Predicted"
    OTHER = "Other"


class AgentType(enum.Enum):
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"


class LightState(enum.Enum):
    RED = "Red"
    YELLOW = "Yellow"
    GREEN = "Green"
    UNKNOWN = "Unknown"


class LaneType(enum.Enum):
    DRIVING = "Driving"
    BIKE = "Bike"
    BOUNDARY = "Boundary"


AGENT_TYPES = list(AgentType)
LIGHT_STATES = list(LightState)
LANE_TYPES = list(LaneType)


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w <= -math.pi, w + 2.0 * math.pi, w)


def one_hot(index, n):
    v = np.zeros(n)
    v[index] = 1.0
    return v


@dataclass(eq=False)
class AgentTrack:
    agent_id: str
    role: Role
    positions: np.ndarray  # [T_h + T_f, 2]
    headings: np.ndarray  # [T_h + T_f]
    speeds: np.ndarray  # [T_h + T_f]
    width: float
    length: float
    agent_type: AgentType

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.role == other.role
                and self.agent_type == other.agent_type
                and self.width == other.width and self.length == other.length
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.headings, other.headings)
                and np.array_equal(self.speeds, other.speeds))


@dataclass(eq=False)
class TrafficLightTrack:
    light_id: str
    position: np.ndarray  # [2]
    states: list  # [T_h] of LightState

    def __eq__(self, other):
        if not isinstance(other, TrafficLightTrack):
            return NotImplemented
        return (self.light_id == other.light_id and self.states == other.states
                and np.array_equal(self.position, other.position))


@dataclass(eq=False)
class LanePolyline:
    lane_id: str
    points: np.ndarray  # [P, 2]
    lane_type: LaneType

    def __eq__(self, other):
        if not isinstance(other, LanePolyline):
            return NotImplemented
        return (self.lane_id == other.lane_id and self.lane_type == other.lane_type
                and np.array_equal(self.points, other.points))


@dataclass
class Scene:
    scene_id: str
    dt: float
    horizon_history: int
    horizon_future: int
    agents: list = field(default_factory=list)
    traffic_lights: list = field(default_factory=list)
    lanes: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.horizon_history + self.horizon_future

    @property
    def predicted(self):
        return [a for a in self.agents if a.role is Role.PREDICTED]

    def validate(self):
        """Raise :class:`ValidationError` on the first violated invariant."""
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.horizon_history < 2:
            raise ValidationError(f"horizon_history must be >= 2, got {self.horizon_history}")
        if self.horizon_future < 1:
            raise ValidationError(f"horizon_future must be >= 1, got {self.horizon_future}")
        n = self.n_steps
        ids = set()
        for a in self.agents:
            if a.agent_id in ids:
                raise ValidationError(f"duplicate agent_id {a.agent_id!r}")
            ids.add(a.agent_id)
            if a.positions.shape != (n, 2) or a.headings.shape != (n,) or a.speeds.shape != (n,):
                raise ValidationError(f"agent {a.agent_id}: tracks must have {n} entries")
            for name in ("positions", "headings", "speeds"):
                if not np.all(np.isfinite(getattr(a, name))):
                    raise ValidationError(f"agent {a.agent_id}: non-finite {name}")
            if np.any(a.headings <= -math.pi) or np.any(a.headings > math.pi):
                raise ValidationError(f"agent {a.agent_id}: headings must lie in (-pi, pi]")
            if not (a.width > 0 and a.length > 0):
                raise ValidationError(f"agent {a.agent_id}: width and length must be positive")
        for tl in self.traffic_lights:
            if len(tl.states) != self.horizon_history:
                raise ValidationError(f"light {tl.light_id}: states length {len(tl.states)} != T_h")
            if tl.position.shape != (2,) or not np.all(np.isfinite(tl.position)):
                raise ValidationError(f"light {tl.light_id}: invalid position")
        for lane in self.lanes:
            if lane.points.ndim != 2 or lane.points.shape[0] < 2 or lane.points.shape[1] != 2:
                raise ValidationError(f"lane {lane.lane_id}: needs at least 2 points")
            if not np.all(np.isfinite(lane.points)):
                raise ValidationError(f"lane {lane.lane_id}: non-finite point")
            if np.any(np.all(np.diff(lane.points, axis=0) == 0, axis=1)):
                raise ValidationError(f"lane {lane.lane_id}: consecutive points must be distinct")
        return self


# ------------------------------------------------------------------ generator


@dataclass
class SceneGenConfig:
    agent_count_range: tuple = (3, 6)
    predicted_count_range: tuple = (1, 3)
    lane_families: tuple = ("straight", "l_turn", "intersection")
    dt: float = 0.1
    horizon_history: int = 11
    horizon_future: int = 80
    position_jitter: float = 0.05
    speed_range: tuple = (6.0, 12.0)
    accel_range: float = 0.5
    type_weights: tuple = (0.8, 0.1, 0.1)  # Vehicle, Pedestrian, Cyclist

    def validate(self):
        lo, hi = self.agent_count_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"agent_count_range must satisfy 1 <= lo <= hi, got {self.agent_count_range}")
        plo, phi = self.predicted_count_range
        if plo < 1 or phi < plo:
            raise ConfigError(f"predicted_count_range must satisfy 1 <= lo <= hi, got {self.predicted_count_range}")
        if not self.lane_families:
            raise ConfigError("lane_families is empty")
        unknown = set(self.lane_families) - set(LANE_FAMILIES)
        if unknown:
            raise ConfigError(f"unknown lane families {sorted(unknown)}")
        if self.dt <= 0 or self.horizon_history < 2 or self.horizon_future < 1:
            raise ConfigError("need dt > 0, horizon_history >= 2, horizon_future >= 1")
        if self.position_jitter < 0 or self.accel_range < 0:
            raise ConfigError("noise amplitudes must be non-negative")
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ConfigError(f"invalid speed_range {self.speed_range}")
        if len(self.type_weights) != 3 or min(self.type_weights) < 0 or np.sum(self.type_weights) <= 0:
            raise ConfigError(f"invalid type_weights {self.type_weights}")
        return self


class _Path:
    """Piecewise-linear centerline with arclength lookup."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1)
        frac = (s - self.cum[i]) / self.seg_len[i]
        pts = self.points[i] + frac[:, None] * (self.points[i + 1] - self.points[i])
        return pts, self.seg_heading[i]


def _route(start, heading, legs, spacing=10.0, arc_step=math.radians(5.0)):
    """Polyline from ``start`` following legs of ``("line", length)`` or ``("arc", radius, angle)``.

    Points are exact samples of the lines and arcs. Positive arc angles turn left.
    """
    pts = [np.asarray(start, dtype=np.float64)]
    h = heading
    for leg in legs:
        p = pts[-1]
        if leg[0] == "line":
            n = max(1, int(math.ceil(leg[1] / spacing)))
            for k in range(1, n + 1):
                pts.append(p + (leg[1] * k / n) * np.array([math.cos(h), math.sin(h)]))
        else:
            _, radius, angle = leg
            side = 1.0 if angle > 0 else -1.0
            centre = p + side * radius * np.array([-math.sin(h), math.cos(h)])
            n = max(1, int(math.ceil(abs(angle) / arc_step)))
            phi0 = h - side * math.pi / 2
            for k in range(1, n + 1):
                phi = phi0 + angle * k / n
                pts.append(centre + radius * np.array([math.cos(phi), math.sin(phi)]))
            h = h + angle
    return np.array(pts)


def _offset(points, d):
    """Shift a polyline sideways by ``d`` (positive = left) along per-vertex normals."""
    seg = np.diff(points, axis=0)
    head = np.arctan2(seg[:, 1], seg[:, 0])
    vh = np.concatenate([head[:1], head[1:]])  # vertex headings, segment-leading
    normals = np.stack([-np.sin(vh), np.cos(vh)], axis=1)
    # endpoint uses the last segment direction
    last = np.array([[-math.sin(head[-1]), math.cos(head[-1])]])
    normals = np.concatenate([normals, last])
    return points + d * normals


def _straight_family(rng):
    half = 100.0
    centre = _route((-half, 0.0), 0.0, [("line", 2 * half)])
    lanes = [
        (centre, LaneType.DRIVING, True),
        (centre + np.array([0.0, 3.5]), LaneType.DRIVING, True),
        (centre[::-1] + np.array([0.0, -3.5]), LaneType.DRIVING, True),
        (centre + np.array([0.0, 5.25]), LaneType.BOUNDARY, False),
        (centre + np.array([0.0, -5.25]), LaneType.BOUNDARY, False),
    ]
    return lanes, []


def _l_turn_family(rng):
    radius = 15.0 + rng.uniform(0.0, 5.0)
    inner = _route((-120.0, 0.0), 0.0, [("line", 120.0), ("arc", radius, math.pi / 2), ("line", 120.0)])
    outer = _route((-120.0, -3.5), 0.0, [("line", 120.0), ("arc", radius + 3.5, math.pi / 2), ("line", 120.0)])
    lanes = [
        (inner, LaneType.DRIVING, True),
        (outer, LaneType.DRIVING, True),
        (_offset(inner, 1.75), LaneType.BOUNDARY, False),
        (_offset(outer, -1.75), LaneType.BOUNDARY, False),
    ]
    return lanes, []


def _intersection_family(rng):
    """Four-way junction with dedicated turn lanes, random size and orientation.

    Each approach has three entry lanes (left turn nearest the centreline,
    then through, then right turn), so an agent's lane reveals its route.
    """
    lane_w, approach = 3.5, 90.0
    half_box = float(rng.uniform(12.0, 16.0))
    theta = float(rng.uniform(-math.pi, math.pi))
    left_y, through_y, right_y = -0.5 * lane_w, -1.5 * lane_w, -2.5 * lane_w
    lanes, lights = [], []
    for k in range(4):
        rot = theta + k * math.pi / 2
        c, s = math.cos(rot), math.sin(rot)
        R = np.array([[c, -s], [s, c]])
        x0 = -(half_box + approach)
        routes = [
            (left_y, [("line", approach), ("arc", half_box - left_y, math.pi / 2), ("line", approach)]),
            (through_y, [("line", approach), ("line", 2 * half_box), ("line", approach)]),
            (right_y, [("line", approach), ("arc", half_box + right_y, -math.pi / 2), ("line", approach)]),
        ]
        for y, legs in routes:
            start = R @ np.array([x0, y])
            lanes.append((_route(start, rot, legs), LaneType.DRIVING, True))
        # kerb line along the approach
        kerb = _route(R @ np.array([x0, -3.0 * lane_w]), rot, [("line", approach)])
        lanes.append((kerb, LaneType.BOUNDARY, False))
        lights.append(R @ np.array([-half_box, through_y]))
    return lanes, lights


LANE_FAMILIES = {
    "straight": _straight_family,
    "l_turn": _l_turn_family,
    "intersection": _intersection_family,
}

_TYPE_SIZE = {
    AgentType.VEHICLE: (2.0, 4.6),
    AgentType.PEDESTRIAN: (0.6, 0.6),
    AgentType.CYCLIST: (0.7, 1.8),
}
_TYPE_SPEED_SCALE = {AgentType.VEHICLE: 1.0, AgentType.PEDESTRIAN: 0.15, AgentType.CYCLIST: 0.45}


def _light_states(rng, group, n):
    # two-phase signal: group 0 and group 1 show complementary colours
    switch = int(rng.integers(0, 2 * n))
    first_green = bool(rng.integers(0, 2))
    states = []
    for t in range(n):
        green = first_green if t < switch else not first_green
        if group == 1:
            green = not green
        states.append(LightState.GREEN if green else LightState.RED)
    return states


def generate_synthetic_scene(seed, cfg=None):
    """Deterministic synthetic scene: lane-following agents with seeded jitter."""
    cfg = (cfg or SceneGenConfig()).validate()
    rng = np.random.default_rng(seed)
    family = cfg.lane_families[int(rng.integers(len(cfg.lane_families)))]
    lane_specs, light_positions = LANE_FAMILIES[family](rng)
    n_steps = cfg.horizon_history + cfg.horizon_future
    times = np.arange(n_steps) * cfg.dt

    lanes = [LanePolyline(f"lane_{i}", pts, lt) for i, (pts, lt, _) in enumerate(lane_specs)]
    driveable = [_Path(pts) for pts, _, drive in lane_specs if drive]

    n_agents = int(rng.integers(cfg.agent_count_range[0], cfg.agent_count_range[1] + 1))
    n_pred = int(rng.integers(cfg.predicted_count_range[0], cfg.predicted_count_range[1] + 1))
    n_pred = min(n_pred, n_agents)
    predicted = set(rng.permutation(n_agents)[:n_pred].tolist())
    weights = np.asarray(cfg.type_weights, dtype=np.float64)
    weights = weights / weights.sum()

    occupied = []  # (lane index, start arclength)
    agents = []
    for i in range(n_agents):
        agent_type = AGENT_TYPES[int(rng.choice(3, p=weights))]
        w0, l0 = _TYPE_SIZE[agent_type]
        width = float(w0 * rng.uniform(0.9, 1.1))
        length = float(l0 * rng.uniform(0.9, 1.1))
        v0 = float(rng.uniform(*cfg.speed_range)) * _TYPE_SPEED_SCALE[agent_type]
        accel = float(rng.uniform(-cfg.accel_range, cfg.accel_range))
        accel = max(accel, (0.5 * v0 - v0) / times[-1])  # keep speed >= v0/2
        lane_idx = int(rng.integers(len(driveable)))
        path = driveable[lane_idx]
        travel = v0 * times[-1] + 0.5 * accel * times[-1] ** 2
        room = max(path.length - travel, 0.0)
        s0 = float(rng.uniform(0.0, room))
        for _ in range(20):
            if all(li != lane_idx or abs(s - s0) > 12.0 for li, s in occupied):
                break
            s0 = float(rng.uniform(0.0, room))
        occupied.append((lane_idx, s0))
        s = s0 + v0 * times + 0.5 * accel * times ** 2
        pts, heading = path.at(s)
        if cfg.position_jitter > 0:
            lateral = rng.normal(0.0, cfg.position_jitter, size=n_steps)
            pts = pts + lateral[:, None] * np.stack([-np.sin(heading), np.cos(heading)], axis=1)
        agents.append(AgentTrack(
            agent_id=f"agent_{i}",
            role=Role.PREDICTED if i in predicted else Role.OTHER,
            positions=pts,
            headings=wrap_angle(heading),
            speeds=v0 + accel * times,
            width=width,
            length=length,
            agent_type=agent_type,
        ))

    lights = [
        TrafficLightTrack(f"light_{k}", np.asarray(p, dtype=np.float64),
                          _light_states(rng, k % 2, cfg.horizon_history))
        for k, p in enumerate(light_positions)
    ]
    scene = Scene(
        scene_id=f"synthetic-{family}-{seed}",
        dt=cfg.dt,
        horizon_history=cfg.horizon_history,
        horizon_future=cfg.horizon_future,
        agents=agents,
        traffic_lights=lights,
        lanes=lanes,
    )
    return scene.validate()


def point_to_polyline_distance(point, polyline):
    """Shortest Euclidean distance from a point to a polyline."""
    p = np.asarray(point, dtype=np.float64)
    a = polyline[:-1]
    b = polyline[1:]
    ab = b - a
    t = np.clip(((p - a) * ab).sum(axis=1) / (ab * ab).sum(axis=1), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.hypot(*(closest - p).T)))


# -------------------------------------------------------------- preprocessing


@dataclass
class ModelInputs:
    """World-centric tensors for one scene.

    Shapes: motion [A, T_h-1, 4]; agent_feat [A, 1, 7]; tl_feat [T_tl, T_h, 6];
    map_feat [1, L, P, 5]; predicted_mask [A]; gt_future [A_p, T_f, 2].
    """

    motion: np.ndarray
    agent_feat: np.ndarray
    tl_feat: np.ndarray
    map_feat: np.ndarray
    predicted_mask: np.ndarray
    gt_future: np.ndarray
    lane_lengths: np.ndarray  # valid points per lane before padding
    world_center: np.ndarray
    current_pos: np.ndarray  # [A, 2], translated
    current_heading: np.ndarray  # [A]
    agent_ids: list
    scene_id: str
    dt: float

    @property
    def predicted_index(self):
        return np.flatnonzero(self.predicted_mask)

    @property
    def other_index(self):
        return np.flatnonzero(~self.predicted_mask)

    @property
    def n_predicted(self):
        return int(self.predicted_mask.sum())

    @property
    def horizon_future(self):
        return self.gt_future.shape[1]

    def permuted(self, perm):
        """Reorder agents by ``perm``; predicted rows follow their agents."""
        perm = np.asarray(perm)
        mask = self.predicted_mask[perm]
        pred_rank = np.cumsum(self.predicted_mask) - 1
        gt_rows = pred_rank[perm[mask]]
        return ModelInputs(
            motion=self.motion[perm], agent_feat=self.agent_feat[perm], tl_feat=self.tl_feat,
            map_feat=self.map_feat, predicted_mask=mask, gt_future=self.gt_future[gt_rows],
            lane_lengths=self.lane_lengths, world_center=self.world_center,
            current_pos=self.current_pos[perm], current_heading=self.current_heading[perm],
            agent_ids=[self.agent_ids[i] for i in perm], scene_id=self.scene_id, dt=self.dt,
        )


def preprocess_world_centric(scene):
    """Translate the scene to one shared origin and build model tensors.

    The origin is the mean current-step position over all agents; nothing is
    rotated, so every agent keeps its absolute heading.
    """
    if scene.horizon_history < 2:
        raise ShapeError(f"horizon_history must be >= 2 to form deltas, got {scene.horizon_history}")
    if not scene.agents:
        raise DataError(f"scene {scene.scene_id} has no agents")
    for a in scene.agents:
        if not (np.all(np.isfinite(a.positions)) and np.all(np.isfinite(a.headings))
                and np.all(np.isfinite(a.speeds))):
            raise DataError(f"agent {a.agent_id}: non-finite coordinate")
    th = scene.horizon_history
    cur = th - 1
    pos = np.stack([a.positions for a in scene.agents])  # [A, N, 2]
    head = np.stack([a.headings for a in scene.agents])
    speed = np.stack([a.speeds for a in scene.agents])
    center = pos[:, cur].mean(axis=0)

    hist = pos[:, :th]
    dpos = hist[:, 1:] - hist[:, :-1]
    dhead = wrap_angle(np.diff(head[:, :th], axis=1))
    dspeed = np.diff(speed[:, :th], axis=1)
    motion = np.concatenate([dpos, dhead[..., None], dspeed[..., None]], axis=-1)

    agent_feat = np.stack([
        np.concatenate([pos[i, cur] - center, [a.width, a.length],
                        one_hot(AGENT_TYPES.index(a.agent_type), len(AGENT_TYPES))])
        for i, a in enumerate(scene.agents)
    ])[:, None, :]

    tl_feat = np.zeros((len(scene.traffic_lights), th, 2 + len(LIGHT_STATES)))
    for i, tl in enumerate(scene.traffic_lights):
        tl_feat[i, :, :2] = tl.position - center
        for t, st in enumerate(tl.states):
            tl_feat[i, t, 2 + LIGHT_STATES.index(st)] = 1.0

    lane_lengths = np.array([len(l.points) for l in scene.lanes], dtype=np.int64)
    p_max = int(lane_lengths.max()) if len(scene.lanes) else 0
    map_feat = np.zeros((1, len(scene.lanes), p_max, 2 + len(LANE_TYPES)))
    for i, lane in enumerate(scene.lanes):
        pts = lane.points - center
        padded = np.concatenate([pts, np.repeat(pts[-1:], p_max - len(pts), axis=0)])
        map_feat[0, i, :, :2] = padded
        map_feat[0, i, :, 2 + LANE_TYPES.index(lane.lane_type)] = 1.0

    mask = np.array([a.role is Role.PREDICTED for a in scene.agents])
    gt_future = pos[mask, th:] - center
    return ModelInputs(
        motion=motion, agent_feat=agent_feat, tl_feat=tl_feat, map_feat=map_feat,
        predicted_mask=mask, gt_future=gt_future, lane_lengths=lane_lengths,
        world_center=center, current_pos=pos[:, cur] - center, current_heading=head[:, cur].copy(),
        agent_ids=[a.agent_id for a in scene.agents], scene_id=scene.scene_id, dt=scene.dt,
    )


# ------------------------------------------------------------------------- I/O


def scene_to_dict(scene):
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "dt": float(scene.dt),
        "horizon_history": int(scene.horizon_history),
        "horizon_future": int(scene.horizon_future),
        "agents": [
            {
                "agent_id": a.agent_id,
                "role": a.role.value,
                "positions": a.positions.tolist(),
                "headings": a.headings.tolist(),
                "speeds": a.speeds.tolist(),
                "width": float(a.width),
                "length": float(a.length),
                "agent_type": a.agent_type.value,
            }
            for a in scene.agents
        ],
        "traffic_lights": [
            {"light_id": tl.light_id, "position": tl.position.tolist(), "states": [s.value for s in tl.states]}
            for tl in scene.traffic_lights
        ],
        "lanes": [
            {"lane_id": l.lane_id, "points": l.points.tolist(), "lane_type": l.lane_type.value}
            for l in scene.lanes
        ],
    }


def _get(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ParseError(f"{where}: missing field {key!r}", field=key)
    return d[key]


def _number(d, key, where):
    v = _get(d, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: field {key!r} must be a number", field=key)
    return float(v)


def _int(d, key, where):
    v = _get(d, key, where)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where}: field {key!r} must be an integer", field=key)
    return v


def _array(d, key, where, shape_tail):
    v = _get(d, key, where)
    try:
        arr = np.array(v, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: field {key!r} is not a numeric array", field=key) from None
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        if not (arr.size == 0 and shape_tail):
            raise ParseError(f"{where}: field {key!r} has shape {arr.shape}", field=key)
        arr = arr.reshape((0,) + shape_tail)
    return arr


def _enum(cls, d, key, where):
    v = _get(d, key, where)
    try:
        return cls(v)
    except ValueError:
        raise ParseError(f"{where}: field {key!r} has invalid value {v!r}", field=key) from None


def scene_from_dict(doc):
    """Parse and validate a scene document."""
    if not isinstance(doc, dict):
        raise ParseError("scene document must be a JSON object")
    version = _get(doc, "schema_version", "scene")
    if version != SCHEMA_VERSION:
        raise VersionError(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    expected = {"schema_version", "scene_id", "dt", "horizon_history", "horizon_future",
                "agents", "traffic_lights", "lanes"}
    unknown = set(doc) - expected
    if unknown:
        raise ParseError(f"scene: unknown fields {sorted(unknown)}", field=sorted(unknown)[0])
    scene_id = _get(doc, "scene_id", "scene")
    if not isinstance(scene_id, str):
        raise ParseError("scene: field 'scene_id' must be a string", field="scene_id")
    agents = []
    for i, a in enumerate(_get(doc, "agents", "scene")):
        where = f"agents[{i}]"
        agent_id = _get(a, "agent_id", where)
        agents.append(AgentTrack(
            agent_id=str(agent_id),
            role=_enum(Role, a, "role", where),
            positions=_array(a, "positions", where, (2,)),
            headings=_array(a, "headings", where, ()),
            speeds=_array(a, "speeds", where, ()),
            width=_number(a, "width", where),
            length=_number(a, "length", where),
            agent_type=_enum(AgentType, a, "agent_type", where),
        ))
    lights = []
    for i, tl in enumerate(_get(doc, "traffic_lights", "scene")):
        where = f"traffic_lights[{i}]"
        states = _get(tl, "states", where)
        try:
            parsed = [LightState(s) for s in states]
        except (ValueError, TypeError):
            raise ParseError(f"{where}: field 'states' has an invalid value", field="states") from None
        pos = np.array(_get(tl, "position", where), dtype=np.float64)
        if pos.shape != (2,):
            raise ParseError(f"{where}: field 'position' must have 2 entries", field="position")
        lights.append(TrafficLightTrack(str(_get(tl, "light_id", where)), pos, parsed))
    lanes = []
    for i, l in enumerate(_get(doc, "lanes", "scene")):
        where = f"lanes[{i}]"
        lanes.append(LanePolyline(str(_get(l, "lane_id", where)), _array(l, "points", where, (2,)),
                                  _enum(LaneType, l, "lane_type", where)))
    scene = Scene(
        scene_id=scene_id,
        dt=_number(doc, "dt", "scene"),
        horizon_history=_int(doc, "horizon_history", "scene"),
        horizon_future=_int(doc, "horizon_future", "scene"),
        agents=agents,
        traffic_lights=lights,
        lanes=lanes,
    )
    return scene.validate()


def dumps_scene(scene):
    return json.dumps(scene_to_dict(scene), indent=1) + "\n"


def save_scene(scene, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_scene(scene))


def load_scene(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(doc)
