"""Toy planar kitchen world.

A point robot moves over a 2D workspace containing a pan and a spoon.
Rollouts are cubic-smoothstep interpolations through waypoints; features
are per-step means (height, speed, distance to pan) plus a final-state
task-success score. Ground-truth reward is linear in the features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POOL_FORMAT_VERSION = 1

FEATURE_NAMES = ("height", "speed", "pan_distance", "success")
N_FEATURES = len(FEATURE_NAMES)

# Nominal feasible range of each feature over pools from the default world;
# the stratified generator is expected to span at least half of each.
FEASIBLE_RANGES = {
    "height": (0.10, 0.90),
    "speed": (0.03, 0.32),
    "pan_distance": (0.10, 0.60),
    "success": (0.0, 1.0),
}

# A grasp only counts when the gripper is closed this close to the spoon.
GRASP_RADIUS = 0.1
# Distance scale of the success term: satisfaction decays to zero 0.5 m out.
SUCCESS_DISTANCE_SCALE = 0.5


@dataclass
class WorldConfig:
    """Workspace geometry and rollout discretization."""

    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 1.0
    y_max: float = 1.0
    pan: tuple[float, float] = (0.30, 0.25)
    spoon: tuple[float, float] = (0.75, 0.65)
    horizon: int = 64
    dt: float = 0.1

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name, obj in (("pan", self.pan), ("spoon", self.spoon)):
            if not self.contains(obj):
                raise ValueError(f"{name} position {obj} outside workspace")

    def contains(self, point) -> bool:
        x, y = point
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def clip_point(self, point: np.ndarray) -> np.ndarray:
        return np.clip(
            point, [self.x_min, self.y_min], [self.x_max, self.y_max]
        )

    def to_doc(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "pan": list(self.pan),
            "spoon": list(self.spoon),
            "horizon": self.horizon,
            "dt": self.dt,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorldConfig":
        return cls(
            x_min=doc["x_min"],
            y_min=doc["y_min"],
            x_max=doc["x_max"],
            y_max=doc["y_max"],
            pan=tuple(doc["pan"]),
            spoon=tuple(doc["spoon"]),
            horizon=doc["horizon"],
            dt=doc["dt"],
        )


@dataclass
class Control:
    """Open-loop rollout control: a waypoint chain plus pacing and intent."""

    waypoints: list[tuple[float, float]]
    speed: float
    grasp: bool = False
    jitter: float = 0.0
    # Fraction of the horizon used to traverse the path; the robot dwells at
    # the end for the remainder (grasping rollouts arrive early and hold).
    arrive_frac: float = 1.0


@dataclass
class Trajectory:
    """Fixed-length state-action rollout in the kitchen world."""

    id: str
    states: np.ndarray  # (T, 3): x, y, gripper-open flag
    actions: np.ndarray  # (T, 3): dx, dy, gripper toggle
    clamped: bool = False
    approx_stratum: bool = False
    split: str = ""

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "split": self.split,
            "clamped": self.clamped,
            "approx_stratum": self.approx_stratum,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Trajectory":
        return cls(
            id=doc["id"],
            states=np.array(doc["states"], dtype=np.float64),
            actions=np.array(doc["actions"], dtype=np.float64),
            clamped=doc["clamped"],
            approx_stratum=doc["approx_stratum"],
            split=doc["split"],
        )


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 3.0 * u**2 - 2.0 * u**3


def _polyline_lengths(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return np.zeros(0)
    return np.linalg.norm(np.diff(points, axis=0), axis=1)


def _point_at_arc(points: np.ndarray, seg_lengths: np.ndarray, d: float) -> np.ndarray:
    if len(points) == 1 or seg_lengths.sum() == 0.0:
        return points[0].copy()
    d = min(max(d, 0.0), float(seg_lengths.sum()))
    acc = 0.0
    for i, seg in enumerate(seg_lengths):
        if d <= acc + seg or i == len(seg_lengths) - 1:
            t = 0.0 if seg == 0.0 else (d - acc) / seg
            return points[i] + t * (points[i + 1] - points[i])
        acc += seg
    return points[-1].copy()


def rollout(config: WorldConfig, control: Control, seed: int, traj_id: str = "t0") -> Trajectory:
    """Roll the point robot through the control's waypoint chain.

    Arc progress follows a cubic smoothstep over the horizon, so per-step
    displacement magnitude is proportional to the speed scale until the
    path is exhausted. Positions leaving the workspace are clamped and the
    trajectory is flagged.
    """
    if control.speed <= 0:
        raise ValueError("speed scale must be positive")
    if not control.waypoints:
        raise ValueError("at least one waypoint required")
    for wp in control.waypoints:
        if not config.contains(wp):
            raise ValueError(f"waypoint {wp} outside workspace")
    if not (0.0 < control.arrive_frac <= 1.0):
        raise ValueError("arrive_frac must be in (0, 1]")

    T = config.horizon
    points = np.array(control.waypoints, dtype=np.float64)
    seg_lengths = _polyline_lengths(points)
    path_length = float(seg_lengths.sum())

    # Target arc coverage; clamped to the path's actual length.
    coverage = control.speed * config.dt * (T - 1)
    u = np.arange(T, dtype=np.float64) / (T - 1)
    progress = _smoothstep(u / control.arrive_frac)
    arc = np.minimum(coverage * progress, path_length)

    positions = np.array([_point_at_arc(points, seg_lengths, d) for d in arc])

    if control.jitter > 0.0:
        rng = np.random.default_rng(seed)
        # Smooth wobble that vanishes at both endpoints.
        for axis in range(2):
            freq = rng.integers(1, 3)
            phase = rng.uniform(0, 2 * np.pi)
            amp = control.jitter * rng.uniform(0.5, 1.0)
            positions[:, axis] += amp * np.sin(2 * np.pi * freq * u + phase) * np.sin(np.pi * u)

    clipped = np.array([config.clip_point(p) for p in positions])
    was_clamped = bool(np.any(np.abs(clipped - positions) > 1e-12))
    positions = clipped

    # Gripper: open (1) until the arc stops advancing, then closed if grasping.
    gripper = np.ones(T)
    if control.grasp:
        final_arc = arc[-1]
        arrived = arc >= final_arc - 1e-12
        gripper[arrived] = 0.0

    states = np.column_stack([positions, gripper])
    actions = np.zeros((T, 3))
    actions[:-1, :2] = np.diff(positions, axis=0)
    actions[:-1, 2] = np.abs(np.diff(gripper)) > 0.5

    return Trajectory(id=traj_id, states=states, actions=actions, clamped=was_clamped)


def features(traj: Trajectory, config: WorldConfig) -> np.ndarray:
    """Per-step mean features plus the final-state task-success score.

    Components (see FEATURE_NAMES): mean height, mean speed, mean distance
    to the pan, and success = 0.7 * proximity-to-spoon term at the final
    step + 0.3 * grasp flag, clipped to [0, 1].
    """
    positions = traj.states[:, :2]
    T = len(positions)
    height = float(positions[:, 1].mean())
    speed = float(np.linalg.norm(traj.actions[:, :2], axis=1).sum() / (T * config.dt))
    pan_distance = float(np.linalg.norm(positions - np.array(config.pan), axis=1).mean())

    final_pos = positions[-1]
    d_spoon = float(np.linalg.norm(final_pos - np.array(config.spoon)))
    gripper_closed = traj.states[-1, 2] < 0.5
    grasped = gripper_closed and d_spoon <= GRASP_RADIUS
    success = 0.7 * max(0.0, 1.0 - d_spoon / SUCCESS_DISTANCE_SCALE) + 0.3 * float(grasped)
    success = float(np.clip(success, 0.0, 1.0))

    return np.array([height, speed, pan_distance, success])


def true_reward(w: np.ndarray, traj: Trajectory, config: WorldConfig) -> float:
    """Ground-truth reward: dot product of the weight vector with the features."""
    w = np.asarray(w, dtype=np.float64)
    feats = features(traj, config)
    if w.shape != feats.shape:
        raise ValueError(f"weight shape {w.shape} does not match feature shape {feats.shape}")
    return float(w @ feats)


class TrajectoryPool:
    """Ordered trajectory collection with cached features and split tags."""

    def __init__(self, config: WorldConfig, trajectories: list[Trajectory]):
        ids = [t.id for t in trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("trajectory ids must be unique")
        self.config = config
        self.trajectories = trajectories
        self.by_id = {t.id: t for t in trajectories}
        self._features = {t.id: features(t, config) for t in trajectories}

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def features_of(self, traj_id: str) -> np.ndarray:
        return self._features[traj_id]

    def feature_matrix(self, ids: list[str] | None = None) -> np.ndarray:
        ids = ids if ids is not None else [t.id for t in self.trajectories]
        return np.array([self._features[i] for i in ids])

    def split_ids(self, tag: str) -> list[str]:
        return [t.id for t in self.trajectories if t.split == tag]

    def to_doc(self) -> dict:
        return {
            "format_version": POOL_FORMAT_VERSION,
            "kind": "trajectory_pool",
            "config": self.config.to_doc(),
            "feature_names": list(FEATURE_NAMES),
            "trajectories": [t.to_doc() for t in self.trajectories],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TrajectoryPool":
        if doc.get("format_version") != POOL_FORMAT_VERSION:
            raise ValueError(f"unsupported pool format_version {doc.get('format_version')!r}")
        config = WorldConfig.from_doc(doc["config"])
        trajectories = [Trajectory.from_doc(d) for d in doc["trajectories"]]
        return cls(config, trajectories)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_doc(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrajectoryPool":
        return cls.from_doc(json.loads(Path(path).read_text()))


# -- stratified pool generation --

_SPEED_BANDS = {False: (0.04, 0.10), True: (0.20, 0.32)}
_HEIGHT_BANDS = {False: (0.10, 0.28), True: (0.62, 0.90)}


def _all_strata() -> list[tuple[bool, bool, bool, bool]]:
    # Order: (height_high, speed_high, pan_far, success_high)
    return [
        (bool(h), bool(s), bool(p), bool(g))
        for h in (0, 1)
        for s in (0, 1)
        for p in (0, 1)
        for g in (0, 1)
    ]


def _chain_length(points: list[np.ndarray]) -> float:
    return float(_polyline_lengths(np.array(points)).sum())


def _fit_start_segment(
    head: np.ndarray, need: float, y_c: float, config: WorldConfig, rng: np.random.Generator
) -> tuple[list[np.ndarray], bool]:
    """Build a waypoint prefix ending at `head` whose length is close to `need`.

    Returns (prefix excluding head, approx flag). Long requirements are
    absorbed with a perpendicular zigzag whose amplitude is tuned by
    bisection.
    """
    lo = np.array([config.x_min + 0.03, config.y_min + 0.03])
    hi = np.array([config.x_max - 0.03, config.y_max - 0.03])

    # Straight candidate: head + need * direction, biased toward cruise height.
    best = None
    for _ in range(12):
        ang = rng.uniform(0, 2 * np.pi)
        cand = head + need * np.array([np.cos(ang), np.sin(ang)])
        cand[1] = 0.6 * cand[1] + 0.4 * y_c
        cand = np.clip(cand, lo, hi)
        err = abs(float(np.linalg.norm(cand - head)) - need)
        if best is None or err < best[0]:
            best = (err, cand)
        if err < 0.01:
            return [cand], False

    start = best[1]
    direct = float(np.linalg.norm(start - head))
    extra = need - direct
    if extra <= 0.01:
        return [start], False

    # Zigzag between start and head to absorb the remaining length.
    seg = head - start
    seg_len = float(np.linalg.norm(seg))
    if seg_len < 1e-9:
        return [start], True
    perp = np.array([-seg[1], seg[0]]) / seg_len

    for n_zig in (2, 3, 4, 6, 8):
        bases = [start + seg * (i + 1) / (n_zig + 1) for i in range(n_zig)]
        amp_cap = min(
            float(min(np.min(b - lo), np.min(hi - b))) for b in bases
        )
        amp_cap = min(amp_cap, 0.4)
        if amp_cap <= 0.01:
            continue

        def length_at(amp: float) -> float:
            pts = [start]
            for i, b in enumerate(bases):
                pts.append(b + perp * amp * (1 if i % 2 == 0 else -1))
            pts.append(head)
            return _chain_length(pts)

        if length_at(amp_cap) < need - 0.01:
            continue  # not enough slack; try more zigzags
        a_lo, a_hi = 0.0, amp_cap
        for _ in range(40):
            mid = 0.5 * (a_lo + a_hi)
            if length_at(mid) < need:
                a_lo = mid
            else:
                a_hi = mid
        amp = 0.5 * (a_lo + a_hi)
        pts = [start]
        for i, b in enumerate(bases):
            pts.append(b + perp * amp * (1 if i % 2 == 0 else -1))
        return pts, False

    return [start], True  # could not absorb the full length; flag as approximate


def _control_for_stratum(
    stratum: tuple[bool, bool, bool, bool], config: WorldConfig, rng: np.random.Generator
) -> tuple[Control, bool]:
    height_high, speed_high, pan_far, success_high = stratum
    pan = np.array(config.pan)
    spoon = np.array(config.spoon)

    sigma = rng.uniform(*_SPEED_BANDS[speed_high])
    coverage = sigma * config.dt * (config.horizon - 1)
    y_c = rng.uniform(*_HEIGHT_BANDS[height_high])
    approx = False

    if success_high:
        end = spoon.copy()
    else:
        # Anywhere comfortably away from the spoon, near cruise height.
        for _ in range(50):
            end = np.array([rng.uniform(0.05, 0.95), np.clip(y_c + rng.uniform(-0.08, 0.08), 0.05, 0.95)])
            if np.linalg.norm(end - spoon) >= 0.45:
                break
        else:
            approx = True

    if pan_far:
        anchor = np.array([rng.uniform(0.78, 0.95), np.clip(y_c + rng.uniform(-0.05, 0.05), 0.05, 0.95)])
    else:
        ang = rng.uniform(0, 2 * np.pi)
        radius = rng.uniform(0.03, 0.10)
        anchor = config.clip_point(pan + radius * np.array([np.cos(ang), np.sin(ang)]))

    d_anchor_end = float(np.linalg.norm(anchor - end))
    rem = coverage - d_anchor_end
    if rem >= 0.05:
        prefix, fit_approx = _fit_start_segment(anchor, rem, y_c, config, rng)
        chain = prefix + [anchor, end]
    else:
        # Path too short to honor the pan anchor; bias the straight approach.
        prefix, fit_approx = _fit_start_segment(end, coverage, y_c, config, rng)
        chain = prefix + [end]
        approx = True
    approx = approx or fit_approx

    waypoints = [tuple(np.round(p, 6)) for p in chain]
    control = Control(
        waypoints=waypoints,
        speed=sigma,
        grasp=success_high,
        arrive_frac=0.85 if success_high else 1.0,
    )
    return control, approx


def generate_pool(config: WorldConfig, count: int, seed: int) -> TrajectoryPool:
    """Stratified pool: low/high strata per feature, round-robin filled."""
    if count < 10:
        raise ValueError("pool size must be at least 10")
    rng = np.random.default_rng(seed)
    strata = _all_strata()
    trajectories = []
    for i in range(count):
        stratum = strata[i % len(strata)]
        control, approx = _control_for_stratum(stratum, config, rng)
        traj = rollout(config, control, seed=int(rng.integers(0, 2**31)), traj_id=f"t{i:04d}")
        traj.approx_stratum = approx
        trajectories.append(traj)
    return TrajectoryPool(config, trajectories)


def split_pool(pool: TrajectoryPool, ratios: tuple[float, float, float], seed: int) -> TrajectoryPool:
    """Tag every trajectory train/val/test, largest-remainder counts, seeded shuffle."""
    if len(pool) < 10:
        raise ValueError("pool too small to split (need at least 10 trajectories)")
    ratios = tuple(float(r) for r in ratios)
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be nonnegative and sum to 1")

    n = len(pool)
    exact = [r * n for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    tags = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    for pos, traj_idx in enumerate(order):
        pool.trajectories[traj_idx].split = tags[pos]
    return pool
