"""Scene representation, trajectory file ingestion, normalization, and
synthetic multi-person scene generation.

A scene holds N tracks of exactly ``t_pred`` (x, y) positions; the first
track is the primary person whose future is predicted. Files are UTF-8
JSON lines, one scene per line, coordinates carried at 6 fractional
digits so that save/load round trips are bit-stable.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, EmptyInputError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    """Fixed observation/prediction window: steps 0..t_obs-1 are observed,
    steps t_obs..t_pred-1 are the future to predict."""

    t_obs: int = 9
    t_pred: int = 21
    frame_rate: float = 2.5

    def __post_init__(self):
        if not (0 < self.t_obs < self.t_pred):
            raise ConfigError(f"window: need 0 < t_obs < t_pred, got {self.t_obs}, {self.t_pred}")
        if self.frame_rate <= 0:
            raise ConfigError(f"window: frame_rate must be positive, got {self.frame_rate}")

    @property
    def n_future(self) -> int:
        return self.t_pred - self.t_obs

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


class PersonTrack:
    """One person's (t_pred, 2) position sequence in meters."""

    __slots__ = ("person_id", "positions")

    def __init__(self, person_id: int, positions) -> None:
        self.person_id = int(person_id)
        self.positions = np.asarray(positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ContractError(f"track: positions must be (T, 2), got {self.positions.shape}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PersonTrack)
            and self.person_id == other.person_id
            and np.array_equal(self.positions, other.positions)
        )

    def __repr__(self) -> str:
        return f"PersonTrack(person_id={self.person_id}, steps={len(self)})"


class Scene:
    """An ordered group of tracks sharing one window; track 0 is primary."""

    __slots__ = ("scene_id", "frame_rate", "tracks")

    primary_index = 0

    def __init__(self, scene_id: str, frame_rate: float, tracks) -> None:
        self.scene_id = str(scene_id)
        self.frame_rate = float(frame_rate)
        self.tracks = list(tracks)
        if not self.tracks:
            raise ContractError(f"scene {self.scene_id}: needs at least one track")
        if self.frame_rate <= 0:
            raise ContractError(f"scene {self.scene_id}: frame_rate must be positive")
        lengths = {len(t) for t in self.tracks}
        if len(lengths) != 1:
            raise ContractError(f"scene {self.scene_id}: mixed track lengths {sorted(lengths)}")

    @property
    def n_people(self) -> int:
        return len(self.tracks)

    @property
    def primary(self) -> PersonTrack:
        return self.tracks[0]

    def positions_array(self) -> np.ndarray:
        """All tracks stacked as (N, T, 2)."""
        return np.stack([t.positions for t in self.tracks])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Scene)
            and self.scene_id == other.scene_id
            and self.frame_rate == other.frame_rate
            and self.tracks == other.tracks
        )

    def __repr__(self) -> str:
        return f"Scene(id={self.scene_id!r}, n_people={self.n_people})"


@dataclass(frozen=True)
class TransformRecord:
    """Inverse of a scene normalization: add (dx, dy) to get back to the
    original frame."""

    dx: float
    dy: float

    def to_original(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) + np.array([self.dx, self.dy])

    def to_normalized(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) - np.array([self.dx, self.dy])


def normalize_scene(scene: Scene, window: WindowConfig) -> tuple[Scene, TransformRecord]:
    """Translate the scene so the primary's last observed point is the origin.

    Returns the shifted scene plus the record needed to map predictions back
    to original meters. Metrics are always computed in the original frame.
    """
    origin = scene.primary.positions[window.t_obs - 1]
    record = TransformRecord(dx=float(origin[0]), dy=float(origin[1]))
    tracks = [
        PersonTrack(t.person_id, t.positions - origin[None, :]) for t in scene.tracks
    ]
    return Scene(scene.scene_id, scene.frame_rate, tracks), record


def rotate_scene(scene: Scene, angle: float) -> Scene:
    """Rotate every track about the origin by ``angle`` radians
    (augmentation helper; applied identically to all people)."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    tracks = [PersonTrack(t.person_id, t.positions @ rot.T) for t in scene.tracks]
    return Scene(scene.scene_id, scene.frame_rate, tracks)


# ---------------------------------------------------------------------------
# file format


def save_scenes(scenes, path) -> None:
    """Write scenes as JSON lines, coordinates rounded to 6 decimals."""
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            record = {
                "scene_id": scene.scene_id,
                "frame_rate": scene.frame_rate,
                "tracks": [
                    [[round(float(x), 6), round(float(y), 6)] for x, y in t.positions]
                    for t in scene.tracks
                ],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_scenes(path, window: WindowConfig) -> list[Scene]:
    """Read scenes from a JSON-lines file.

    Tracks whose length differs from ``window.t_pred`` are dropped (warning
    logged with the count); if a record's first track (the primary) is
    dropped, the whole scene is dropped. Scenes come back sorted by
    scene_id. Raises ``ParseError`` with a line number on malformed input
    and ``EmptyInputError`` when nothing usable remains.
    """
    scenes: list[Scene] = []
    dropped_tracks = 0
    dropped_scenes = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                scene_id = str(record["scene_id"])
                frame_rate = float(record["frame_rate"])
                raw_tracks = record["tracks"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: missing or invalid scene fields") from exc
            if frame_rate <= 0:
                raise ParseError(f"{path}:{lineno}: frame_rate must be positive")
            if not isinstance(raw_tracks, list) or not raw_tracks:
                raise ParseError(f"{path}:{lineno}: scene needs a non-empty track list")
            kept: list[PersonTrack] = []
            primary_dropped = False
            for t_idx, raw in enumerate(raw_tracks):
                try:
                    pts = np.asarray(raw, dtype=np.float64)
                except (TypeError, ValueError) as exc:
                    raise ParseError(
                        f"{path}:{lineno}: track {t_idx} has a non-numeric coordinate"
                    ) from exc
                if pts.ndim != 2 or pts.shape[1] != 2:
                    raise ParseError(
                        f"{path}:{lineno}: track {t_idx} is not a list of [x, y] pairs"
                    )
                if not np.all(np.isfinite(pts)):
                    raise ParseError(f"{path}:{lineno}: track {t_idx} has a non-finite coordinate")
                if pts.shape[0] != window.t_pred:
                    dropped_tracks += 1
                    if t_idx == 0:
                        primary_dropped = True
                    continue
                kept.append(PersonTrack(person_id=len(kept) + 1, positions=pts))
            if primary_dropped or not kept:
                dropped_scenes += 1
                continue
            scenes.append(Scene(scene_id, frame_rate, kept))
    if dropped_tracks or dropped_scenes:
        log.warning(
            "load_scenes: dropped %d track(s) and %d scene(s) not matching t_pred=%d",
            dropped_tracks, dropped_scenes, window.t_pred,
        )
    if not scenes:
        raise EmptyInputError(f"{path}: no usable scenes")
    scenes.sort(key=lambda s: s.scene_id)
    return scenes


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the social-force scene generator.

    Every scene gets one primary walker plus n-1 neighbors. A
    ``far_fraction`` of the neighbors walk parallel to the primary at a
    lateral offset beyond twice the repulsion radius, so ground-truth
    irrelevant people exist; the rest are aimed to cross the primary's
    path inside the prediction window.
    """

    n_scenes: int = 200
    n_people_min: int = 8
    n_people_max: int = 40
    arena: float = 16.0
    speed_min: float = 0.8
    speed_max: float = 1.6
    repulsion_gain: float = 2.0
    repulsion_radius: float = 2.5
    noise_sigma: float = 0.05
    far_fraction: float = 0.5
    window: WindowConfig = WindowConfig()

    def __post_init__(self):
        if self.n_people_min < 1:
            raise ConfigError(f"gen: n_people_min must be >= 1, got {self.n_people_min}")
        if self.n_people_max < self.n_people_min:
            raise ConfigError("gen: n_people_max below n_people_min")
        if self.n_scenes < 1:
            raise ConfigError(f"gen: n_scenes must be >= 1, got {self.n_scenes}")
        if not (0.0 < self.speed_min <= self.speed_max):
            raise ConfigError("gen: need 0 < speed_min <= speed_max")
        if self.repulsion_radius <= 0 or self.repulsion_gain < 0 or self.noise_sigma < 0:
            raise ConfigError("gen: radius must be positive; gain and noise non-negative")
        if not (0.0 <= self.far_fraction <= 1.0):
            raise ConfigError(f"gen: far_fraction must lie in [0, 1], got {self.far_fraction}")


def simulate(starts, goal_velocities, steps: int, dt: float, gain: float,
             radius: float, noise_sigma: float, rng) -> np.ndarray:
    """Integrate N agents for ``steps`` positions.

    Each step the velocity is the agent's fixed goal velocity plus the sum
    of pairwise repulsions f_ij = gain * (radius - d_ij) * unit(x_i - x_j)
    over neighbors closer than ``radius``, plus isotropic Gaussian noise.
    Returns positions of shape (N, steps, 2); with gain and noise at zero
    the tracks are exact constant-velocity lines.
    """
    starts = np.asarray(starts, dtype=np.float64)
    goals = np.asarray(goal_velocities, dtype=np.float64)
    n = starts.shape[0]
    out = np.empty((n, steps, 2))
    out[:, 0] = starts
    pos = starts.copy()
    for t in range(1, steps):
        vel = goals.copy()
        if gain > 0.0 and n > 1:
            delta = pos[:, None, :] - pos[None, :, :]
            dist = np.sqrt((delta * delta).sum(axis=-1))
            np.fill_diagonal(dist, np.inf)
            close = dist < radius
            if close.any():
                safe = np.where(close, dist, radius)
                push = np.where(close, gain * (radius - safe) / np.maximum(safe, 1e-9), 0.0)
                vel += (push[:, :, None] * delta).sum(axis=1)
        if noise_sigma > 0.0:
            vel += rng.normal(0.0, noise_sigma, size=(n, 2))
        pos = pos + vel * dt
        out[:, t] = pos
    return out


def generate_synthetic(gen: GenConfig, seed: int) -> list[Scene]:
    """Build a deterministic list of scenes from (gen, seed).

    The primary walks a straight goal line; crossing neighbors are timed to
    meet that line during the prediction window, far neighbors run parallel
    beyond twice the repulsion radius. The whole scene is then rotated and
    translated at random and coordinates are rounded to 6 decimals.
    """
    rng = np.random.default_rng(seed)
    window = gen.window
    dt = window.dt
    scenes: list[Scene] = []
    width = len(str(gen.n_scenes - 1))
    for idx in range(gen.n_scenes):
        n = int(rng.integers(gen.n_people_min, gen.n_people_max + 1))
        n_far = int(round((n - 1) * gen.far_fraction))
        n_near = n - 1 - n_far

        primary_speed = rng.uniform(gen.speed_min, gen.speed_max)
        travel = primary_speed * dt * (window.t_pred - 1)
        starts = [np.array([0.0, 0.0])]
        goals = [np.array([primary_speed, 0.0])]

        neighbor_starts: list[np.ndarray] = []
        neighbor_goals: list[np.ndarray] = []
        for _ in range(n_near):
            t_e = int(rng.integers(window.t_obs + 1, window.t_pred - 1))
            meet = np.array([primary_speed * dt * t_e, 0.0]) + rng.normal(0.0, 0.3, size=2)
            speed = rng.uniform(gen.speed_min, gen.speed_max)
            angle = rng.choice([-1.0, 1.0]) * rng.uniform(math.pi / 6, 5 * math.pi / 6)
            direction = np.array([math.cos(angle), math.sin(angle)])
            neighbor_starts.append(meet - direction * speed * dt * t_e)
            neighbor_goals.append(direction * speed)
        for _ in range(n_far):
            along = rng.uniform(-0.25 * travel, 1.25 * travel)
            lateral = rng.choice([-1.0, 1.0]) * (
                2.0 * gen.repulsion_radius + 2.0 + abs(rng.normal(0.0, gen.arena / 4))
            )
            speed = rng.uniform(gen.speed_min, gen.speed_max)
            heading = rng.choice([-1.0, 1.0])
            neighbor_starts.append(np.array([along, lateral]))
            neighbor_goals.append(np.array([heading * speed, 0.0]))

        if neighbor_starts:
            order = rng.permutation(len(neighbor_starts))
            starts.extend(neighbor_starts[i] for i in order)
            goals.extend(neighbor_goals[i] for i in order)

        positions = simulate(
            np.stack(starts), np.stack(goals), window.t_pred, dt,
            gen.repulsion_gain, gen.repulsion_radius, gen.noise_sigma, rng,
        )

        theta = rng.uniform(0.0, 2.0 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        offset = rng.uniform(-gen.arena / 2, gen.arena / 2, size=2)
        positions = positions @ rot.T + offset
        positions = np.round(positions, 6)

        tracks = [PersonTrack(i + 1, positions[i]) for i in range(n)]
        scenes.append(Scene(f"syn-{seed}-{idx:0{width}d}", window.frame_rate, tracks))
    return scenes
