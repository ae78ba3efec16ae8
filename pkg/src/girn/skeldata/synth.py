"""Synthetic volleyball-like scenes for desk-scale training.

Each scene places up to 12 skeletons on a two-team court (front and back rows
of three columns per team) and a ball. Class evidence is planted in three
places, so every relation type has something to find:

* the performer's limb motion encodes the activity type (intra-person),
* teammates/opponents react to the performer: blockers jump on a spike,
  teammates approach a setter or passer, the whole team celebrates a
  winpoint (inter-person),
* the ball ends its flight at the performer, on the performing team's half
  (person-object).

With probability ``side_ambiguity`` the same event is staged on both teams,
so the poses no longer reveal which side performed and only the ball does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore.rng import RngStream
from .types import (ACTION_LABELS, ACTIVITY_TYPES, GroupSample, JointTrack,
                    PersonPose, flip_team)

SYNTH_JOINTS = ("Nose", "Neck", "MidHip", "LWrist", "RWrist", "LAnkle", "RAnkle")

# Offsets from MidHip for a left-team player, image y pointing down.
_TEMPLATE = {
    "Nose": (4.0, -62.0), "Neck": (0.0, -48.0), "MidHip": (0.0, 0.0),
    "LWrist": (7.0, 2.0), "RWrist": (-7.0, 2.0),
    "LAnkle": (5.0, 50.0), "RAnkle": (-5.0, 50.0),
}
_UPPER = ("Nose", "Neck", "MidHip", "LWrist", "RWrist")

NET_X = 640.0
ROW_X = {"front": 125.0, "back": 315.0}
COLUMN_Y = (300.0, 420.0, 540.0)
COLUMNS = ("exterior_a", "middle", "exterior_b")

_ACTION = {name: i for i, name in enumerate(ACTION_LABELS)}
_PERFORMER_ACTION = {"set": "setting", "spike": "spiking", "pass": "digging",
                     "winpoint": "jumping"}


@dataclass
class SynthConfig:
    n_persons: int = 12
    n_classes: int = 8
    n_train: int = 2000
    n_val: int = 250
    n_test: int = 250
    pose_noise_px: float = 1.5
    ball_noise_px: float = 6.0
    side_ambiguity: float = 0.3
    camera_pan_px: float = 3.0
    missing_rate: float = 0.02
    frame_count: int = 41
    resolution: tuple = (1280, 720)

    def validate(self):
        if not 2 <= self.n_persons <= 12:
            raise ValueError(f"n_persons must be in [2, 12], got {self.n_persons}")
        if self.n_classes not in (2, 4, 6, 8):
            raise ValueError(f"n_classes must be one of 2, 4, 6, 8, got {self.n_classes}")
        for split in ("n_train", "n_val", "n_test"):
            if getattr(self, split) <= 0:
                raise ValueError(f"{split} must be positive")
        if not 0 <= self.side_ambiguity <= 1:
            raise ValueError("side_ambiguity must lie in [0, 1]")
        if self.frame_count < 3:
            raise ValueError("frame_count must be >= 3")


def slot_id(team: str, row: str, column: int) -> str:
    return f"{team}-{row}-{column}"


def _slot_order(n_persons: int, gen) -> list:
    """Slots kept for a scene; back-row slots are dropped first."""
    fronts = [("left", "front", c) for c in range(3)] + [("right", "front", c) for c in range(3)]
    backs = [("left", "back", c) for c in range(3)] + [("right", "back", c) for c in range(3)]
    if n_persons <= 6:
        keep = [fronts[i] for i in (0, 3, 1, 4, 2, 5)][:n_persons]
    else:
        pick = gen.choice(len(backs), size=n_persons - 6, replace=False)
        keep = fronts + [backs[i] for i in sorted(pick)]
    return keep


def _bump(u):
    return np.where((u >= 0) & (u <= 1), np.sin(np.pi * np.clip(u, 0, 1)), 0.0)


def _ramp(u):
    return np.clip(u, 0, 1)


class _Player:
    def __init__(self, team, row, column, base, scale, frames, gen):
        self.team, self.row, self.column = team, row, column
        self.forward = 1.0 if team == "left" else -1.0
        self.action = "standing"
        t = np.arange(frames)
        sway = 1.5 * np.sin(2 * np.pi * gen.uniform(0.02, 0.06) * t + gen.uniform(0, 2 * np.pi))
        self.root = np.tile(base, (frames, 1)).astype(np.float64)
        self.root[:, 0] += sway
        self.offsets = {}
        for name, (dx, dy) in _TEMPLATE.items():
            if self.team == "right":
                # mirror image of the left-team template, anatomical sides swapped
                src = {"LWrist": "RWrist", "RWrist": "LWrist",
                       "LAnkle": "RAnkle", "RAnkle": "LAnkle"}.get(name, name)
                dx, dy = -_TEMPLATE[src][0], _TEMPLATE[src][1]
            self.offsets[name] = np.tile((dx * scale, dy * scale), (frames, 1)).astype(np.float64)

    def lift(self, dy):
        for name in self.offsets:
            self.offsets[name][:, 1] += dy

    def move(self, dx, dy):
        self.root[:, 0] += dx
        self.root[:, 1] += dy

    def tracks(self):
        return {name: self.root + off for name, off in self.offsets.items()}


def _stage_event(kind, team, players, frames, gen):
    """Apply the motion pattern of activity ``kind`` by ``team``; returns the performer."""
    t = np.arange(frames, dtype=np.float64)
    own = [p for p in players if p.team == team]
    opp = [p for p in players if p.team != team]
    if not own:
        return None
    length = gen.uniform(13, 19)
    t0 = gen.uniform(0.2, 0.4) * frames
    u = (t - t0) / length
    b = _bump(u)

    def pick(candidates):
        return candidates[gen.integers(len(candidates))] if candidates else own[gen.integers(len(own))]

    if kind == "set":
        perf = pick([p for p in own if p.row == "front" and p.column == 1])
        for w in ("LWrist", "RWrist"):
            perf.offsets[w][:, 1] -= 80.0 * b
            perf.offsets[w][:, 0] -= 0.7 * perf.offsets[w][:, 0] * b
        perf.offsets["LWrist"][:, 1] -= 6.0 * b * np.sin(3 * np.pi * np.clip(u, 0, 1))
        for p in own:
            if p is not perf and p.row == "front":
                d = perf.root[0] - p.root[0]
                p.move(0.25 * d[0] * _ramp(u), 0.25 * d[1] * _ramp(u))
                p.action = "moving"
    elif kind == "spike":
        perf = pick([p for p in own if p.row == "front"])
        perf.move(0.0, -36.0 * b)
        perf.offsets["RWrist"][:, 1] -= 95.0 * b
        perf.offsets["RWrist"][:, 0] += perf.forward * 40.0 * b * np.clip(2 * u - 1, 0, 1)
        perf.offsets["LWrist"][:, 1] -= 45.0 * b
        ub = (t - t0 - 2.0) / length
        for p in opp:
            if p.row == "front":
                bb = _bump(ub)
                p.move(0.0, -28.0 * bb)
                for w in ("LWrist", "RWrist"):
                    p.offsets[w][:, 1] -= 88.0 * bb
                p.action = "blocking"
    elif kind == "pass":
        perf = pick([p for p in own if p.row == "back"])
        for name in _UPPER:
            perf.offsets[name][:, 1] += 16.0 * b
        perf.move(perf.forward * 12.0 * b, 0.0)
        for w in ("LWrist", "RWrist"):
            perf.offsets[w][:, 0] = perf.offsets[w][:, 0] * (1 - b) + perf.forward * 24.0 * b
            perf.offsets[w][:, 1] += 6.0 * b
        setter = [p for p in own if p.row == "front" and p.column == 1 and p is not perf]
        for p in setter:
            d = perf.root[0] - p.root[0]
            p.move(0.3 * d[0] * _ramp(u), 0.3 * d[1] * _ramp(u))
            p.action = "moving"
    elif kind == "winpoint":
        perf = pick(own)
        for p in own:
            lag = gen.uniform(-2, 2)
            uu = (t - t0 - lag) / length
            bb = _bump(uu)
            wave = np.sin(6 * np.pi * np.clip(uu, 0, 1))
            for w in ("LWrist", "RWrist"):
                p.offsets[w][:, 1] -= 70.0 * bb
                p.offsets[w][:, 0] += 10.0 * wave * bb
            p.move(0.0, -8.0 * np.abs(np.sin(4 * np.pi * np.clip(uu, 0, 1))) * bb)
            p.action = "moving"
    else:
        raise ValueError(f"unknown activity {kind!r}")
    perf.action = _PERFORMER_ACTION[kind]
    return perf


def _scene(label: int, cfg: SynthConfig, gen, clip_id: str) -> GroupSample:
    frames = cfg.frame_count
    n_types = len(ACTIVITY_TYPES)
    side, kind = divmod(label, n_types)
    team = ("left", "right")[side]
    kind = ACTIVITY_TYPES[kind]

    shift = np.array([gen.uniform(-60, 60), gen.uniform(-30, 30)])
    players = []
    for tm, row, col in _slot_order(cfg.n_persons, gen):
        sign = -1.0 if tm == "left" else 1.0
        base = np.array([NET_X + sign * ROW_X[row], COLUMN_Y[col]])
        base += gen.uniform(-20, 20, size=2) + shift
        players.append(_Player(tm, row, col, base, gen.uniform(0.9, 1.1), frames, gen))

    perf = _stage_event(kind, team, players, frames, gen)
    if gen.random() < cfg.side_ambiguity:
        _stage_event(kind, flip_team(team), players, frames, gen)

    # ball flies in from the far half and lands at the performer's hands
    t = np.arange(frames, dtype=np.float64)
    s = t / (frames - 1)
    target_team_sign = -1.0 if team == "left" else 1.0
    start = np.array([NET_X - target_team_sign * gen.uniform(60, 330), gen.uniform(250, 550)])
    tracks_perf = perf.tracks()
    hand = 0.5 * (tracks_perf["LWrist"][-1] + tracks_perf["RWrist"][-1])
    end = hand + gen.normal(0, 15, size=2)
    ball = start[None] * (1 - s[:, None]) + end[None] * s[:, None]
    ball[:, 1] -= gen.uniform(60, 160) * np.sin(np.pi * s)
    ball += gen.normal(0, cfg.ball_noise_px, size=ball.shape)

    pan_v = gen.uniform(-cfg.camera_pan_px, cfg.camera_pan_px, size=2)
    pan = np.cumsum(pan_v + gen.normal(0, 0.3, size=(frames, 2)), axis=0)
    pan -= pan[0]

    persons = []
    for p in players:
        joints = {}
        for name, xy in p.tracks().items():
            xy = xy + pan + gen.normal(0, cfg.pose_noise_px, size=xy.shape)
            valid = np.ones(frames, dtype=bool)
            if gen.random() < cfg.missing_rate:
                glen = int(gen.integers(1, 5))
                start_f = int(gen.integers(1, frames - glen - 1))
                valid[start_f:start_f + glen] = False
            joints[name] = JointTrack(np.round(xy, 2).reshape(-1), valid)
        persons.append(PersonPose(joints, p.team, _ACTION[p.action],
                                  slot_id(p.team, p.row, p.column)))
    ball_track = JointTrack(np.round(ball + pan, 2).reshape(-1), np.ones(frames, dtype=bool))
    return GroupSample(persons, label, cfg.resolution, ball_track, clip_id)


def _labels(n: int, n_classes: int, gen) -> np.ndarray:
    per_side = n_classes // 2
    classes = np.array([side * len(ACTIVITY_TYPES) + k for side in (0, 1) for k in range(per_side)])
    labels = classes[np.arange(n) % n_classes]
    return labels[gen.permutation(n)]


def synth_generate(config: SynthConfig, rng: RngStream) -> dict:
    """Train/val/test lists of raw (pixel-space) samples, deterministic in ``rng``."""
    config.validate()
    out = {}
    for k, split in enumerate(("train", "val", "test")):
        stream = rng.fork(k + 1)
        n = getattr(config, f"n_{split}")
        gen = stream.generator()
        labels = _labels(n, config.n_classes, gen)
        out[split] = [_scene(int(lab), config, gen, f"{split}-{i:05d}")
                      for i, lab in enumerate(labels)]
    return out


def ball_side_baseline(sample: GroupSample) -> int:
    """Side index (0 left, 1 right) of the team nearest the ball's final position."""
    if sample.ball is None:
        raise ValueError("sample has no ball track")
    last = sample.ball.xy[sample.ball.valid][-1]
    centroids = {}
    for p in sample.persons:
        xy = np.concatenate([t.xy[t.valid] for t in p.joints.values()])
        centroids.setdefault(p.team, []).append(xy.mean(axis=0))
    dist = {team: np.linalg.norm(np.mean(c, axis=0) - last) for team, c in centroids.items()}
    return 0 if dist.get("left", np.inf) <= dist.get("right", np.inf) else 1
