from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# OpenPose BODY_25 keypoint names.
JOINT_NAMES = (
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow",
    "LWrist", "MidHip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle",
    "REye", "LEye", "REar", "LEar", "LBigToe", "LSmallToe", "LHeel",
    "RBigToe", "RSmallToe", "RHeel",
)

ACTIVITY_TYPES = ("set", "spike", "pass", "winpoint")
SIDES = ("l", "r")
GROUP_LABELS = tuple(f"{s}_{a}" for s in SIDES for a in ACTIVITY_TYPES)
ACTION_LABELS = ("waiting", "setting", "digging", "falling", "spiking",
                 "blocking", "jumping", "moving", "standing")
TEAMS = ("left", "right")

N_GROUP = len(GROUP_LABELS)
N_ACTION = len(ACTION_LABELS)

_GROUP_ALIASES = {"l-pass": "l_pass", "r-pass": "r_pass"}


def mirrored_joint_name(name: str) -> str:
    if name.startswith("L") and name[1:2].isupper():
        return "R" + name[1:]
    if name.startswith("R") and name[1:2].isupper():
        return "L" + name[1:]
    return name


def group_label_index(name: str) -> int:
    key = _GROUP_ALIASES.get(name, name)
    try:
        return GROUP_LABELS.index(key)
    except ValueError:
        raise ValueError(f"unknown group label {name!r}") from None


def action_label_index(name: str) -> int:
    try:
        return ACTION_LABELS.index(name)
    except ValueError:
        raise ValueError(f"unknown action label {name!r}") from None


def flip_group_label(index: int) -> int:
    """Swap the left/right side of a composite group label, keeping the activity."""
    n = len(ACTIVITY_TYPES)
    return (index + n) % (2 * n)


def flip_team(team: str) -> str:
    return "right" if team == "left" else "left"


@dataclass
class JointTrack:
    """One keypoint over T frames: flat (x1, y1, ..., xT, yT) plus validity.

    Invalid frames are stored as (0, 0).
    """

    coords: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.coords = np.array(self.coords, dtype=np.float64).reshape(-1)
        self.valid = np.array(self.valid, dtype=bool).reshape(-1)
        if self.coords.size != 2 * self.valid.size:
            raise ValueError(f"coords length {self.coords.size} != 2 x {self.valid.size} frames")
        xy = self.coords.reshape(-1, 2)
        xy[~self.valid] = 0.0

    @property
    def frames(self) -> int:
        return self.valid.size

    @property
    def xy(self) -> np.ndarray:
        return self.coords.reshape(-1, 2)

    @classmethod
    def from_xy(cls, xy, valid=None) -> "JointTrack":
        xy = np.asarray(xy, dtype=np.float64)
        if valid is None:
            valid = np.ones(len(xy), dtype=bool)
        return cls(xy.reshape(-1).copy(), np.asarray(valid, dtype=bool).copy())

    @classmethod
    def trusted(cls, coords: np.ndarray, valid: np.ndarray) -> "JointTrack":
        """Build without validation; caller guarantees the layout contract."""
        obj = object.__new__(cls)
        obj.coords, obj.valid = coords, valid
        return obj

    def copy(self) -> "JointTrack":
        return JointTrack.trusted(self.coords.copy(), self.valid.copy())

    def __eq__(self, other):
        if not isinstance(other, JointTrack):
            return NotImplemented
        return np.array_equal(self.coords, other.coords) and np.array_equal(self.valid, other.valid)


# Same layout contract as a joint track.
ObjectTrack = JointTrack


@dataclass
class PersonPose:
    joints: dict
    team: str
    action_label: int | None = None
    person_id: str = ""

    def __post_init__(self):
        if self.team not in TEAMS:
            raise ValueError(f"unknown team {self.team!r}")
        lengths = {t.frames for t in self.joints.values()}
        if len(lengths) > 1:
            raise ValueError(f"person {self.person_id!r}: joint tracks disagree on length {sorted(lengths)}")
        for name in self.joints:
            if name not in JOINT_NAMES:
                raise ValueError(f"unknown joint name {name!r}")
        if self.action_label is not None and not 0 <= self.action_label < N_ACTION:
            raise ValueError(f"action label {self.action_label} out of range")

    @property
    def frames(self) -> int:
        return next(iter(self.joints.values())).frames

    def copy(self) -> "PersonPose":
        return PersonPose({k: v.copy() for k, v in self.joints.items()}, self.team,
                          self.action_label, self.person_id)


@dataclass
class GroupSample:
    persons: list
    group_label: int
    resolution: tuple = (1280, 720)
    ball: JointTrack | None = None
    clip_id: str = ""
    normalized: bool = field(default=False, compare=False)

    def __post_init__(self):
        if len(self.persons) > 12:
            raise ValueError(f"at most 12 persons per sample, got {len(self.persons)}")
        if not 0 <= self.group_label < N_GROUP:
            raise ValueError(f"group label {self.group_label} out of range")
        self.resolution = tuple(int(v) for v in self.resolution)
        lengths = {p.frames for p in self.persons}
        if self.ball is not None:
            lengths.add(self.ball.frames)
        if len(lengths) > 1:
            raise ValueError(f"tracks disagree on frame count: {sorted(lengths)}")

    @property
    def frames(self) -> int:
        if self.persons:
            return self.persons[0].frames
        return self.ball.frames if self.ball is not None else 0

    def copy(self) -> "GroupSample":
        return replace(self, persons=[p.copy() for p in self.persons],
                       ball=None if self.ball is None else self.ball.copy())

    def tracks(self):
        """All joint tracks in person-then-joint order."""
        for p in self.persons:
            yield from p.joints.values()
