"""Joint subsets, court positions, connectivity graphs and pair features."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np

from .skeldata.types import TEAMS, GroupSample

JOINT_SUBSETS = {
    2: ("LWrist", "RWrist"),
    3: ("LWrist", "RWrist", "Neck"),
    4: ("LWrist", "RWrist", "LAnkle", "RAnkle"),
    5: ("LWrist", "RWrist", "LAnkle", "RAnkle", "Neck"),
    6: ("LWrist", "RWrist", "LAnkle", "RAnkle", "Neck", "MidHip"),
    7: ("LWrist", "RWrist", "LAnkle", "RAnkle", "Neck", "MidHip", "Nose"),
}

STRATEGIES = ("full", "dense", "moderate", "sparse")
ROWS = ("front", "back")
COLUMNS = ("exterior_a", "middle", "exterior_b")
OBJECT = "object"


class MissingObjectError(ValueError):
    """Raised when a person-object relation is requested for a sample without a ball."""


@dataclass(frozen=True)
class JointSubset:
    kind: int
    members: tuple

    @classmethod
    def of(cls, kind) -> "JointSubset":
        k = int(str(kind).lstrip("Jj"))
        if k not in JOINT_SUBSETS:
            raise ValueError(f"unknown joint subset {kind!r}; expected one of 2..7")
        return cls(k, JOINT_SUBSETS[k])

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class Slot:
    team: str
    row: str
    column: str
    person: int | None = None

    @property
    def filled(self) -> bool:
        return self.person is not None

    @property
    def key(self) -> tuple:
        return TEAMS.index(self.team), ROWS.index(self.row), COLUMNS.index(self.column)


@dataclass
class CourtAssignment:
    slots: list

    def slot_of(self, person: int) -> Slot:
        for s in self.slots:
            if s.person == person:
                return s
        raise KeyError(f"person {person} has no slot")

    @property
    def filled(self) -> list:
        return [s for s in self.slots if s.filled]


def _person_x_y(person) -> np.ndarray:
    track = person.joints.get("MidHip")
    if track is not None and track.valid.any():
        return track.xy[track.valid].mean(axis=0)
    pts = [t.xy[t.valid] for t in person.joints.values() if t.valid.any()]
    if not pts:
        raise ValueError(f"person {person.person_id!r} has no valid coordinates")
    return np.concatenate(pts).mean(axis=0)


def _assign_back_columns(back_ys, column_ys):
    best, best_cost = None, np.inf
    for cols in permutations(range(3), len(back_ys)):
        cost = sum(abs(y - column_ys[c]) for y, c in zip(back_ys, cols))
        if cost < best_cost - 1e-12:
            best, best_cost = cols, cost
    return best


def assign_positions(sample: GroupSample) -> CourtAssignment:
    """Front/back rows from distance to the inter-team boundary, columns by y."""
    centers = np.array([_person_x_y(p) for p in sample.persons])
    teams = {t: [i for i, p in enumerate(sample.persons) if p.team == t] for t in TEAMS}
    for t, members in teams.items():
        if len(members) > 6:
            raise ValueError(f"team {t!r} has {len(members)} persons, at most 6 allowed")
    present = [t for t in TEAMS if teams[t]]
    if len(present) == 2:
        boundary = 0.5 * sum(centers[teams[t]][:, 0].mean() for t in TEAMS)
    else:
        # one team only: the net side is unknown; use the team's own extent
        boundary = centers[teams[present[0]]][:, 0].max() if present[0] == "left" \
            else centers[teams[present[0]]][:, 0].min()
    slots = []
    for t in TEAMS:
        members = teams[t]
        order = sorted(members, key=lambda i: (abs(centers[i, 0] - boundary), centers[i, 1]))
        front = sorted(order[:3], key=lambda i: centers[i, 1])
        back = order[3:]
        if len(front) == 3:
            column_ys = [centers[i, 1] for i in front]
            front_cols = [0, 1, 2]
        else:
            front_cols = list(range(len(front)))
            column_ys = [centers[i, 1] for i in front] + [np.inf] * (3 - len(front))
        for i, c in zip(front, front_cols):
            slots.append(Slot(t, "front", COLUMNS[c], i))
        back_sorted = sorted(back, key=lambda i: centers[i, 1])
        cols = _assign_back_columns([centers[i, 1] for i in back_sorted], column_ys) or ()
        used = dict(zip(cols, back_sorted))
        for c in range(3):
            slots.append(Slot(t, "back", COLUMNS[c], used.get(c)))
    slots.sort(key=lambda s: s.key)
    return CourtAssignment(slots)


def canonical_court() -> CourtAssignment:
    """The full 12-slot court with person ids 0..11 in slot order."""
    slots, i = [], 0
    for t in TEAMS:
        for r in ROWS:
            for c in COLUMNS:
                slots.append(Slot(t, r, c, i))
                i += 1
    return CourtAssignment(slots)


def _linked(a: Slot, b: Slot, strategy: str) -> bool:
    if strategy == "full":
        return True
    same_team = a.team == b.team
    if not same_team and not (a.row == "front" and b.row == "front"):
        return False
    if strategy == "dense":
        return True
    ext = {"exterior_a", "exterior_b"}
    if {a.column, b.column} == ext:
        return False
    if strategy == "moderate":
        return True
    # sparse: a middle player loses its diagonals (exterior column, other row or across the net)
    one_middle = (a.column == "middle") != (b.column == "middle")
    if one_middle and not (same_team and a.row == b.row):
        return False
    return True


def connected_set(p: int, assignment: CourtAssignment, strategy: str) -> list:
    """Persons connected to ``p``, ordered by court slot."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown connectivity {strategy!r}; expected one of {STRATEGIES}")
    try:
        me = assignment.slot_of(p)
    except KeyError:
        raise ValueError(f"person {p} does not occupy a filled slot") from None
    return [s.person for s in assignment.filled
            if s.person != p and _linked(me, s, strategy)]


def enumerate_intra_pairs(subset: JointSubset) -> list:
    if len(subset) == 0:
        raise ValueError("empty joint subset")
    return list(combinations(range(len(subset)), 2))


def enumerate_inter_pairs(p: int, connected, subset: JointSubset) -> list:
    J = len(subset)
    return [(i, k, q) for q in connected for i in range(J) for k in range(J)]


def enumerate_object_pairs(subset: JointSubset, obj=True) -> list:
    if obj is None:
        raise MissingObjectError("person-object pairs need an object track")
    return [(i, OBJECT) for i in range(len(subset))]


def feature_width(frames: int) -> int:
    return 9 * frames - 4


def pair_features(a, b) -> np.ndarray:
    """[coords_a | coords_b | per-frame distance | motion_a | motion_b]."""
    a = np.asarray(getattr(a, "coords", a), dtype=np.float64).reshape(-1)
    b = np.asarray(getattr(b, "coords", b), dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size % 2:
        raise ValueError(f"track lengths differ or are odd: {a.size} vs {b.size}")
    return pair_features_batch(a.reshape(1, -1, 2), b.reshape(1, -1, 2))[0]


def pair_features_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised :func:`pair_features` over leading axis; inputs (P, T, 2)."""
    P, T, _ = a.shape
    dist = np.sqrt(((a - b) ** 2).sum(axis=-1))
    ma = np.diff(a, axis=1).reshape(P, -1)
    mb = np.diff(b, axis=1).reshape(P, -1)
    return np.concatenate([a.reshape(P, -1), b.reshape(P, -1), dist, ma, mb], axis=1)


def inter_pair_count(assignment: CourtAssignment, strategy: str, subset: JointSubset) -> int:
    J = len(subset)
    return sum(len(connected_set(s.person, assignment, strategy)) * J * J
               for s in assignment.filled)


def pair_counts(assignment: CourtAssignment, strategy: str, subset: JointSubset) -> dict:
    n = len(assignment.filled)
    return {
        "intra": n * len(enumerate_intra_pairs(subset)),
        "inter": inter_pair_count(assignment, strategy, subset),
        "object": n * len(subset),
    }
