"""Reading and writing the ``clip.json`` annotation layout."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .types import (ACTION_LABELS, GROUP_LABELS, JOINT_NAMES, TEAMS, GroupSample,
                    JointTrack, PersonPose, action_label_index, group_label_index)

CLIP_FILE = "clip.json"
FRAME_COUNT = 41


class ClipFormatError(ValueError):
    pass


def _track_from_triples(triples, frames: int, where: str) -> JointTrack:
    arr = np.asarray(triples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ClipFormatError(f"{where}: expected a list of [x, y, valid] triples")
    if len(arr) != frames:
        raise ClipFormatError(f"{where}: {len(arr)} frames, expected {frames}")
    return JointTrack(arr[:, :2].reshape(-1), arr[:, 2] != 0)


def _triples(track: JointTrack) -> list:
    return [[float(x), float(y), int(v)] for (x, y), v in zip(track.xy, track.valid)]


def clip_from_dict(doc: dict, clip_id: str = "") -> GroupSample:
    try:
        frames = int(doc["frame_count"])
        label = doc["group_label"]
        resolution = tuple(doc["resolution"])
        persons_doc = doc["persons"]
    except (KeyError, TypeError) as exc:
        raise ClipFormatError(f"clip {clip_id!r}: missing field {exc}") from None
    try:
        group = group_label_index(label)
    except ValueError:
        raise ClipFormatError(f"clip {clip_id!r}: unknown group label {label!r}") from None
    persons = []
    for i, pd in enumerate(persons_doc):
        pid = str(pd.get("id", i))
        team = pd.get("team")
        if team not in TEAMS:
            raise ClipFormatError(f"person {pid!r}: unknown team {team!r}")
        action = pd.get("action")
        if action is None:
            action_idx = None
        elif action in ACTION_LABELS:
            action_idx = action_label_index(action)
        else:
            raise ClipFormatError(f"person {pid!r}: unknown action {action!r}")
        joints = {}
        for name, triples in pd.get("joints", {}).items():
            if name not in JOINT_NAMES:
                raise ClipFormatError(f"person {pid!r}: unknown joint {name!r}")
            joints[name] = _track_from_triples(triples, frames, f"person {pid!r} joint {name}")
        if not joints:
            raise ClipFormatError(f"person {pid!r}: no joints")
        persons.append(PersonPose(joints, team, action_idx, pid))
    ball = doc.get("ball")
    ball_track = None if ball is None else _track_from_triples(ball, frames, "ball")
    try:
        return GroupSample(persons, group, resolution, ball_track, clip_id)
    except ValueError as exc:
        raise ClipFormatError(f"clip {clip_id!r}: {exc}") from None


def clip_to_dict(sample: GroupSample) -> dict:
    doc = {
        "group_label": GROUP_LABELS[sample.group_label],
        "frame_count": sample.frames,
        "resolution": list(sample.resolution),
        "persons": [
            {
                "id": p.person_id,
                "team": p.team,
                "action": None if p.action_label is None else ACTION_LABELS[p.action_label],
                "joints": {name: _triples(t) for name, t in p.joints.items()},
            }
            for p in sample.persons
        ],
    }
    if sample.ball is not None:
        doc["ball"] = _triples(sample.ball)
    return doc


def load_clip(annotation_path) -> GroupSample:
    """Load a clip from its directory (or directly from its ``clip.json``)."""
    path = Path(annotation_path)
    if path.is_dir():
        path = path / CLIP_FILE
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{path}: malformed JSON ({exc})") from None
    return clip_from_dict(doc, clip_id=path.parent.name)


def clip_bytes(sample: GroupSample) -> bytes:
    return json.dumps(clip_to_dict(sample), separators=(",", ":"), sort_keys=True).encode("utf-8")


def save_clip(sample: GroupSample, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / CLIP_FILE
    path.write_bytes(clip_bytes(sample))
    return path


def dataset_digest(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(clip_bytes(s))
    return h.hexdigest()
