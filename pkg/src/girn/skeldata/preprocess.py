from __future__ import annotations

import numpy as np

from .types import (GroupSample, JointTrack, PersonPose, flip_group_label, flip_team,
                    mirrored_joint_name)

MAX_GAP = 5
RAW_FRAMES = 41


def interpolate_gaps(track: JointTrack, max_gap: int = MAX_GAP) -> JointTrack:
    """Linearly fill interior invalid runs no longer than ``max_gap`` frames."""
    valid = track.valid
    if not valid.any():
        raise ValueError("cannot interpolate a track with no valid frames")
    xy = track.xy.copy()
    out_valid = valid.copy()
    idx = np.flatnonzero(valid)
    for left, right in zip(idx[:-1], idx[1:]):
        gap = right - left - 1
        if 0 < gap <= max_gap:
            w = (np.arange(1, gap + 1) / (gap + 1))[:, None]
            xy[left + 1:right] = (1 - w) * xy[left] + w * xy[right]
            out_valid[left + 1:right] = True
    return JointTrack(xy.reshape(-1), out_valid)


def _map_tracks(sample: GroupSample, fn, ball_fn=None) -> GroupSample:
    persons = [PersonPose({k: fn(t) for k, t in p.joints.items()}, p.team, p.action_label,
                          p.person_id) for p in sample.persons]
    ball = sample.ball
    if ball is not None:
        ball = (ball_fn or fn)(ball)
    out = GroupSample(persons, sample.group_label, sample.resolution, ball, sample.clip_id)
    out.normalized = sample.normalized
    return out


def _shift(track: JointTrack, offset) -> JointTrack:
    xy = np.where(track.valid[:, None], track.xy - offset, 0.0)
    return JointTrack.trusted(xy.reshape(-1), track.valid)


def _stack(sample: GroupSample):
    tracks = list(sample.tracks())
    xy = np.stack([t.xy for t in tracks])
    valid = np.stack([t.valid for t in tracks])
    return xy, valid


def estimate_camera_path(sample: GroupSample) -> np.ndarray:
    """Cumulative per-frame translation, (T, 2), from median joint displacement."""
    xy, valid = _stack(sample)
    frames = xy.shape[1]
    steps = np.zeros((frames, 2))
    for t in range(1, frames):
        both = valid[:, t] & valid[:, t - 1]
        if both.any():
            steps[t] = np.median(xy[both, t] - xy[both, t - 1], axis=0)
        else:
            steps[t] = steps[t - 1]
    return np.cumsum(steps, axis=0)


def remove_camera_motion(sample: GroupSample) -> GroupSample:
    path = estimate_camera_path(sample)
    return _map_tracks(sample, lambda t: _shift(t, path))


def pose_centroid(sample: GroupSample) -> np.ndarray:
    xy, valid = _stack(sample)
    if not valid.any():
        raise ValueError("sample has no valid joint coordinates")
    return xy[valid].mean(axis=0)


def recenter(sample: GroupSample) -> GroupSample:
    """Move the origin to the mean of all valid joint coordinates in the clip."""
    c = pose_centroid(sample)
    return _map_tracks(sample, lambda t: _shift(t, c))


def rescale(sample: GroupSample) -> GroupSample:
    """Divide coordinates by the frame height (resolution independence)."""
    h = float(sample.resolution[1])
    out = _map_tracks(sample, lambda t: JointTrack.trusted(t.coords / h, t.valid))
    out.normalized = True
    return out


def subsample_frames(sample: GroupSample, stride: int = 2,
                     expected_frames: int | None = RAW_FRAMES) -> GroupSample:
    if expected_frames is not None and sample.frames != expected_frames:
        raise ValueError(f"expected {expected_frames} frames, got {sample.frames}")

    def pick(t: JointTrack) -> JointTrack:
        return JointTrack.trusted(t.xy[::stride].reshape(-1), t.valid[::stride].copy())

    return _map_tracks(sample, pick)


def mirror(sample: GroupSample) -> GroupSample:
    """Horizontal flip of a recentered sample.

    x is negated, anatomical left/right joints swap names, teams swap, and the
    group label's side is inverted while its activity is kept.
    """
    def flip(t: JointTrack) -> JointTrack:
        coords = t.coords.copy()
        coords[0::2] = np.where(t.valid, -coords[0::2], 0.0)
        return JointTrack.trusted(coords, t.valid)

    persons = [
        PersonPose({mirrored_joint_name(k): flip(t) for k, t in p.joints.items()},
                   flip_team(p.team), p.action_label, p.person_id)
        for p in sample.persons
    ]
    ball = None if sample.ball is None else flip(sample.ball)
    out = GroupSample(persons, flip_group_label(sample.group_label), sample.resolution, ball,
                      sample.clip_id)
    out.normalized = sample.normalized
    return out


def _interp_or_keep(track: JointTrack, max_gap: int) -> JointTrack:
    return interpolate_gaps(track, max_gap) if track.valid.any() else track.copy()


def preprocess(sample: GroupSample, max_gap: int = MAX_GAP, stride: int = 2,
               expected_frames: int | None = RAW_FRAMES,
               interpolate_ball: bool = False) -> GroupSample:
    """interpolate -> camera motion removal -> recenter -> rescale -> subsample."""
    ball_fn = (lambda t: _interp_or_keep(t, max_gap)) if interpolate_ball else (lambda t: t.copy())
    out = _map_tracks(sample, lambda t: _interp_or_keep(t, max_gap), ball_fn)
    out = remove_camera_motion(out)
    out = recenter(out)
    out = rescale(out)
    return subsample_frames(out, stride, expected_frames)
