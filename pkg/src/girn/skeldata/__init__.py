"""Skeleton clips: data model, clip I/O, preprocessing, synthetic scenes."""

from .io import ClipFormatError, clip_from_dict, clip_to_dict, dataset_digest, load_clip, save_clip
from .preprocess import (interpolate_gaps, mirror, preprocess, recenter, remove_camera_motion,
                         rescale, subsample_frames)
from .synth import SynthConfig, ball_side_baseline, synth_generate
from .types import (ACTION_LABELS, ACTIVITY_TYPES, GROUP_LABELS, JOINT_NAMES, N_ACTION,
                    N_GROUP, GroupSample, JointTrack, ObjectTrack, PersonPose,
                    flip_group_label)

__all__ = [
    "ClipFormatError", "clip_from_dict", "clip_to_dict", "dataset_digest", "load_clip",
    "save_clip", "interpolate_gaps", "mirror", "preprocess", "recenter",
    "remove_camera_motion", "rescale", "subsample_frames", "SynthConfig",
    "ball_side_baseline", "synth_generate", "ACTION_LABELS", "ACTIVITY_TYPES",
    "GROUP_LABELS", "JOINT_NAMES", "N_ACTION", "N_GROUP", "GroupSample", "JointTrack",
    "ObjectTrack", "PersonPose", "flip_group_label",
]
