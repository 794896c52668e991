from .spec import ACTIONS, NUM_ACTIONS, ActionSpec, DomainSpec, sample_action, validate_action
from .render import LabeledBox, Sprite, VideoClip, plan_clip, render_background, render_clip, sprite_mask
from .dataset import (
    SPLITS,
    Dataset,
    build_dataset,
    generate_domain,
    load_dataset,
    read_frames_bin,
    save_dataset,
    split_counts,
    verify_dataset,
    write_frames_bin,
)
from .gap import GapReport, domain_gap_report

__all__ = [
    "ACTIONS",
    "NUM_ACTIONS",
    "ActionSpec",
    "DomainSpec",
    "sample_action",
    "validate_action",
    "LabeledBox",
    "Sprite",
    "VideoClip",
    "plan_clip",
    "render_background",
    "render_clip",
    "sprite_mask",
    "SPLITS",
    "Dataset",
    "build_dataset",
    "generate_domain",
    "load_dataset",
    "read_frames_bin",
    "save_dataset",
    "split_counts",
    "verify_dataset",
    "write_frames_bin",
    "GapReport",
    "domain_gap_report",
]
