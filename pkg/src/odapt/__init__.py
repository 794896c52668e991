"""Desk-scale lab for object-driven video domain adaptation.

Train an object-centric action recognizer on a synthetic source domain,
then adapt it to a shifted domain by fine-tuning only the class-agnostic
box detector on a sparse set of annotated frames, keeping the recognizer
and object encoder bit-frozen.
"""

from .boxes import Box, BoxPrediction, MatchResult, detector_loss, iou, iou_matrix, match_boxes
from .bundle import ModelBundle, load_bundle, save_bundle
from .detector import (
    DetectorNet,
    DetectorQuality,
    TrainConfig,
    detect,
    detector_quality,
    finetune_detector,
    train_detector,
)
from .recognizer import (
    ObjectEncoder,
    RecognizerNet,
    boxes_for_clip,
    crop,
    encode_objects,
    freeze_fingerprint,
    recognize,
    train_source,
)
from .adapt import (
    AdaptationSet,
    ExperimentResult,
    FrameAnnotation,
    NoiseModel,
    auto_label,
    evaluate_top1,
    map_frames_to_clips,
    run_fully_supervised,
    run_odapt,
    run_source_only,
    sample_sparse_frames,
)
from .study import StudyConfig, default_study_config, load_config, run_matrix

__version__ = "0.1.0"
